"""Per-position comparison machinery between two margin audits.

All operations take a baseline and a polished audit of the *same*
positions (equal counts, matching position indices and targets) and
aggregate position-level changes:

* churn: top-1 prediction changed, split into wrong-to-right and
  right-to-wrong flips;
* runner-up rotation: top-1 kept, top-2 changed;
* band accuracy: accuracy within half-open margin bands;
* expansion: the distribution of per-position margin deltas;
* frequency buckets: flips stratified by target-token frequency.

Every report is a pure aggregate, invariant under permuting positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError
from .margins import MarginRecord, nearest_rank_quantile

__all__ = [
    "ChurnReport",
    "RotationReport",
    "BandRow",
    "BandTable",
    "ExpansionReport",
    "FrequencyBucket",
    "FrequencyBuckets",
    "BAND_EDGES",
    "FREQUENCY_EDGES",
    "churn_report",
    "rotation_report",
    "band_accuracy",
    "expansion_report",
    "frequency_audit",
]

BAND_EDGES = (0.5, 1.0, 2.0, 5.0)

# Buckets by target-token occurrence count: 1, 2-4, 5-19, 20-99, 100+.
FREQUENCY_EDGES = ((1, 1), (2, 4), (5, 19), (20, 99), (100, None))


@dataclass(frozen=True)
class ChurnReport:
    total: int
    churned: int
    w2r: int
    r2w: int
    flip_ratio: float | None  # None when r2w == 0
    net_corrected: int


@dataclass(frozen=True)
class RotationReport:
    rotated: int
    rotated_wider: int
    mean_margin_delta: float | None  # None when nothing rotated


@dataclass(frozen=True)
class BandRow:
    lo: float
    hi: float | None  # None for the unbounded top band
    count: int
    accuracy: float | None  # None for an empty band


@dataclass(frozen=True)
class BandTable:
    bands: tuple[BandRow, ...]
    total: int
    overall_accuracy: float


@dataclass(frozen=True)
class ExpansionReport:
    pct_wider: float
    mean_delta: float
    median_delta: float


@dataclass(frozen=True)
class FrequencyBucket:
    label: str
    count: int
    baseline_accuracy: float | None
    polished_accuracy: float | None
    delta: float | None
    net_corrected: int
    share_of_net: float | None  # None when total net corrected is 0


@dataclass(frozen=True)
class FrequencyBuckets:
    buckets: tuple[FrequencyBucket, ...]
    total_net_corrected: int


def _check_aligned(baseline: list[MarginRecord], polished: list[MarginRecord]) -> None:
    if len(baseline) != len(polished):
        raise DataError(
            f"audit size mismatch: {len(baseline)} vs {len(polished)} positions"
        )
    for b, p in zip(baseline, polished):
        if b.position_index != p.position_index or b.target_id != p.target_id:
            raise DataError(
                f"audit position mismatch at index {b.position_index}: "
                f"({b.position_index}, target {b.target_id}) vs "
                f"({p.position_index}, target {p.target_id})"
            )


def churn_report(baseline: list[MarginRecord], polished: list[MarginRecord]) -> ChurnReport:
    """Count top-1 changes and their correctness flips."""
    _check_aligned(baseline, polished)
    churned = w2r = r2w = 0
    for b, p in zip(baseline, polished):
        if b.top1_id != p.top1_id:
            churned += 1
            if (not b.correct) and p.correct:
                w2r += 1
            elif b.correct and not p.correct:
                r2w += 1
    return ChurnReport(
        total=len(baseline),
        churned=churned,
        w2r=w2r,
        r2w=r2w,
        flip_ratio=(w2r / r2w) if r2w else None,
        net_corrected=w2r - r2w,
    )


def rotation_report(
    baseline: list[MarginRecord], polished: list[MarginRecord]
) -> RotationReport:
    """Positions whose top-1 held but whose runner-up changed."""
    _check_aligned(baseline, polished)
    deltas = []
    wider = 0
    for b, p in zip(baseline, polished):
        if b.top1_id == p.top1_id and b.top2_id != p.top2_id:
            delta = p.margin - b.margin
            deltas.append(delta)
            if delta > 0:
                wider += 1
    return RotationReport(
        rotated=len(deltas),
        rotated_wider=wider,
        mean_margin_delta=float(np.mean(deltas)) if deltas else None,
    )


def band_accuracy(audit: list[MarginRecord]) -> BandTable:
    """Accuracy within the half-open margin bands
    [0, 0.5), [0.5, 1), [1, 2), [2, 5), [5, inf)."""
    if not audit:
        raise UsageError("band_accuracy requires a non-empty audit")
    edges = (0.0,) + BAND_EDGES + (None,)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = [r for r in audit if r.margin >= lo and (hi is None or r.margin < hi)]
        n = len(sel)
        acc = sum(r.correct for r in sel) / n if n else None
        rows.append(BandRow(lo=lo, hi=hi, count=n, accuracy=acc))
    return BandTable(
        bands=tuple(rows),
        total=len(audit),
        overall_accuracy=sum(r.correct for r in audit) / len(audit),
    )


def expansion_report(
    baseline: list[MarginRecord], polished: list[MarginRecord]
) -> ExpansionReport:
    """Margin delta (polished minus baseline) over all positions."""
    _check_aligned(baseline, polished)
    deltas = np.array([p.margin - b.margin for b, p in zip(baseline, polished)])
    return ExpansionReport(
        pct_wider=float(np.count_nonzero(deltas > 0)) / deltas.size,
        mean_delta=float(deltas.mean()),
        median_delta=nearest_rank_quantile(np.sort(deltas), 0.5),
    )


def _bucket_label(lo: int, hi: int | None) -> str:
    if hi is None:
        return f"{lo}+"
    if lo == hi:
        return str(lo)
    return f"{lo}-{hi}"


def frequency_audit(
    baseline: list[MarginRecord],
    polished: list[MarginRecord],
    target_counts: dict[int, int],
) -> FrequencyBuckets:
    """Per-frequency-bucket accuracy deltas and shares of net corrections.

    ``target_counts`` maps each target token id to its occurrence count in
    the audit corpus; a missing target is a data error.
    """
    _check_aligned(baseline, polished)
    for b in baseline:
        if b.target_id not in target_counts:
            raise DataError(f"no frequency count for target token {b.target_id}")

    overall = churn_report(baseline, polished)
    buckets = []
    for lo, hi in FREQUENCY_EDGES:
        idx = [
            i
            for i, b in enumerate(baseline)
            if target_counts[b.target_id] >= lo
            and (hi is None or target_counts[b.target_id] <= hi)
        ]
        n = len(idx)
        if n:
            base_acc = sum(baseline[i].correct for i in idx) / n
            pol_acc = sum(polished[i].correct for i in idx) / n
            w2r = sum((not baseline[i].correct) and polished[i].correct for i in idx)
            r2w = sum(baseline[i].correct and (not polished[i].correct) for i in idx)
            net = w2r - r2w
            share = (
                net / overall.net_corrected if overall.net_corrected != 0 else None
            )
            buckets.append(
                FrequencyBucket(
                    label=_bucket_label(lo, hi),
                    count=n,
                    baseline_accuracy=base_acc,
                    polished_accuracy=pol_acc,
                    delta=pol_acc - base_acc,
                    net_corrected=net,
                    share_of_net=share,
                )
            )
        else:
            buckets.append(
                FrequencyBucket(
                    label=_bucket_label(lo, hi),
                    count=0,
                    baseline_accuracy=None,
                    polished_accuracy=None,
                    delta=None,
                    net_corrected=0,
                    share_of_net=None,
                )
            )
    return FrequencyBuckets(
        buckets=tuple(buckets), total_net_corrected=overall.net_corrected
    )
