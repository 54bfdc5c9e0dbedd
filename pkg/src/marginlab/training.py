"""Training harness: AdamW refinement runs, dose-response sweeps, and the
layer-wise virtual-margin scan.

Every run is deterministic given its seed: batch order comes from a
seeded generator, the optimizer is plain float64 numpy, and reductions
use a fixed association order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .audit import ChurnReport, churn_report
from .errors import NumericalError, UsageError
from .gapfit import GapFit, GridSpec, fit_gap_curve
from .margins import MarginRecord, compute_margins, nearest_rank_quantile, top2_stats
from .objectives import MrpConfig, combined_loss, cross_entropy, fisher_loss, margin_loss
from .rankstats import spearman
from .toylm import ToyLm

__all__ = [
    "TrainConfig",
    "StepMetrics",
    "SweepRow",
    "LayerScanRow",
    "make_chunks",
    "train",
    "audit_model",
    "dose_response",
    "layer_scan",
]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    warmup_fraction: float = 0.05
    batch_size: int = 1
    seed: int = 0
    mrp: MrpConfig = field(default_factory=MrpConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise UsageError("steps must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise UsageError("warmup_fraction must be in [0, 1)")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise UsageError("weight_decay must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "warmup_fraction": self.warmup_fraction,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "mrp": {
                "objective": self.mrp.objective,
                "lambda_mrp": self.mrp.lambda_mrp,
                "tau": self.mrp.tau,
                "k": self.mrp.k,
                "clamp_floor": self.mrp.clamp_floor,
                "ce_weight": self.mrp.ce_weight,
            },
        }


@dataclass(frozen=True)
class StepMetrics:
    step: int
    ce: float
    mrp: float
    median_margin: float


@dataclass(frozen=True)
class SweepRow:
    lambda_mrp: float
    median_margin: float
    pr_below_half: float
    gap_fit: GapFit
    churn: ChurnReport


@dataclass(frozen=True)
class LayerScanRow:
    layer_index: int
    spearman_ce_mrp: float | None


def make_chunks(token_ids: np.ndarray, context: int) -> list[np.ndarray]:
    """Split a token stream into non-overlapping context-length chunks.

    A trailing remainder of at least 2 tokens is kept as a short chunk.
    """
    ids = np.asarray(token_ids, dtype=np.int64).ravel()
    if ids.size < 2:
        raise UsageError("corpus must contain at least 2 tokens")
    chunks = []
    for start in range(0, ids.size, context):
        piece = ids[start : start + context]
        if piece.size >= 2:
            chunks.append(piece)
    return chunks


class _AdamW:
    """Decoupled-weight-decay Adam in float64."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, lr: float, weight_decay: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.values)
                self.v[name] = np.zeros_like(p.values)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.values -= lr * (update + weight_decay * p.values)


def _batch_margins(logit_values: np.ndarray) -> np.ndarray:
    _, _, margins = top2_stats(logit_values)
    return margins


def train(model: ToyLm, corpus_tokens, config: TrainConfig) -> list[StepMetrics]:
    """Refine ``model`` in place; returns the per-step metric log.

    Loss rows at step t come from ``batch_size`` corpus chunks drawn by a
    generator seeded with ``config.seed``; the loss is
    ce_weight * CE + lambda_mrp * objective per chunk, averaged over the
    batch.  Learning rate warms up linearly over
    ``warmup_fraction * steps`` steps, then stays flat.

    Raises:
        NumericalError: non-finite loss, naming the step.
    """
    chunks = make_chunks(corpus_tokens, model.config.context)
    rng = np.random.default_rng(config.seed)
    opt = _AdamW()
    warmup_steps = max(1, int(round(config.warmup_fraction * config.steps)))
    log: list[StepMetrics] = []

    for step in range(config.steps):
        picks = rng.integers(0, len(chunks), size=config.batch_size)
        model.zero_grad()
        ce_vals, mrp_vals, margin_pool = [], [], []
        with ad.Tape() as tape:
            loss_acc = None
            for ci in picks:
                chunk = chunks[int(ci)]
                logits, _ = model.forward(chunk)
                if not np.isfinite(logits.values).all():
                    raise NumericalError(f"non-finite logits at step {step}")
                rows = ad.gather_rows(logits, np.arange(chunk.size - 1))
                targets = chunk[1:]
                loss = combined_loss(rows, targets, config.mrp, model.unembedding)
                loss_acc = loss if loss_acc is None else ad.add(loss_acc, loss)
                ce_vals.append(cross_entropy(ad.constant(rows.values), targets).item())
                mrp_vals.append(_objective_value(rows.values, model, config.mrp))
                margin_pool.append(_batch_margins(rows.values))
            loss_acc = ad.scale(loss_acc, 1.0 / config.batch_size)
            if not np.isfinite(loss_acc.values).all():
                raise NumericalError(f"non-finite loss at step {step}")
            tape.backward(loss_acc)

        lr = config.learning_rate * min(1.0, (step + 1) / warmup_steps)
        opt.step(model.params, lr, config.weight_decay)

        margins = np.sort(np.concatenate(margin_pool))
        log.append(
            StepMetrics(
                step=step,
                ce=float(np.mean(ce_vals)),
                mrp=float(np.mean(mrp_vals)),
                median_margin=nearest_rank_quantile(margins, 0.5),
            )
        )
    return log


def _objective_value(logit_values: np.ndarray, model: ToyLm, mrp: MrpConfig) -> float:
    rows = ad.constant(logit_values)
    if mrp.objective == "margin":
        return margin_loss(rows, mrp.tau).item()
    w = ad.constant(model.unembedding.values)
    return fisher_loss(rows, w, mrp.k, mrp.clamp_floor).item()


def audit_model(model: ToyLm, corpus_tokens) -> list[MarginRecord]:
    """Full-precision margin audit of every loss position in the corpus.

    Positions are numbered sequentially across chunks, so two audits of
    the same corpus align position by position.
    """
    chunks = make_chunks(corpus_tokens, model.config.context)
    records: list[MarginRecord] = []
    offset = 0
    for chunk in chunks:
        logits, _ = model.forward(chunk)
        rows = logits.values[:-1]
        targets = chunk[1:]
        for rec in compute_margins(rows, targets):
            records.append(replace(rec, position_index=rec.position_index + offset))
        offset += rows.shape[0]
    return records


def dose_response(
    base_model: ToyLm,
    corpus_tokens,
    lambda_list,
    objective: str,
    train_config: TrainConfig,
    grid_spec: GridSpec | None = None,
) -> tuple[list[SweepRow], list[MarginRecord]]:
    """Train one run per lambda from the same base checkpoint and seed,
    audit each run, and compare it against the base model's audit.

    Returns ``(rows, baseline_audit)``.  All runs share the training
    corpus, seed, and schedule; only lambda varies.
    """
    lambdas = [float(v) for v in lambda_list]
    if not lambdas:
        raise UsageError("lambda list must be non-empty")
    if any(b < a for a, b in zip(lambdas, lambdas[1:])):
        raise UsageError("lambda list must be sorted ascending")

    baseline_audit = audit_model(base_model, corpus_tokens)
    rows: list[SweepRow] = []
    for lam in lambdas:
        run = base_model.clone()
        cfg = replace(
            train_config,
            mrp=replace(train_config.mrp, objective=objective, lambda_mrp=lam),
        )
        train(run, corpus_tokens, cfg)
        audit = audit_model(run, corpus_tokens)
        margins = np.sort(np.array([r.margin for r in audit]))
        rows.append(
            SweepRow(
                lambda_mrp=lam,
                median_margin=nearest_rank_quantile(margins, 0.5),
                pr_below_half=float(np.count_nonzero(margins < 0.5)) / margins.size,
                gap_fit=fit_gap_curve(margins, grid_spec),
                churn=churn_report(baseline_audit, audit),
            )
        )
    return rows, baseline_audit


def virtual_penalty_ce_rho(virtual_margins, final_ce, tau: float) -> float | None:
    """Spearman rho between final CE and the virtual refinement penalty
    max(0, tau - margin); None when the penalty vector is constant."""
    penalty = np.maximum(0.0, tau - np.asarray(virtual_margins, dtype=np.float64))
    try:
        return spearman(np.asarray(final_ce, dtype=np.float64), penalty)
    except NumericalError:
        return None


def layer_scan(model: ToyLm, corpus_tokens, tau: float = 0.5) -> list[LayerScanRow]:
    """Correlation between final cross-entropy and each layer's virtual
    refinement penalty, pooled over every loss position in the corpus.

    A layer's hidden states are projected through the final output head
    to get virtual margins; the penalty is the margin deficit below tau.
    """
    chunks = make_chunks(corpus_tokens, model.config.context)
    n_layers = model.config.layers
    per_layer_margins: list[list[np.ndarray]] = [[] for _ in range(n_layers)]
    ce_pool: list[np.ndarray] = []
    for chunk in chunks:
        logits, hiddens = model.forward(chunk)
        targets = chunk[1:]
        rows = logits.values[:-1]
        shifted = rows - rows.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        ce_pool.append(lse - shifted[np.arange(rows.shape[0]), targets])
        for li, h in enumerate(hiddens):
            virt = model.project_hidden(h[:-1])
            per_layer_margins[li].append(_batch_margins(virt))
    ce = np.concatenate(ce_pool)
    out = []
    for li in range(n_layers):
        margins = np.concatenate(per_layer_margins[li])
        out.append(
            LayerScanRow(
                layer_index=li,
                spearman_ce_mrp=virtual_penalty_ce_rho(margins, ce, tau),
            )
        )
    return out
