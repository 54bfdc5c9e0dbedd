"""Margin-refinement objectives and the combined training loss.

Two refinement losses are provided:

* ``margin_loss``: mean margin over the low-margin gate, negated.  Cheap;
  pushes directly along the current top1-top2 axis.
* ``fisher_loss``: probability-weighted sum of pairwise Fisher
  information distances among the top-k tokens, negated.  The Fisher
  metric restricted to the renormalized top-k distribution is
  diag(p_k) - p_k p_k^T; token embedding rows are L2-normalized so the
  distance measures directional separation rather than norm differences.

Gradient semantics are hard throughout: top-k index sets and the margin
gate are frozen per forward pass, and sqrt(clamp(., floor)) keeps
gradients finite at near-zero distances.

Pair sums run over ordered pairs (i != j), so each unordered pair counts
twice; its weight is 2 p_i p_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, UsageError

__all__ = [
    "MrpConfig",
    "row_margins",
    "margin_loss",
    "cross_entropy",
    "fisher_distance",
    "fisher_loss",
    "combined_loss",
]

OBJECTIVES = ("margin", "fisher")


@dataclass(frozen=True)
class MrpConfig:
    """Refinement objective configuration.

    ``objective="margin"`` uses ``tau`` and ignores ``k``;
    ``objective="fisher"`` uses ``k``.  ``ce_weight=0`` gives pure-MRP
    training with no cross-entropy supervision.
    """

    objective: str = "margin"
    lambda_mrp: float = 0.0
    tau: float = 0.5
    k: int = 5
    clamp_floor: float = 1e-8
    ce_weight: float = 1.0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise UsageError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.lambda_mrp < 0:
            raise UsageError("lambda_mrp must be nonnegative")
        if self.tau <= 0:
            raise UsageError("tau must be positive")
        if self.k < 2:
            raise UsageError("k must be at least 2")
        if self.clamp_floor <= 0:
            raise UsageError("clamp_floor must be positive")
        if self.ce_weight < 0:
            raise UsageError("ce_weight must be nonnegative")


def _check_logits(logits: Tensor) -> None:
    if logits.values.ndim != 2:
        raise UsageError(f"logit rows must be 2-D, got shape {logits.shape}")
    if logits.values.shape[1] < 2:
        raise UsageError(f"need V >= 2, got V={logits.values.shape[1]}")
    if not np.isfinite(logits.values).all():
        raise DataError("non-finite logits")


def row_margins(logits: Tensor) -> Tensor:
    """Differentiable per-row margin (top-1 minus top-2 logit), shape [R, 1]."""
    top2, _ = ad.topk_values_gather(logits, 2)
    return ad.sub(ad.slice_cols(top2, 0, 1), ad.slice_cols(top2, 1, 2))


def margin_loss(logit_rows, tau: float) -> Tensor:
    """Negative mean margin over rows whose margin is below tau.

    The gate is a hard boolean mask.  An empty gate yields exactly 0 (no
    refinement signal).
    """
    logits = ad.as_tensor(logit_rows)
    _check_logits(logits)
    if tau <= 0:
        raise UsageError("tau must be positive")
    m = row_margins(logits)
    gate = m.values < tau
    return ad.scale(ad.masked_mean(m, gate), -1.0)


def cross_entropy(logit_rows, targets) -> Tensor:
    """Mean negative log-softmax probability of the target ids."""
    logits = ad.as_tensor(logit_rows)
    _check_logits(logits)
    idx = np.asarray(targets, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != logits.values.shape[0]:
        raise UsageError(f"targets shape {idx.shape} does not match rows")
    if (idx < 0).any() or (idx >= logits.values.shape[1]).any():
        raise DataError("target id out of vocabulary range")
    return ad.scale(ad.mean(ad.log_softmax_gather(logits, idx)), -1.0)


def fisher_distance(
    p_k: np.ndarray,
    normalized_rows: np.ndarray,
    i: int,
    j: int,
    clamp_floor: float = 1e-8,
) -> float:
    """Fisher information distance between tokens i and j of a top-k set.

    ``p_k`` is the renormalized top-k probability vector and
    ``normalized_rows`` the k x d matrix of unit-norm embedding rows.  The
    squared distance is proj^T (diag(p) - p p^T) proj with
    proj = rows @ (rows_i - rows_j); the result is sqrt of the square
    clamped at ``clamp_floor``, hence symmetric in (i, j) and never zero.
    """
    p = np.asarray(p_k, dtype=np.float64).ravel()
    rows = np.asarray(normalized_rows, dtype=np.float64)
    k = p.size
    if rows.ndim != 2 or rows.shape[0] != k:
        raise UsageError(f"rows shape {rows.shape} does not match k={k}")
    if abs(p.sum() - 1.0) > 1e-6:
        raise UsageError(f"p_k must sum to 1, got {p.sum()}")
    norms = np.sqrt((rows * rows).sum(axis=1))
    if np.abs(norms - 1.0).max() > 1e-6:
        raise UsageError("rows must be unit-norm")
    if not (0 <= i < k and 0 <= j < k):
        raise UsageError(f"pair ({i}, {j}) out of range for k={k}")
    if clamp_floor <= 0:
        raise UsageError("clamp_floor must be positive")
    delta = rows[i] - rows[j]
    proj = rows @ delta
    sigma = np.diag(p) - np.outer(p, p)
    dsq = float(proj @ sigma @ proj)
    return math.sqrt(max(dsq, clamp_floor))


def fisher_loss(logit_rows, unembedding, k: int, clamp_floor: float = 1e-8) -> Tensor:
    """Negative mean (over rows) of the probability-weighted pairwise
    Fisher-distance sum among each row's top-k tokens.

    Per row: the top-k logits are renormalized by softmax, the embedding
    rows at the top-k ids are gathered and L2-normalized, and the penalty
    is sum over ordered pairs i != j of p_i p_j d_F(i, j).  Gradients flow
    through the probabilities, the normalized rows, and the quadratic
    form; the top-k index set itself is frozen.
    """
    logits = ad.as_tensor(logit_rows)
    _check_logits(logits)
    w = ad.as_tensor(unembedding)
    if w.values.ndim != 2:
        raise UsageError("unembedding must be 2-D")
    if w.values.shape[0] != logits.values.shape[1]:
        raise UsageError(
            f"unembedding rows ({w.values.shape[0]}) must equal V "
            f"({logits.values.shape[1]})"
        )
    if k > logits.values.shape[1]:
        raise UsageError(f"k={k} exceeds V={logits.values.shape[1]}")
    if k < 2:
        raise UsageError("k must be at least 2")

    n_rows = logits.values.shape[0]
    top_vals, top_idx = ad.topk_values_gather(logits, k)
    off_diagonal = ad.constant(1.0 - np.eye(k))

    acc = None
    for r in range(n_rows):
        p = ad.softmax(ad.reshape(ad.gather_rows(top_vals, [r]), (k,)))
        wk = ad.l2_normalize_rows(ad.gather_rows(w, top_idx[r]))
        gram = ad.matmul(wk, ad.transpose(wk))
        sigma = ad.sub(ad.diag(p), ad.outer(p, p))
        form = ad.matmul(ad.matmul(gram, sigma), gram)
        d = ad.diag_part(form)
        # Pairwise squared distances from the symmetric form matrix:
        # dsq[i, j] = form[i, i] + form[j, j] - 2 form[i, j].
        dsq = ad.sub(ad.pairwise_sum(d, d), ad.scale(form, 2.0))
        dist = ad.sqrt_clamped(dsq, clamp_floor)
        weights = ad.mul(ad.outer(p, p), off_diagonal)
        penalty = ad.total(ad.mul(weights, dist))
        acc = penalty if acc is None else ad.add(acc, penalty)
    return ad.scale(acc, -1.0 / n_rows)


def combined_loss(logit_rows, targets, config: MrpConfig, unembedding=None) -> Tensor:
    """ce_weight * cross-entropy + lambda_mrp * refinement objective.

    ``unembedding`` is required for the fisher objective whenever
    lambda_mrp > 0.
    """
    logits = ad.as_tensor(logit_rows)
    parts: list[Tensor] = []
    if config.ce_weight != 0.0:
        ce = cross_entropy(logits, targets)
        parts.append(ce if config.ce_weight == 1.0 else ad.scale(ce, config.ce_weight))
    if config.lambda_mrp != 0.0:
        if config.objective == "margin":
            obj = margin_loss(logits, config.tau)
        else:
            if unembedding is None:
                raise UsageError("fisher objective requires the unembedding matrix")
            obj = fisher_loss(logits, unembedding, config.k, config.clamp_floor)
        parts.append(ad.scale(obj, config.lambda_mrp))
    if not parts:
        return ad.constant(0.0)
    out = parts[0]
    for p in parts[1:]:
        out = ad.add(out, p)
    return out
