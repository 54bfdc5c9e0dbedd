"""Minimal reverse-mode differentiation engine.

Design notes:

* Operations are recorded on a ``Tape`` opened as a context manager; the
  recording order is a topological order, and the backward pass walks it
  exactly once in reverse, so gradient accumulation order is fixed and
  results are bit-reproducible.
* Top-k selection and boolean gates are hard: indices and masks are
  frozen at forward time, gradients flow only through the selected
  values, never through the discrete choice itself.
* Everything defaults to float64.  float32 inputs are preserved for
  callers that want speed over precision, but the verification tests run
  in double precision.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, UsageError

__all__ = [
    "Tensor",
    "Tape",
    "constant",
    "parameter",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "softmax",
    "log_softmax_gather",
    "topk_values_gather",
    "gather_rows",
    "l2_normalize_rows",
    "sqrt_clamped",
    "mean",
    "total",
    "masked_mean",
    "quadratic_form",
    "outer",
    "diag",
    "diag_part",
    "pairwise_sum",
    "transpose",
    "slice_cols",
    "concat_cols",
    "relu",
    "reshape",
    "grad_check",
]

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """An array with an optional gradient slot."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Recorder for primitive applications, in application order."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into every recorded tensor's grad.

        ``root`` must be a scalar produced under this tape.
        """
        if root.values.size != 1:
            raise UsageError("backward root must be a scalar")
        root.grad = np.ones_like(root.values)
        for out, backward in reversed(self._nodes):
            if out.grad is not None:
                backward(out.grad)


def _tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
        t.grad += g


def _make(values, parents: tuple[Tensor, ...], backward) -> Tensor:
    tape = _tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=needs)
    if needs:
        tape._nodes.append((out, backward))
    return out


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands (np.matmul shape rules)."""
    av, bv = a.values, b.values
    if av.ndim > 2 or bv.ndim > 2:
        raise UsageError("matmul supports 1-D and 2-D operands only")
    try:
        out = av @ bv
    except ValueError as e:
        raise UsageError(f"matmul shape mismatch: {av.shape} @ {bv.shape}") from e

    def backward(g):
        if av.ndim == 1 and bv.ndim == 1:
            _accumulate(a, g * bv)
            _accumulate(b, g * av)
        elif av.ndim == 1:  # (n,) @ (n,k) -> (k,)
            _accumulate(a, bv @ g)
            _accumulate(b, np.outer(av, g))
        elif bv.ndim == 1:  # (m,n) @ (n,) -> (m,)
            _accumulate(a, np.outer(g, bv))
            _accumulate(b, av.T @ g)
        else:
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.T @ g)

    return _make(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise UsageError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.values + b.values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise UsageError(f"sub shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.values - b.values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise UsageError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        _accumulate(a, g * bv)
        _accumulate(b, g * av)

    return _make(av * bv, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        _accumulate(a, g * c)

    return _make(a.values * c, (a,), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis (1-D or 2-D input)."""
    xv = x.values
    if xv.ndim not in (1, 2):
        raise UsageError("softmax supports 1-D and 2-D input")
    shifted = xv - xv.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * p, axis=-1, keepdims=True)
        _accumulate(x, p * (g - dot))

    return _make(p, (x,), backward)


def log_softmax_gather(x: Tensor, indices) -> Tensor:
    """Per-row log-softmax value at the given index: out[r] = logp[r, i_r]."""
    xv = x.values
    if xv.ndim != 2:
        raise UsageError("log_softmax_gather expects a 2-D logit matrix")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (xv.shape[0],):
        raise UsageError(f"indices shape {idx.shape} does not match {xv.shape[0]} rows")
    if (idx < 0).any() or (idx >= xv.shape[1]).any():
        raise UsageError("gather index out of range")
    shifted = xv - xv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(xv.shape[0])
    out = shifted[rows, idx] - lse
    p = np.exp(shifted - lse[:, None])

    def backward(g):
        dx = -g[:, None] * p
        dx[rows, idx] += g
        _accumulate(x, dx)

    return _make(out, (x,), backward)


def topk_values_gather(x: Tensor, k: int) -> tuple[Tensor, np.ndarray]:
    """Hard top-k per row: values sorted descending, lower id wins ties.

    Returns (values [rows, k], indices [rows, k]).  The index choice is
    frozen at forward time; backward scatters gradient onto the selected
    entries only, all other entries receive exactly zero.
    """
    xv = np.atleast_2d(x.values)
    if xv.ndim != 2:
        raise UsageError("topk_values_gather expects a 1-D or 2-D input")
    if not 1 <= k <= xv.shape[1]:
        raise UsageError(f"k={k} out of range for V={xv.shape[1]}")
    order = np.argsort(-xv, axis=1, kind="stable")[:, :k]
    rows = np.arange(xv.shape[0])[:, None]
    values = xv[rows, order]

    def backward(g):
        dx = np.zeros_like(xv)
        np.add.at(dx, (rows, order), g)
        _accumulate(x, dx.reshape(x.values.shape))

    return _make(values, (x,), backward), order


def gather_rows(m: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into them."""
    mv = m.values
    if mv.ndim != 2:
        raise UsageError("gather_rows expects a 2-D tensor")
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if (idx < 0).any() or (idx >= mv.shape[0]).any():
        raise UsageError("row index out of range")
    out = mv[idx]

    def backward(g):
        dm = np.zeros_like(mv)
        np.add.at(dm, idx, g)
        _accumulate(m, dm)

    return _make(out, (m,), backward)


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Rescale each row to unit Euclidean norm (norm floored at 1e-30)."""
    xv = x.values
    axis = xv.ndim - 1
    if axis < 0:
        raise UsageError("l2_normalize_rows needs at least 1-D input")
    norms = np.sqrt(np.sum(xv * xv, axis=axis, keepdims=True))
    norms = np.maximum(norms, 1e-30)
    u = xv / norms

    def backward(g):
        dot = np.sum(g * u, axis=axis, keepdims=True)
        _accumulate(x, (g - u * dot) / norms)

    return _make(u, (x,), backward)


def sqrt_clamped(x: Tensor, floor: float) -> Tensor:
    """Elementwise sqrt(max(x, floor)); floor > 0 keeps gradients finite.

    Where the clamp is active the gradient is exactly zero.
    """
    if floor <= 0:
        raise UsageError("floor must be positive")
    xv = x.values
    clamped = np.maximum(xv, floor)
    out = np.sqrt(clamped)
    open_region = xv > floor

    def backward(g):
        _accumulate(x, g * open_region * 0.5 / out)

    return _make(out, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.values.size
    if n == 0:
        raise UsageError("mean of empty tensor")

    def backward(g):
        _accumulate(x, np.full_like(x.values, float(g) / n))

    return _make(x.values.mean(), (x,), backward)


def total(x: Tensor) -> Tensor:
    """Sum of all entries."""

    def backward(g):
        _accumulate(x, np.full_like(x.values, float(g)))

    return _make(x.values.sum(), (x,), backward)


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean of the entries where mask is True; 0.0 for an empty mask.

    The mask is a plain boolean array, frozen at forward time; masked-out
    entries receive exactly zero gradient.
    """
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.values.shape:
        raise UsageError(f"mask shape {m.shape} does not match {x.shape}")
    count = int(np.count_nonzero(m))
    value = float(x.values[m].mean()) if count else 0.0

    def backward(g):
        if count:
            _accumulate(x, m * (float(g) / count))

    return _make(value, (x,), backward)


def quadratic_form(v: Tensor, m: Tensor) -> Tensor:
    """v^T M v for a vector v and square matrix M."""
    vv, mv = v.values, m.values
    if vv.ndim != 1 or mv.ndim != 2 or mv.shape != (vv.size, vv.size):
        raise UsageError(f"quadratic_form shape mismatch: {vv.shape}, {mv.shape}")
    mv_v = mv @ vv

    def backward(g):
        _accumulate(v, float(g) * (mv_v + mv.T @ vv))
        _accumulate(m, float(g) * np.outer(vv, vv))

    return _make(vv @ mv_v, (v, m), backward)


def outer(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim != 1 or bv.ndim != 1:
        raise UsageError("outer expects two vectors")

    def backward(g):
        _accumulate(a, g @ bv)
        _accumulate(b, g.T @ av)

    return _make(np.outer(av, bv), (a, b), backward)


def diag(v: Tensor) -> Tensor:
    if v.values.ndim != 1:
        raise UsageError("diag expects a vector")

    def backward(g):
        _accumulate(v, np.diagonal(g).copy())

    return _make(np.diag(v.values), (v,), backward)


def diag_part(m: Tensor) -> Tensor:
    mv = m.values
    if mv.ndim != 2 or mv.shape[0] != mv.shape[1]:
        raise UsageError("diag_part expects a square matrix")

    def backward(g):
        _accumulate(m, np.diag(g))

    return _make(np.diagonal(mv).copy(), (m,), backward)


def pairwise_sum(u: Tensor, v: Tensor) -> Tensor:
    """Matrix M[i, j] = u[i] + v[j]."""
    uv, vv = u.values, v.values
    if uv.ndim != 1 or vv.ndim != 1:
        raise UsageError("pairwise_sum expects two vectors")

    def backward(g):
        _accumulate(u, g.sum(axis=1))
        _accumulate(v, g.sum(axis=0))

    return _make(uv[:, None] + vv[None, :], (u, v), backward)


def transpose(m: Tensor) -> Tensor:
    if m.values.ndim != 2:
        raise UsageError("transpose expects a 2-D tensor")

    def backward(g):
        _accumulate(m, g.T)

    return _make(m.values.T.copy(), (m,), backward)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    xv = x.values
    if xv.ndim != 2 or not 0 <= lo < hi <= xv.shape[1]:
        raise UsageError(f"bad column slice [{lo}:{hi}] for shape {xv.shape}")

    def backward(g):
        dx = np.zeros_like(xv)
        dx[:, lo:hi] = g
        _accumulate(x, dx)

    return _make(xv[:, lo:hi].copy(), (x,), backward)


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise UsageError("concat_cols of nothing")
    widths = [p.values.shape[1] for p in parts]

    def backward(g):
        off = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[:, off : off + w])
            off += w

    return _make(np.concatenate([p.values for p in parts], axis=1), tuple(parts), backward)


def relu(x: Tensor) -> Tensor:
    pos = x.values > 0

    def backward(g):
        _accumulate(x, g * pos)

    return _make(np.maximum(x.values, 0.0), (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    xv = x.values
    try:
        out = xv.reshape(shape).copy()
    except ValueError as e:
        raise UsageError(f"cannot reshape {xv.shape} to {shape}") from e

    def backward(g):
        _accumulate(x, g.reshape(xv.shape))

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def grad_check(fn, arrays, step: float = 1e-5) -> float:
    """Worst-coordinate error of reverse-mode grads vs central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor and must be pure.
    Differences are computed in float64.  The per-coordinate error is
    relative, falling back to absolute below 1e-6 magnitude.

    Raises:
        NumericalError: fn produced a non-finite value.
    """
    if step <= 0:
        raise UsageError("step must be positive")
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    params = [parameter(a) for a in arrays]
    with Tape() as tape:
        out = fn(params)
        if not np.isfinite(out.values).all():
            raise NumericalError("function value is not finite")
        tape.backward(out)
    analytic = [
        p.grad if p.grad is not None else np.zeros_like(p.values) for p in params
    ]

    def eval_at(vals: list[np.ndarray]) -> float:
        v = fn([constant(a) for a in vals]).item()
        if not np.isfinite(v):
            raise NumericalError("function value is not finite")
        return v

    worst = 0.0
    for which, base in enumerate(arrays):
        flat = base.ravel()
        for i in range(flat.size):
            bumped = [a.copy() for a in arrays]
            bumped[which].ravel()[i] = flat[i] + step
            f_plus = eval_at(bumped)
            bumped[which].ravel()[i] = flat[i] - step
            f_minus = eval_at(bumped)
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[which].ravel()[i]
            denom = abs(numeric)
            err = abs(a - numeric) / denom if denom >= 1e-6 else abs(a - numeric)
            worst = max(worst, err)
    return worst
