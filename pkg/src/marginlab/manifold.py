"""Synthetic manifolds with known token sites, for validating the linear
gap scaling law against brute-force oracles.

Restricted to intrinsic dimension 1 (circle) and 2 (square): these are
the cases where a dense deterministic oracle for the linear coefficient
is tractable.  Points h on the manifold get logits ``sites @ h``; the
margin field is then fully known, so the fitted gap curve can be checked
against direct counting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError, UsageError
from .gapfit import GapFit, GridSpec, fit_gap_curve
from .margins import top2_stats

__all__ = [
    "ManifoldSpec",
    "ScalingVerdict",
    "generate",
    "oracle_alpha",
    "gradient_floor",
    "validate_scaling",
    "circle_two_sites",
    "circle_three_sites",
    "square_eight_sites",
    "PRESETS",
]

SAMPLERS = ("circle_uniform", "square_uniform")

_CHUNK = 500_000


@dataclass(frozen=True)
class ManifoldSpec:
    """A sampled manifold plus the token directions that tessellate it."""

    intrinsic_dim: int
    ambient_dim: int
    sites: np.ndarray
    sampler: str
    sample_count: int

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise UsageError(f"sampler must be one of {SAMPLERS}")
        if self.intrinsic_dim not in (1, 2):
            raise UsageError("intrinsic_dim must be 1 or 2")
        expected = 1 if self.sampler == "circle_uniform" else 2
        if self.intrinsic_dim != expected:
            raise UsageError(
                f"sampler {self.sampler} requires intrinsic_dim {expected}"
            )
        sites = np.asarray(self.sites, dtype=np.float64)
        object.__setattr__(self, "sites", sites)
        if sites.ndim != 2 or sites.shape != (sites.shape[0], self.ambient_dim):
            raise UsageError(
                f"sites shape {sites.shape} does not match ambient_dim {self.ambient_dim}"
            )
        if self.ambient_dim < 2 or sites.shape[0] < 2:
            raise UsageError("need ambient_dim >= 2 and at least 2 sites")
        if not np.isfinite(sites).all():
            raise DataError("sites must be finite")
        # Duplicate site rows make the margin field identically zero
        # between them; reject outright.
        uniq = np.unique(sites, axis=0)
        if uniq.shape[0] != sites.shape[0]:
            raise DataError("degenerate sites: duplicate rows")
        if self.sample_count < 1:
            raise UsageError("sample_count must be positive")


@dataclass(frozen=True)
class ScalingVerdict:
    fit: GapFit
    oracle_alpha: float
    relative_alpha_error: float
    gradient_floor: float


def _embed_circle(theta: np.ndarray, d: int) -> np.ndarray:
    pts = np.zeros((theta.size, d))
    pts[:, 0] = np.cos(theta)
    pts[:, 1] = np.sin(theta)
    return pts


def _embed_square(uv: np.ndarray, d: int) -> np.ndarray:
    pts = np.zeros((uv.shape[0], d))
    pts[:, :2] = uv
    return pts


def _margins_of_points(points: np.ndarray, sites: np.ndarray) -> np.ndarray:
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], _CHUNK):
        block = points[start : start + _CHUNK]
        _, _, m = top2_stats(block @ sites.T)
        out[start : start + block.shape[0]] = m
    return out


def generate(spec: ManifoldSpec, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample the manifold; returns (points [n, d], margins [n])."""
    rng = np.random.default_rng(seed)
    n, d = spec.sample_count, spec.ambient_dim
    if spec.sampler == "circle_uniform":
        points = _embed_circle(rng.uniform(0.0, 2.0 * math.pi, n), d)
    else:
        points = _embed_square(rng.uniform(-1.0, 1.0, (n, 2)), d)
    return points, _margins_of_points(points, spec.sites)


def _dense_points(spec: ManifoldSpec, n_points: int) -> np.ndarray:
    """Deterministic midpoint grid over the manifold's coordinate space."""
    d = spec.ambient_dim
    if spec.intrinsic_dim == 1:
        theta = (np.arange(n_points) + 0.5) * (2.0 * math.pi / n_points)
        return _embed_circle(theta, d)
    m = int(math.ceil(math.sqrt(n_points)))
    axis = -1.0 + (np.arange(m) + 0.5) * (2.0 / m)
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    return _embed_square(np.column_stack([uu.ravel(), vv.ravel()]), d)


def _alpha_estimate(spec: ManifoldSpec, n_points: int, epsilon: float) -> float:
    count = 0
    total = 0
    pts = _dense_points(spec, n_points)
    for start in range(0, pts.shape[0], _CHUNK):
        block = pts[start : start + _CHUNK]
        _, _, m = top2_stats(block @ spec.sites.T)
        count += int(np.count_nonzero(m < epsilon))
        total += block.shape[0]
    return count / (total * epsilon)


def oracle_alpha(spec: ManifoldSpec, epsilon: float = 1e-3) -> float:
    """Linear gap coefficient by dense deterministic counting.

    Counts the fraction of grid points with margin below ``epsilon`` and
    divides by epsilon; the grid is then doubled in density and the two
    estimates must agree within 0.5%.

    Raises:
        NumericalError: the doubled grid does not confirm convergence.
    """
    base = 10_000_000 if spec.intrinsic_dim == 1 else 9_000_000
    coarse = _alpha_estimate(spec, base, epsilon)
    fine = _alpha_estimate(spec, 2 * base, epsilon)
    if fine <= 0:
        raise NumericalError("oracle found no sub-threshold margins")
    if abs(fine - coarse) / fine > 0.005:
        raise NumericalError(
            f"oracle did not converge: {coarse} vs {fine} after grid doubling"
        )
    return fine


def gradient_floor(spec: ManifoldSpec, probe_points: int = 1_000_000, h: float = 1e-6) -> float:
    """Smallest margin-gradient magnitude near the Voronoi boundary,
    estimated by central differences along the manifold coordinates at
    the probe points closest to the boundary."""
    d = spec.ambient_dim
    if spec.intrinsic_dim == 1:
        theta = (np.arange(probe_points) + 0.5) * (2.0 * math.pi / probe_points)
        m = _margins_of_points(_embed_circle(theta, d), spec.sites)
        near = theta[m <= np.quantile(m, 1e-3)]
        up = _margins_of_points(_embed_circle(near + h, d), spec.sites)
        dn = _margins_of_points(_embed_circle(near - h, d), spec.sites)
        grads = np.abs(up - dn) / (2.0 * h)
        return float(grads.min())
    side = int(math.ceil(math.sqrt(probe_points)))
    axis = -1.0 + (np.arange(side) + 0.5) * (2.0 / side)
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    uv = np.column_stack([uu.ravel(), vv.ravel()])
    m = _margins_of_points(_embed_square(uv, d), spec.sites)
    near = uv[m <= np.quantile(m, 1e-3)]
    du = np.zeros_like(near)
    du[:, 0] = h
    dv = np.zeros_like(near)
    dv[:, 1] = h
    gu = (
        _margins_of_points(_embed_square(near + du, d), spec.sites)
        - _margins_of_points(_embed_square(near - du, d), spec.sites)
    ) / (2.0 * h)
    gv = (
        _margins_of_points(_embed_square(near + dv, d), spec.sites)
        - _margins_of_points(_embed_square(near - dv, d), spec.sites)
    ) / (2.0 * h)
    return float(np.sqrt(gu * gu + gv * gv).min())


def validate_scaling(
    spec: ManifoldSpec, seed: int = 0, grid_spec: GridSpec | None = None
) -> ScalingVerdict:
    """Sample, fit the gap curve, and compare against the dense oracle.

    Requires sample_count >= 1e5 so the fit has stable small-threshold
    bins.
    """
    if spec.sample_count < 100_000:
        raise UsageError("validate_scaling needs sample_count >= 1e5")
    _, margins = generate(spec, seed)
    fit = fit_gap_curve(margins, grid_spec)
    oracle = oracle_alpha(spec)
    return ScalingVerdict(
        fit=fit,
        oracle_alpha=oracle,
        relative_alpha_error=abs(fit.alpha_constrained - oracle) / oracle,
        gradient_floor=gradient_floor(spec),
    )


def circle_two_sites(sample_count: int = 1_000_000) -> ManifoldSpec:
    """Two antipodal sites on the sampled unit circle.

    The margin field is |2 cos(theta)|, so the gap coefficient has the
    closed form 1/pi: each of the two boundary points contributes a
    two-sided interval of length epsilon, and (2 epsilon)/(2 pi) / epsilon
    = 1/pi.
    """
    sites = np.array([[1.0, 0.0], [-1.0, 0.0]])
    return ManifoldSpec(1, 2, sites, "circle_uniform", sample_count)


def circle_three_sites(sample_count: int = 1_000_000) -> ManifoldSpec:
    """Three symmetric sites at 0, 120, and 240 degrees."""
    angles = np.array([0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0])
    sites = np.column_stack([np.cos(angles), np.sin(angles)])
    return ManifoldSpec(1, 2, sites, "circle_uniform", sample_count)


def square_eight_sites(sample_count: int = 1_000_000) -> ManifoldSpec:
    """Eight pinned pseudo-random sites over the sampled square."""
    sites = np.random.default_rng(7).normal(0.0, 1.0, size=(8, 2))
    return ManifoldSpec(2, 2, sites, "square_uniform", sample_count)


PRESETS = {
    "circle2": circle_two_sites,
    "circle3": circle_three_sites,
    "square8": square_eight_sites,
}
