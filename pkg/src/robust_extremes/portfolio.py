"""Robust bounds on the asymptotic Value-at-Risk ratio of a heavy-tailed
portfolio.

For Pareto-type margins with tail index ``alpha`` and a spectral vector Y on
the simplex, the ratio (VaR_P(p) / VaR_1(p))^alpha tends to d E X with

    X = (sum_i w_i (m_i Y_i)^(1/alpha))^alpha.

The expectation is bounded over a divergence ball around the spectral law,
with the d - 1 free coordinates of Y as mean constraints. Moments come from
Monte Carlo samples of Y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bounds import MomentSummary, Regime, WeightedDual, _sqrt_dual_start
from .numerics import RngState, SolverError, as_generator
from .spectral import SpectralModel, sample_angle

DEFAULT_N = 10**6
JACKKNIFE_BLOCKS = 100


# -- spectral samplers on the simplex -----------------------------------------


@dataclass(frozen=True)
class DirichletSampler:
    """Symmetric Dirichlet(beta, ..., beta); every coordinate has mean 1/d."""

    d: int
    beta: float = 1.0

    def __call__(self, n, rng):
        gen = as_generator(rng)
        g = gen.gamma(self.beta, size=(n, self.d))
        return g / g.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class AtomicSampler:
    """Finitely many simplex points with given probabilities."""

    points: tuple
    probs: tuple

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        p = np.asarray(self.probs, dtype=float)
        if pts.shape[0] != p.size:
            raise ValueError("one probability per point")
        if np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("probabilities must be nonnegative and sum to 1")
        if np.any(pts < 0) or not np.allclose(pts.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("points must lie on the simplex")
        object.__setattr__(self, "points", tuple(map(tuple, pts)))
        object.__setattr__(self, "probs", tuple(p))

    @property
    def d(self):
        return len(self.points[0])

    def __call__(self, n, rng):
        gen = as_generator(rng)
        idx = gen.choice(len(self.probs), size=n, p=np.asarray(self.probs))
        return np.asarray(self.points)[idx]


def comonotone_sampler(d: int = 2) -> AtomicSampler:
    """All mass at the centre of the simplex (complete dependence)."""
    return AtomicSampler((tuple([1.0 / d] * d),), (1.0,))


def independence_sampler(d: int = 2) -> AtomicSampler:
    """Mass 1/d at each vertex (asymptotic independence)."""
    return AtomicSampler(tuple(map(tuple, np.eye(d))), tuple([1.0 / d] * d))


@dataclass(frozen=True)
class BivariateSampler:
    """(Y, 1 - Y) for a bivariate spectral model."""

    model: SpectralModel
    d: int = 2

    def __call__(self, n, rng):
        y = sample_angle(self.model, n, rng)
        return np.column_stack([y, 1.0 - y])


@dataclass(frozen=True)
class PortfolioSpec:
    """Weights, tail index, scale constants and a spectral sampler.

    Parameters
    ----------
    weights : sequence of float
        Nonnegative portfolio weights, not all zero.
    alpha : float
        Common tail index of the margins.
    sampler : callable
        ``sampler(n, rng)`` returns an ``(n, d)`` array of simplex points
        whose coordinates have mean 1/d.
    scales : sequence of float, optional
        Relative tail scale constants with ``scales[0] == 1``.
    """

    weights: tuple
    alpha: float
    sampler: Callable
    scales: tuple | None = None

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) < 2:
            raise ValueError("need at least two assets")
        if min(w) < 0 or max(w) == 0:
            raise ValueError("weights must be nonnegative and not all zero")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        m = (1.0,) * len(w) if self.scales is None else tuple(float(v) for v in self.scales)
        if len(m) != len(w):
            raise ValueError("one scale constant per asset")
        if min(m) <= 0 or m[0] != 1.0:
            raise ValueError("scale constants must be positive with the first equal to 1")
        sd = getattr(self.sampler, "d", None)
        if sd is not None and sd != len(w):
            raise ValueError(f"sampler dimension {sd} does not match {len(w)} weights")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "scales", m)

    @property
    def d(self) -> int:
        return len(self.weights)


def portfolio_statistic(y, spec: PortfolioSpec):
    """X = (sum_i w_i (m_i y_i)^(1/alpha))^alpha for points ``y`` on the simplex."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != spec.d:
        raise ValueError(f"points must have {spec.d} coordinates")
    w = np.asarray(spec.weights)
    m = np.asarray(spec.scales)
    s = (np.power(m * y, 1.0 / spec.alpha) * w).sum(axis=1)
    x = s**spec.alpha
    return float(x[0]) if single else x


# -- Monte Carlo moments ------------------------------------------------------


@dataclass
class PortfolioMoments:
    """Monte Carlo moments of X and the first ``n_constraints`` coordinates.

    ``summary`` is ``None`` when the constraint covariance is singular; the
    bounds then collapse to ``e_x``.
    """

    e_x: float
    e_x_se: float
    det_ratio: float
    det_ratio_se: float
    n: int
    n_constraints: int
    x_min: float
    x_max: float
    summary: MomentSummary | None
    block_sums: np.ndarray = field(repr=False)
    notes: list = field(default_factory=list)


def _block_sums(x, ys, blocks):
    """Per-block sums of 1, x, y, x^2, x y and y y'."""
    k = ys.shape[1]
    z = np.column_stack([np.ones_like(x), x, ys])
    parts = np.array_split(np.arange(x.size), blocks)
    out = np.empty((len(parts), k + 2, k + 2))
    for i, idx in enumerate(parts):
        zi = z[idx]
        out[i] = zi.T @ zi
    return out


def _schur(S):
    """Mean of x and det ratio from the summed second-moment matrix S."""
    n = S[0, 0]
    mean = S[0, 1:] / n
    cov = S[1:, 1:] / n - np.outer(mean, mean)
    vx = cov[0, 0]
    if cov.shape[0] == 1:
        return mean[0], max(vx, 0.0), False
    cy = cov[1:, 1:]
    cxy = cov[0, 1:]
    scale = max(np.max(np.abs(np.diag(cy))), 1e-300)
    if np.linalg.cond(cy / scale) > 1e12:
        return mean[0], 0.0, True
    return mean[0], max(float(vx - cxy @ np.linalg.solve(cy, cxy)), 0.0), False


def draw(spec: PortfolioSpec, n: int, rng=None) -> np.ndarray:
    """Sample ``n`` simplex points from the spec's sampler."""
    y = np.asarray(spec.sampler(n, as_generator(rng if rng is not None else RngState(0))), dtype=float)
    if y.shape != (n, spec.d):
        raise ValueError(f"sampler returned shape {y.shape}, expected {(n, spec.d)}")
    return y


def mc_moments(spec: PortfolioSpec, n: int = DEFAULT_N, rng=None, n_constraints: int | None = None,
               blocks: int = JACKKNIFE_BLOCKS, samples=None) -> PortfolioMoments:
    """Monte Carlo moments with a delete-one-block jackknife error.

    Parameters
    ----------
    n_constraints : int, optional
        Number of leading coordinates of Y used as mean constraints;
        defaults to d - 1 (the last coordinate is implied by the simplex).
    samples : array, optional
        Pre-drawn simplex points; ``n`` and ``rng`` are then ignored.
    """
    y = draw(spec, n, rng) if samples is None else np.asarray(samples, dtype=float)
    n = y.shape[0]
    if n < 1000:
        raise ValueError("need at least 1000 Monte Carlo samples")
    k = spec.d - 1 if n_constraints is None else int(n_constraints)
    if not 0 <= k <= spec.d - 1:
        raise ValueError("n_constraints must lie between 0 and d - 1")
    x = portfolio_statistic(y, spec)
    ys = y[:, :k]
    B = _block_sums(x, ys, blocks)
    total = B.sum(axis=0)
    e_x, dr, singular = _schur(total)
    loo = np.array([_schur(total - b)[:2] for b in B])
    g = len(B)
    jk = np.sqrt((g - 1) / g * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    notes = []
    summary = None
    if singular:
        notes.append("constraint covariance is singular; bounds collapse to E X")
    else:
        summary = MomentSummary.from_weighted(x, ys, np.full(n, 1.0 / n))
    return PortfolioMoments(float(e_x), float(jk[0]), float(dr), float(jk[1]), n, k,
                            float(x.min()), float(x.max()), summary, B, notes)


# -- bounds --------------------------------------------------------------------


@dataclass
class VarBounds:
    """Bounds on E X and on the asymptotic VaR ratio (d E X)^(1/alpha)."""

    delta: float
    e_x: float
    e_x_lo: float
    e_x_hi: float
    ratio_lo: float
    ratio_hi: float
    mc_stderr: float
    clipped: bool
    exact_lo: float | None = None
    exact_hi: float | None = None
    regime_lo: Regime | None = None
    regime_hi: Regime | None = None
    notes: list = field(default_factory=list)


def var_ratio(e_x, spec: PortfolioSpec):
    """Map E X to the asymptotic ratio VaR_P(p) / VaR_1(p)."""
    return (spec.d * np.maximum(e_x, 0.0)) ** (1.0 / spec.alpha)


def _jackknife_bound_se(mom: PortfolioMoments, delta, sign):
    B = mom.block_sums
    total = B.sum(axis=0)
    vals = []
    for b in B:
        e, dr, _ = _schur(total - b)
        vals.append(e + sign * math.sqrt(delta * dr))
    vals = np.asarray(vals)
    g = len(vals)
    return float(math.sqrt((g - 1) / g * ((vals - vals.mean()) ** 2).sum()))


def exact_sample_bound(x, ys, delta, direction="upper"):
    """Exact bound on E X over the divergence ball around the empirical law.

    Solves the d + 1 optimality equations on the sample through their
    convex dual. Returns ``(value, regime, multipliers)``.
    """
    sign = 1.0 if direction == "upper" else -1.0
    x = np.asarray(x, dtype=float)
    n = x.size
    ys = np.asarray(ys, dtype=float).reshape(n, -1)
    w = np.full(n, 1.0 / n)
    ms = MomentSummary.from_weighted(x, ys, w)
    dr = ms.det_ratio
    sq = ms.e_x + sign * math.sqrt(delta * dr)
    if dr <= 0:
        return ms.e_x, Regime.SQRT_EXACT, None
    beta = ms.beta
    s = x - ms.mean_x - (ys - ms.mean_y) @ beta
    scale = sign * math.sqrt(delta / dr)
    if np.min(1.0 + scale * s) >= 0:
        return sq, Regime.SQRT_EXACT, None
    prob = WeightedDual(x, ys, w, None, sign, delta)
    try:
        theta = prob.solve(_sqrt_dual_start(ms, delta, sign))
    except SolverError:
        # continue in delta from the largest radius where the sqrt point is feasible
        neg = sign * s < 0
        d_star = float(np.min(dr / s[neg] ** 2))
        theta = _sqrt_dual_start(ms, d_star, sign)
        for d in np.geomspace(d_star, delta, 12)[1:]:
            prob = WeightedDual(x, ys, w, None, sign, float(d))
            theta = prob.solve(theta)
    return prob.value(theta), Regime.EXACT_SOLVED, prob.multipliers(theta)


def var_bounds(spec: PortfolioSpec, delta: float, n: int = DEFAULT_N, rng=None, exact: bool = False,
               moments: PortfolioMoments | None = None, samples=None) -> VarBounds:
    """Square-root (and optionally exact) bounds on the VaR ratio.

    The bounds on E X are mapped through x -> (d x)^(1/alpha). Bounds that
    leave the range of X over the sample are clipped to it. The exact bound
    is solved on the same samples and reported when the solver converges.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if samples is None and (moments is None or exact):
        samples = draw(spec, n, rng)
    mom = moments if moments is not None else mc_moments(spec, samples=samples)
    notes = list(mom.notes)
    half = math.sqrt(delta * mom.det_ratio)
    lo, hi = mom.e_x - half, mom.e_x + half
    clipped = False
    if lo < mom.x_min:
        lo, clipped = mom.x_min, True
        notes.append("lower bound clipped at the sample minimum of X")
    if hi > mom.x_max:
        hi, clipped = mom.x_max, True
        notes.append("upper bound clipped at the sample maximum of X")
    se = max(_jackknife_bound_se(mom, delta, 1.0), _jackknife_bound_se(mom, delta, -1.0))
    out = VarBounds(float(delta), mom.e_x, lo, hi, float(var_ratio(lo, spec)), float(var_ratio(hi, spec)),
                    se, clipped, notes=notes)
    if exact and delta > 0 and mom.summary is not None:
        y = np.asarray(samples, dtype=float)
        x = portfolio_statistic(y, spec)
        ys = y[:, : mom.n_constraints]
        for direction in ("lower", "upper"):
            try:
                val, reg, _ = exact_sample_bound(x, ys, delta, direction)
            except (SolverError, ValueError) as exc:
                notes.append(f"exact {direction}: {exc}")
                continue
            if direction == "lower":
                out.exact_lo, out.regime_lo = val, reg
            else:
                out.exact_hi, out.regime_hi = val, reg
    return out
