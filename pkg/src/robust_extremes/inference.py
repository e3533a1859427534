"""Angular samples, maximum likelihood fits, bootstrap envelopes and the
simulate-fit-bound experiment pipeline."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, logit

from .bounds import clip_to_triangle, exact_bound, moments_for_pickands, sqrt_bound
from .divergence import ENDPOINT_TOL, divergence, empirical_model, split_endpoints
from .numerics import RngState, as_generator
from .spectral import (
    AsymmetricLogistic,
    BivariateSample,
    ExtremalT,
    HuslerReiss,
    SpectralModel,
    pickands,
    simulate_asym_logistic,
    to_pareto_margins,
)

FAMILIES = ("hr", "al", "et")
# near-endpoint angles of pre-limit data are counted as atoms for families
# that have atoms; atom-free families only accept exact endpoints
ATOM_ENDPOINT_TOL = 0.05


@dataclass(frozen=True)
class AngularSample:
    """Angles of the k largest L1 radii.

    ``threshold`` is the largest radius not selected, so every kept radius
    exceeds it.
    """

    angles: np.ndarray
    n_total: int
    threshold: float

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("angles must be a nonempty 1-d array")
        if np.any((a < 0) | (a > 1)):
            raise ValueError("angles must lie in [0, 1]")
        if a.size > self.n_total:
            raise ValueError("k cannot exceed the total sample size")
        object.__setattr__(self, "angles", a)

    @property
    def k(self) -> int:
        return self.angles.size

    def endpoint_counts(self, tol: float = ENDPOINT_TOL) -> tuple:
        _, n0, n1 = split_endpoints(self.angles, tol)
        return n0, n1

    def resample(self, idx) -> "AngularSample":
        return AngularSample(self.angles[idx], self.n_total, self.threshold)


def polar_topk(s: BivariateSample, k: int) -> AngularSample:
    """Keep the angles z1 / (z1 + z2) of the k rows with the largest z1 + z2."""
    data = np.asarray(getattr(s, "data", s), dtype=float)
    n = data.shape[0]
    if not 0 < k < n:
        raise ValueError("need 0 < k < number of rows")
    r = data.sum(axis=1)
    if np.any(r <= 0):
        raise ValueError("rows with zero radius have no angle")
    order = np.argsort(r, kind="stable")
    top = order[n - k:]
    thr = float(r[order[n - k - 1]])
    with np.errstate(invalid="ignore"):
        ang = data[top, 0] / r[top]
    # infinite coordinates: the angle is the share of the infinite part
    inf_rows = ~np.isfinite(ang)
    if np.any(inf_rows):
        z = data[top][inf_rows]
        ang[inf_rows] = np.isinf(z[:, 0]) / (np.isinf(z[:, 0]) + np.isinf(z[:, 1]))
    return AngularSample(ang, n, thr)


# -- maximum likelihood --------------------------------------------------------


def _decode(family, theta):
    theta = np.asarray(theta, dtype=float)
    if family == "hr":
        return HuslerReiss(float(np.exp(np.clip(theta[0], -8.0, 6.0))))
    if family == "al":
        a, b1, b2 = expit(np.clip(theta, -30, 30))
        a = min(max(a, 1e-4), 1 - 1e-4)
        return AsymmetricLogistic(float(a), float(b1), float(b2))
    if family == "et":
        rho = 0.999 * math.tanh(theta[0])
        a = 0.05 + 49.95 * float(expit(np.clip(theta[1], -30, 30)))
        return ExtremalT(rho, a)
    raise ValueError(f"unknown family {family!r}")


def _encode(model: SpectralModel):
    fam = model.family
    if fam == "hr":
        return np.array([math.log(model.lam)])
    if fam == "al":
        return logit(np.clip([model.a, model.b1, model.b2], 1e-6, 1 - 1e-6))
    if fam == "et":
        return np.array([math.atanh(model.rho / 0.999), float(logit((model.a - 0.05) / 49.95))])
    raise ValueError(f"cannot encode family {fam!r}")


_START_BOX = {
    "hr": ([-1.5], [1.0]),
    "al": ([-2.0, -1.0, -1.0], [2.0, 3.0, 3.0]),
    "et": ([-1.0, -5.0], [2.0, -1.0]),
}


def log_likelihood(model: SpectralModel, sample, endpoint_tol: float = ENDPOINT_TOL) -> float:
    """Angles within ``endpoint_tol`` of 0 or 1 score the atom mass there."""
    y = np.asarray(getattr(sample, "angles", sample), dtype=float)
    inner, n0, n1 = split_endpoints(y, endpoint_tol)
    total = 0.0
    for cnt, loc in ((n0, 0.0), (n1, 1.0)):
        if cnt:
            m = model.atom_mass(loc)
            if m <= 0:
                return -math.inf
            total += cnt * math.log(m)
    if inner.size:
        if model.continuous_mass <= 0:
            return -math.inf
        lp = model.logpdf(inner)
        total += float(np.sum(lp))
    return total if np.isfinite(total) else -math.inf


@dataclass
class FitResult:
    model: SpectralModel
    loglik: float
    n_starts: int
    converged: bool


def fit_mle(family: str, sample, endpoint_tol: float | None = None, n_starts: int = 5,
            start: SpectralModel | None = None) -> FitResult:
    """Maximum likelihood fit of a spectral family to angles.

    Nelder-Mead on log/logit-transformed parameters from ``n_starts``
    scrambled-Halton starting points (or from ``start`` alone).
    """
    family = family.lower()
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if endpoint_tol is None:
        endpoint_tol = ENDPOINT_TOL if family == "hr" else ATOM_ENDPOINT_TOL
    y = np.asarray(getattr(sample, "angles", sample), dtype=float)
    inner, n0, n1 = split_endpoints(y, endpoint_tol)
    if family == "hr" and (n0 or n1):
        raise ValueError("Husler-Reiss has no atoms but the sample has endpoint angles")

    def nll(theta):
        try:
            m = _decode(family, theta)
        except ValueError:
            return 1e300
        v = log_likelihood(m, y, endpoint_tol)
        return -v if np.isfinite(v) else 1e300

    if start is not None:
        starts = [_encode(start)]
    else:
        lo, hi = map(np.asarray, _START_BOX[family])
        qmc = stats.qmc.Halton(d=lo.size, scramble=True, seed=12345)
        starts = list(lo + (hi - lo) * qmc.random(n_starts))
    best = None
    for x0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r = optimize.minimize(nll, x0, method="Nelder-Mead",
                                  options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 4000, "maxfev": 8000})
        if best is None or r.fun < best.fun:
            best = r
    if best.fun >= 1e300:
        raise RuntimeError(f"{family} likelihood is -inf at every start; support mismatch")
    return FitResult(_decode(family, best.x), -float(best.fun), len(starts), bool(best.success))


# -- bootstrap -----------------------------------------------------------------


@dataclass
class Envelope:
    z: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    center: np.ndarray
    n_used: int
    n_failed: int


def bootstrap_pickands(sample: AngularSample, family: str, B: int, z_grid, rng=None,
                       fitted: SpectralModel | None = None, endpoint_tol=None, level: float = 0.95) -> Envelope:
    """Pointwise percentile envelope of refitted Pickands curves.

    Each resample is refitted from the full-sample estimate. The envelope is
    widened to contain the full-sample curve. With ``B == 1`` the envelope
    is the single refitted curve.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    z = np.asarray(z_grid, dtype=float)
    if fitted is None:
        fitted = fit_mle(family, sample, endpoint_tol).model
    center = pickands(fitted, z)
    gen = as_generator(rng if rng is not None else RngState(0, 1))
    idx = gen.integers(0, sample.k, size=(B, sample.k))
    curves, failed = [], 0
    for b in range(B):
        try:
            m = fit_mle(family, sample.resample(idx[b]), endpoint_tol, start=fitted).model
        except (ValueError, RuntimeError):
            failed += 1
            continue
        curves.append(pickands(m, z))
    if not curves:
        raise RuntimeError("every bootstrap refit failed")
    c = np.array(curves)
    if B == 1:
        return Envelope(z, c[0].copy(), c[0].copy(), center, 1, failed)
    q = (1.0 - level) / 2.0
    lo = np.quantile(c, q, axis=0)
    hi = np.quantile(c, 1.0 - q, axis=0)
    return Envelope(z, np.minimum(lo, center), np.maximum(hi, center), center, len(curves), failed)


# -- bounds within a parametric family -------------------------------------------


def _scalar_family(model: SpectralModel):
    """Map a model to (parameter value, builder, admissible range)."""
    fam = model.family
    if fam == "hr":
        return model.lam, lambda t: HuslerReiss(t), (1e-3, 50.0)
    if fam == "al":
        return model.a, lambda t: AsymmetricLogistic(t, model.b1, model.b2), (1e-3, 1 - 1e-3)
    if fam == "et":
        return model.rho, lambda t: ExtremalT(t, model.a), (-0.999, 0.999)
    raise ValueError(f"no scalar sub-family for {fam!r}")


def _edge(d, t0, t_end, delta, n_probe=60):
    """Last parameter between t0 and t_end with divergence <= delta."""
    ts = t0 + (t_end - t0) * np.linspace(0, 1, n_probe + 1) ** 2
    prev = t0
    for t in ts[1:]:
        v = d(t)
        if not v <= delta:
            f = lambda s: min(d(s), 1e300) - delta  # noqa: E731
            return optimize.brentq(f, prev, t, xtol=1e-12)
        prev = t
    return t_end


def model_class_bounds(family: str, model: SpectralModel, z: float, mu="p", delta: float = 0.1,
                       direction: str = "upper") -> tuple:
    """Extreme of A(z) over family members within divergence ``delta`` of ``model``.

    One scalar parameter is varied (HR: lambda; AL: a with b1, b2 fixed; ET:
    rho with a fixed). Returns ``(value, parameter)``.
    """
    if family != model.family:
        raise ValueError("model must belong to the searched family")
    t0, build, (lo_lim, hi_lim) = _scalar_family(model)
    a0 = pickands(model, z)
    if delta <= 0:
        return a0, t0

    def d(t):
        try:
            return divergence(build(float(t)), model, mu)
        except ValueError:
            return math.inf

    t_lo = _edge(d, t0, lo_lim, delta)
    t_hi = _edge(d, t0, hi_lim, delta)
    if t_hi - t_lo <= 0:
        return a0, t0
    sign = 1.0 if direction == "upper" else -1.0
    cands = [(a0, t0), (pickands(build(t_lo), z), t_lo), (pickands(build(t_hi), z), t_hi)]
    r = optimize.minimize_scalar(lambda t: -sign * pickands(build(t), z), bounds=(t_lo, t_hi),
                                 method="bounded", options={"xatol": 1e-10})
    cands.append((-sign * r.fun, float(r.x)))
    best = max(cands, key=lambda c: sign * c[0])
    return float(best[0]), float(best[1])


# -- experiment pipeline ---------------------------------------------------------


def default_endpoint_tol(family: str, mu="p") -> float:
    """Atom tolerance for angles: wide for families with endpoint atoms
    under mu = P, tight otherwise."""
    return ATOM_ENDPOINT_TOL if (family != "hr" and str(mu).lower() == "p") else ENDPOINT_TOL


@dataclass(frozen=True)
class ExperimentConfig:
    true_model: AsymmetricLogistic
    n: int
    k: int
    fit_family: str
    mu: str = "p"
    boot: int = 300
    z_grid: tuple = tuple(np.round(np.linspace(0.0, 1.0, 51), 10))
    bandwidth: float | None = None
    endpoint_tol: float | None = None


EXPERIMENTS = {
    1: ExperimentConfig(AsymmetricLogistic(0.4, 0.7, 1.0), 20000, 500, "et", "p"),
    2: ExperimentConfig(AsymmetricLogistic(0.5, 1.0, 1.0), 20000, 500, "hr", "leb"),
    3: ExperimentConfig(AsymmetricLogistic(0.5, 1.0, 1.0), 2000, 500, "et", "p"),
    4: ExperimentConfig(AsymmetricLogistic(0.5, 0.9, 0.5), 20000, 500, "al", "p"),
}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seed: int
    sample: AngularSample
    fitted: SpectralModel
    loglik: float
    delta_hat: float
    delta_true: float
    z: np.ndarray
    a_true: np.ndarray
    a_fit: np.ndarray
    robust_lo: np.ndarray
    robust_hi: np.ndarray
    boot_lo: np.ndarray | None
    boot_hi: np.ndarray | None
    empirical: SpectralModel
    warnings: list = field(default_factory=list)

    def band_contains_truth(self, tol=1e-9) -> bool:
        return bool(np.all((self.robust_lo - tol <= self.a_true) & (self.a_true <= self.robust_hi + tol)))


def robust_band(model: SpectralModel, z_grid, delta: float, mu="p", clip=True, exact=False):
    """Robust bounds on A over a z-grid (trivially 1 at z = 0, 1).

    Square-root bounds by default; with ``exact`` the exact bounds, falling
    back to the square-root value where the solver fails.
    """
    z = np.asarray(z_grid, dtype=float)
    lo = np.ones_like(z)
    hi = np.ones_like(z)
    if math.isfinite(delta):
        for i, zz in enumerate(z):
            if not 0.0 < zz < 1.0:
                continue
            if exact and delta > 0:
                lo[i] = exact_bound(model, float(zz), mu, delta, "lower").value
                hi[i] = exact_bound(model, float(zz), mu, delta, "upper").value
            else:
                ms = moments_for_pickands(model, float(zz), mu)
                lo[i] = sqrt_bound(ms, delta, "lower")
                hi[i] = sqrt_bound(ms, delta, "upper")
    else:
        lo = np.maximum(z, 1.0 - z)
    if clip:
        lo, hi = clip_to_triangle(z, lo, hi)
    return lo, hi


def run_experiment(config: ExperimentConfig, seed: int = 0, boot: int | None = None) -> ExperimentResult:
    """simulate -> polar top-k -> fit -> divergences -> sqrt band -> bootstrap."""
    notes = []
    data = simulate_asym_logistic(config.true_model.a, config.true_model.b1, config.true_model.b2,
                                  config.n, RngState(seed, 0))
    sample = polar_topk(to_pareto_margins(data), config.k)
    fam = config.fit_family
    tol = default_endpoint_tol(fam, config.mu) if config.endpoint_tol is None else config.endpoint_tol
    fit = fit_mle(fam, sample, tol)
    emp = empirical_model(sample.angles, config.bandwidth, tol)
    delta_hat = divergence(emp, fit.model, config.mu)
    delta_true = divergence(config.true_model, fit.model, config.mu)
    if math.isinf(delta_hat) and config.mu == "p":
        notes.append("divergence is infinite under mu=P; choose mu=leb")
    z = np.asarray(config.z_grid, dtype=float)
    a_true = pickands(config.true_model, z)
    a_fit = pickands(fit.model, z)
    lo, hi = robust_band(fit.model, z, delta_hat, config.mu)
    b = config.boot if boot is None else boot
    blo = bhi = None
    if b and b > 0:
        env = bootstrap_pickands(sample, fam, b, z, RngState(seed, 1), fitted=fit.model, endpoint_tol=tol)
        blo, bhi = env.lower, env.upper
        if env.n_failed:
            notes.append(f"{env.n_failed} bootstrap refits failed")
    return ExperimentResult(config, seed, sample, fit.model, fit.loglik, delta_hat, delta_true, z, a_true,
                            a_fit, lo, hi, blo, bhi, emp, notes)
