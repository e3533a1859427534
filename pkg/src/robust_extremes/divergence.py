"""Squared L2(mu) divergence between spectral models and its plug-in
estimate from angular data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import AtomicMeasure, IntegrationError, quad_segments
from .spectral import Empirical, SpectralModel

ENDPOINT_TOL = 1e-6


@dataclass(frozen=True)
class DominatingMeasure:
    """Reference measure defining the divergence geometry.

    ``kind`` is ``"p"`` (the reference model itself, giving the order-2
    Renyi geometry), ``"leb"`` (uniform on [0, 1]) or ``"custom"`` with an
    explicit :class:`AtomicMeasure`.
    """

    kind: str = "p"
    measure: AtomicMeasure | None = None

    def __post_init__(self):
        if self.kind not in ("p", "leb", "custom"):
            raise ValueError("kind must be 'p', 'leb' or 'custom'")
        if self.kind == "custom" and self.measure is None:
            raise ValueError("custom dominating measure needs an AtomicMeasure")

    @classmethod
    def reference(cls):
        return cls("p")

    @classmethod
    def lebesgue(cls):
        return cls("leb")

    @classmethod
    def custom(cls, measure: AtomicMeasure):
        return cls("custom", measure)

    def __str__(self):
        return {"p": "P", "leb": "Leb"}.get(self.kind, "custom")


def as_mu(mu) -> DominatingMeasure:
    if isinstance(mu, DominatingMeasure):
        return mu
    if isinstance(mu, AtomicMeasure):
        return DominatingMeasure.custom(mu)
    key = str(mu).lower()
    if key in ("p", "ref", "reference", "referencep"):
        return DominatingMeasure.reference()
    if key in ("leb", "lebesgue", "uniform"):
        return DominatingMeasure.lebesgue()
    raise ValueError(f"unknown dominating measure {mu!r}")


@dataclass(frozen=True)
class ResolvedMu:
    """The dominating measure expressed as log-density plus atoms."""

    logpdf: object  # callable or None
    atoms: tuple

    def atom_mass(self, loc):
        for a, m in self.atoms:
            if a == loc:
                return m
        return 0.0

    def pdf(self, y):
        with np.errstate(divide="ignore", over="ignore"):
            out = np.exp(self.logpdf(np.asarray(y, dtype=float)))
        return out


def resolve(mu, p: SpectralModel) -> ResolvedMu:
    """Resolve ``mu`` against the reference model ``p`` and check P << mu."""
    mu = as_mu(mu)
    if mu.kind == "p":
        has_cont = p.continuous_mass > 0 and not (isinstance(p, Empirical) and not p.has_density)
        return ResolvedMu(p.logpdf if has_cont else None, tuple((l, m) for l, m in p.atoms if m > 0))
    if mu.kind == "leb":
        res = ResolvedMu(lambda y: np.zeros_like(np.asarray(y, dtype=float)), ())
    else:
        m = mu.measure
        dens = m.density

        def logg(y):
            with np.errstate(divide="ignore"):
                return np.log(dens(y))

        res = ResolvedMu(logg if dens is not None else None, tuple((l, w) for l, w in m.atoms if w > 0))
    for loc, mass in p.atoms:
        if mass > 0 and res.atom_mass(loc) == 0:
            raise ValueError(f"reference model has an atom at {loc} where mu has none")
    return res


def _log_abs_diff(la, lb):
    """log|exp(la) - exp(lb)|, elementwise and stable."""
    hi = np.maximum(la, lb)
    lo = np.minimum(la, lb)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hi + np.log(-np.expm1(lo - hi))
    return np.where(np.isneginf(hi), -np.inf, out)


def _endpoint_blowup(logf, side):
    """Detect a non-integrable endpoint by the behaviour of y f(y) as y -> 0.

    For an integrable integrand y f(y) must vanish; evaluating it along a
    geometric sequence down to ~1e-304 distinguishes divergence from a slow
    but convergent approach.
    """
    u = np.array([-40.0, -100.0, -200.0, -350.0, -500.0, -690.0])
    y = np.exp(u)
    pts = y if side == 0 else 1.0 - y
    if side == 1:
        # 1 - e^u rounds to 1 below ~1e-16; beyond that the right end cannot
        # be probed in double precision
        keep = y > 1e-15
        u, pts = u[keep], pts[keep]
    with np.errstate(all="ignore"):
        vals = u + logf(pts)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    if vals.size < 2:
        return False
    return bool(vals[-1] > -25.0 and vals[-1] >= vals[-2] - 1e-9)


def divergence(q: SpectralModel, p: SpectralModel, mu="p", tol: float = 1e-9) -> float:
    """D_mu(Q, P) = E_mu (dQ/dmu - dP/dmu)^2, or ``math.inf``.

    Infinity is returned (not raised) when ``q`` is not absolutely
    continuous with respect to ``mu`` or the integral diverges.
    """
    r = resolve(mu, p)
    total = 0.0
    # atoms
    locs = {l for l, m in q.atoms if m > 0} | {l for l, _ in r.atoms}
    for loc in locs:
        qm, pm, mm = q.atom_mass(loc), p.atom_mass(loc), r.atom_mass(loc)
        if mm == 0:
            if qm > 0:
                return math.inf
            continue
        total += (qm - pm) ** 2 / mm
    # continuous part
    q_has = q.continuous_mass > 1e-15 and not (isinstance(q, Empirical) and not q.has_density)
    p_has = p.continuous_mass > 1e-15 and not (isinstance(p, Empirical) and not p.has_density)
    if not q_has and not p_has:
        return total
    if r.logpdf is None:
        return math.inf if q_has else total

    neg_inf = lambda y: np.full(np.shape(y), -np.inf)  # noqa: E731
    lq = q.logpdf if q_has else neg_inf
    lp = p.logpdf if p_has else neg_inf
    lg = r.logpdf

    def log_integrand(y):
        y = np.asarray(y, dtype=float)
        with np.errstate(all="ignore"):
            out = 2.0 * _log_abs_diff(lq(y), lp(y)) - lg(y)
        return np.where(np.isnan(out), np.inf, out)

    # q must vanish wherever mu has no density
    probe = np.linspace(0.0, 1.0, 2001)[1:-1]
    with np.errstate(all="ignore"):
        lgp = lg(probe)
        lqp = lq(probe)
    if np.any(np.isneginf(lgp) & np.isfinite(lqp)):
        return math.inf
    if _endpoint_blowup(log_integrand, 0) or _endpoint_blowup(log_integrand, 1):
        return math.inf

    def f(y):
        v = float(log_integrand(y))
        if v == np.inf:
            raise OverflowError
        return math.exp(v) if v > -745 else 0.0

    pts = (*getattr(q, "points", ()), *getattr(p, "points", ()), 0.5)
    if isinstance(q, Empirical):
        pts = (*pts, *q.grid[1:-1])
    if isinstance(p, Empirical):
        pts = (*pts, *p.grid[1:-1])
    try:
        cont = quad_segments(f, pts, tol)
    except (OverflowError, IntegrationError):
        return math.inf
    if not math.isfinite(cont):
        return math.inf
    return total + cont


def renyi2_radius(delta: float) -> float:
    """Order-2 Renyi radius of the D_P ball of size ``delta``: log(1 + delta)."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return math.log1p(delta)


# -- plug-in estimation ----------------------------------------------------


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    sd = np.std(x, ddof=1) if n > 1 else 0.0
    iqr = np.subtract(*np.percentile(x, [75, 25])) / 1.34 if n > 1 else 0.0
    spread = min(sd, iqr) if iqr > 0 else sd
    if spread <= 0:
        spread = 0.1
    return 0.9 * spread * n ** (-0.2)


def reflected_kde(x, grid, bandwidth):
    """Gaussian kernel density on [0, 1] with reflection at both ends."""
    x = np.asarray(x, dtype=float)
    grid = np.asarray(grid, dtype=float)
    h = float(bandwidth)
    centres = np.concatenate([x, -x, 2.0 - x])
    u = (grid[:, None] - centres[None, :]) / h
    dens = np.exp(-0.5 * u * u).sum(axis=1) / (x.size * h * math.sqrt(2.0 * math.pi))
    return dens


def split_endpoints(angles, endpoint_tol=ENDPOINT_TOL):
    """Return interior angles and the counts at 0 and 1."""
    y = np.asarray(angles, dtype=float)
    at0 = y <= endpoint_tol
    at1 = y >= 1.0 - endpoint_tol
    return y[~(at0 | at1)], int(at0.sum()), int(at1.sum())


def empirical_model(angles, bandwidth=None, endpoint_tol=ENDPOINT_TOL, n_grid=401) -> Empirical:
    """Kernel estimate of the continuous part plus endpoint frequencies."""
    y = np.asarray(angles, dtype=float)
    k = y.size
    inner, n0, n1 = split_endpoints(y, endpoint_tol)
    atoms = [(0.0, n0 / k), (1.0, n1 / k)]
    grid = np.linspace(0.0, 1.0, n_grid)
    if inner.size == 0:
        return Empirical(grid, np.zeros(n_grid), atoms)
    h = silverman_bandwidth(inner) if bandwidth is None else float(bandwidth)
    dens = reflected_kde(inner, grid, h)
    dens *= (inner.size / k) / np.trapezoid(dens, grid)
    return Empirical(grid, dens, atoms)


def estimate_divergence(angles, p: SpectralModel, mu="p", bandwidth=None, endpoint_tol=ENDPOINT_TOL) -> float:
    """Plug-in divergence of the data from ``p``.

    ``angles`` is an array of angles in [0, 1] or an object with an
    ``angles`` attribute. Angles within ``endpoint_tol`` of 0 or 1 are
    counted as atoms.
    """
    y = np.asarray(getattr(angles, "angles", angles), dtype=float)
    if y.size < 50:
        raise ValueError("need at least 50 angles to estimate a divergence")
    emp = empirical_model(y, bandwidth, endpoint_tol)
    return divergence(emp, p, mu)
