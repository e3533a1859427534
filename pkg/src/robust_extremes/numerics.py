"""Shared numeric kernel: integration against densities with atoms,
small nonlinear systems and random sampling primitives."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _integrate

QUAD_TOL = 1e-9
ROOT_TOL = 1e-8
QUAD_LIMIT = 400


class IntegrationError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


class SolverError(RuntimeError):
    """Nonlinear solver stopped without meeting the residual tolerance."""

    def __init__(self, message, x=None, residual=None):
        super().__init__(message)
        self.x = x
        self.residual = residual


@dataclass(frozen=True)
class AtomicMeasure:
    """A measure on [0, 1]: a Lebesgue density plus finitely many atoms.

    Parameters
    ----------
    density : callable or None
        Vectorised density of the continuous part; ``None`` means no
        continuous part.
    atoms : sequence of (location, mass)
        Point masses. Locations must be distinct, masses nonnegative.
    points : sequence of float
        Interior points where the density is not smooth; passed on to the
        quadrature as breakpoints.
    """

    density: Callable | None = None
    atoms: tuple = ()
    points: tuple = field(default=())

    def __post_init__(self):
        atoms = tuple((float(loc), float(m)) for loc, m in self.atoms)
        locs = [loc for loc, _ in atoms]
        if len(set(locs)) != len(locs):
            raise ValueError("atom locations must be distinct")
        if any(m < 0 for _, m in atoms):
            raise ValueError("atom masses must be nonnegative")
        if any(not 0.0 <= loc <= 1.0 for loc in locs):
            raise ValueError("atom locations must lie in [0, 1]")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "points", tuple(sorted(float(p) for p in self.points)))

    @classmethod
    def lebesgue(cls):
        return cls(density=_uniform_density)

    def total_mass(self, tol=QUAD_TOL):
        return integrate(_one, self, tol)


def _uniform_density(y):
    return np.ones_like(np.asarray(y, dtype=float))


def _one(y):
    return np.ones_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class RngState:
    """Seed plus stream id; identical pairs reproduce identical draws."""

    seed: int = 0
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.default_rng(ss)

    def spawn(self, stream: int) -> "RngState":
        return RngState(self.seed, int(stream))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngState, a Generator, an int seed or None."""
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _segments(points: Sequence[float], lo=0.0, hi=1.0):
    pts = sorted({lo, hi, *(float(p) for p in points if lo < p < hi)})
    return list(zip(pts[:-1], pts[1:]))


def quad_segments(g, points=(), tol=QUAD_TOL, lo=0.0, hi=1.0):
    """Integrate a scalar function over [lo, hi], split at ``points``.

    Each piece is handled by QUADPACK's extrapolating rule, which never
    evaluates the endpoints and copes with integrable endpoint
    singularities of spectral densities.
    """
    segs = _segments(points, lo, hi)
    total = 0.0
    seg_tol = tol / max(len(segs), 1)
    for a, b in segs:
        if b - a <= 0.0:
            continue
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            val, err = _integrate.quad(g, a, b, epsabs=seg_tol, epsrel=0.0, limit=QUAD_LIMIT)
        if not np.isfinite(val):
            raise IntegrationError(f"non-finite integral on [{a}, {b}]")
        if caught and err > max(1e3 * seg_tol, 1e-7 * abs(val), 1e-6):
            raise IntegrationError(
                f"quadrature on [{a:.3g}, {b:.3g}] stopped at error {err:.2e} "
                f"after {QUAD_LIMIT} subdivisions"
            )
        total += val
    return total


def integrate(f: Callable, m: AtomicMeasure, tol: float = QUAD_TOL, points=()) -> float:
    """Return the integral of ``f`` against ``m`` (continuous part plus atoms).

    Parameters
    ----------
    f : callable
        Bounded function on [0, 1].
    m : AtomicMeasure
    tol : float
        Absolute error target for the continuous part.
    points : sequence of float
        Extra breakpoints where ``f`` has kinks.
    """
    total = 0.0
    if m.density is not None:
        dens = m.density

        def g(y):
            d = dens(y)
            return 0.0 if d == 0.0 else float(f(y)) * float(d)

        total = quad_segments(g, (*m.points, *points), tol)
    for loc, mass in m.atoms:
        if mass > 0.0:
            total += float(f(loc)) * mass
    return total


N_GAUSS = 10
_GL_X, _GL_W = np.polynomial.legendre.leggauss(N_GAUSS)
GRADE_DEPTH = 52


def _mirror(density):
    def right(t):
        return density(1.0 - np.asarray(t, dtype=float))

    return right


def _power_tail(f, e):
    """(centroid, mass) on [0, e] of the power law through f(e) and f(e / 2)."""
    with np.errstate(all="ignore"):
        v1, v2 = (float(np.asarray(f(np.array([t])), dtype=float)[0]) for t in (e, 0.5 * e))
    v1 = v1 if np.isfinite(v1) else 0.0
    v2 = v2 if np.isfinite(v2) else 0.0
    if v1 <= 0.0 or v2 <= 0.0:
        return 0.5 * e, 0.0
    gam = max(np.log(v1 / v2) / np.log(2.0), -1.0 + 1e-3)
    return e * (gam + 1.0) / (gam + 2.0), v1 * e / (gam + 1.0)


def end_panel_nodes(density, e0, e1, residual=None, density_right=None):
    """One node for each of the end panels [0, e0] and [1 - e1, 1].

    Spectral densities behave like a power of the distance to the endpoint,
    so each panel mass is read off the local exponent and placed at the
    centroid of that power law. When the mass missed by the interior panels
    is known (``residual``) it is split between the two ends in the same
    proportion; this keeps the total right even when the density has mass
    below double-precision resolution of the endpoints.
    ``density_right(t)`` evaluates the density at 1 - t for exact ``t``.
    Returns ``((y0, w0), (y1, w1))``.
    """
    right = density_right or _mirror(density)
    (c0, m0), (c1, m1) = _power_tail(density, e0), _power_tail(right, e1)
    if residual is not None:
        r = max(float(residual), 0.0)
        tot = m0 + m1
        m0, m1 = (r * m0 / tot, r * m1 / tot) if tot > 0 else (0.5 * r, 0.5 * r)
    return (c0, m0), (1.0 - c1, m1)


def graded_nodes(points=()):
    """Gauss-Legendre panels on (0, 1) graded geometrically towards both ends.

    Breakpoints are 2^-j and 1 - 2^-j for j = 1..52, a uniform grid of 33
    points and ``points``. Panels left of 1/2 are described by their nodes
    y; panels right of 1/2 by the exact distances t = 1 - y, so densities
    can be evaluated near 1 without rounding. The outermost panels
    [0, e0] and [1 - e1, 1] are left out.

    Returns ``(y, wy, t, wt, e0, e1)`` with plain quadrature weights.
    """
    grade = 2.0 ** -np.arange(1, GRADE_DEPTH + 1)
    uni = np.linspace(0.0, 1.0, 33)
    pts = np.asarray([p for p in points if 0.0 < p < 1.0], dtype=float)
    left = np.unique(np.concatenate([grade, uni[uni <= 0.5], pts[pts <= 0.5]]))
    right = np.unique(np.concatenate([grade, 1.0 - uni[uni >= 0.5], 1.0 - pts[pts > 0.5]]))
    left = left[left > 0.0]
    right = right[right > 0.0]

    def gl(br):
        a, b = br[:-1], br[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        return (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel(), (half[:, None] * _GL_W[None, :]).ravel()

    y, wy = gl(left)
    t, wt = gl(right)
    return y, wy, t, wt, float(left[0]), float(right[0])


def _finite(v):
    v = np.asarray(v, dtype=float)
    return np.where(np.isfinite(v), v, 0.0)


def graded_rule(density, points=(), total=None, density_right=None):
    """Nodes and density-weighted weights on (0, 1) from :func:`graded_nodes`.

    ``total`` is the known mass of the density, if any; the end panels then
    carry exactly the mass the interior misses. ``density_right(t)`` gives
    the density at 1 - t for exact ``t``.
    """
    right = density_right or _mirror(density)
    y, wy, t, wt, e0, e1 = graded_nodes(points)
    w = np.concatenate([wy * _finite(density(y)), wt * _finite(right(t))])
    resid = None if total is None else total - w.sum()
    (y0, w0), (y1, w1) = end_panel_nodes(density, e0, e1, resid, right)
    return np.concatenate([[y0], y, 1.0 - t, [y1]]), np.concatenate([[w0], w, [w1]])


def fd_jacobian(F, x, fx=None):
    """Central-difference Jacobian with step 1e-6 * max(1, |x_j|)."""
    x = np.asarray(x, dtype=float)
    k = x.size
    cols = []
    for j in range(k):
        h = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros(k)
        e[j] = h
        cols.append((np.asarray(F(x + e), dtype=float) - np.asarray(F(x - e), dtype=float)) / (2 * h))
    return np.column_stack(cols)


def solve_system(F: Callable, x0, tol: float = ROOT_TOL, max_iter: int = 100) -> np.ndarray:
    """Find ``x`` with ``max|F(x)| <= tol`` by damped Newton iteration.

    The Jacobian is approximated by central differences and each Newton
    step is shortened by backtracking until the squared residual drops.

    Raises
    ------
    SolverError
        When ``max_iter`` is reached or no descent step exists; the last
        iterate is attached as ``err.x``.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    fx = np.atleast_1d(np.asarray(F(x), dtype=float))
    if fx.shape != x.shape:
        raise ValueError("F must map R^k to R^k")
    for _ in range(max_iter):
        res = np.max(np.abs(fx))
        if not np.isfinite(res):
            raise SolverError("residual is not finite", x, res)
        if res <= tol:
            return x
        J = fd_jacobian(F, x, fx)
        try:
            step = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -fx, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            raise SolverError("singular Jacobian", x, res)
        f0 = float(fx @ fx)
        t = 1.0
        while t > 1e-10:
            xn = x + t * step
            fn = np.atleast_1d(np.asarray(F(xn), dtype=float))
            if np.all(np.isfinite(fn)) and float(fn @ fn) < (1.0 - 1e-4 * t) * f0:
                break
            t *= 0.5
        else:
            raise SolverError("line search failed", x, res)
        x, fx = xn, fn
    res = np.max(np.abs(fx))
    if res <= tol:
        return x
    raise SolverError(f"no root after {max_iter} iterations", x, res)


def sample_positive_stable(a: float, rng, size=None):
    """Draw positive a-stable variables with Laplace transform exp(-t**a).

    Uses Kanter's representation through a uniform angle and a unit
    exponential, so no rejection step is needed.
    """
    if not 0.0 < a <= 1.0:
        raise ValueError("stable index must lie in (0, 1]")
    gen = as_generator(rng)
    if a == 1.0:
        return np.ones(size)
    u = gen.uniform(0.0, np.pi, size=size)
    w = gen.exponential(size=size)
    s = (np.sin(a * u) / np.sin(u) ** (1.0 / a)) * (np.sin((1.0 - a) * u) / w) ** ((1.0 - a) / a)
    return s
