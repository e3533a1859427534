"""Robust bounds on E X over divergence balls around a spectral model.

The target is the Pickands integrand X(z) and the side constraint is the
mean of the angle Y. Given a reference model P and a dominating measure mu
with L = dP/dmu, the robust upper bound is

    sup { E_mu[L' X] : L' >= 0, E_mu L' = 1, E_mu[L' Y] = E_P Y,
          E_mu (L' - L)^2 <= delta }

and the lower bound is the corresponding infimum. The closed-form square
root bound is exact below a threshold ``delta_star``; above ``delta_star_star``
the optimum is the trivial extreme of the Pickands triangle; in between the
optimality system is solved numerically.

Expectations are computed on a panel Gauss-Legendre rule that is graded
towards both endpoints and split at every kink of the integrand, so each
evaluation of the optimality system is a handful of vector operations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .divergence import as_mu, resolve
from .numerics import AtomicMeasure, SolverError, _finite, end_panel_nodes, graded_nodes, solve_system
from .spectral import Empirical, SpectralModel, pickands_integrand

_TINY = 5e-324


class Regime(str, enum.Enum):
    SQRT_EXACT = "SQRT_EXACT"
    EXACT_SOLVED = "EXACT_SOLVED"
    DEGENERATE = "DEGENERATE"
    SQRT_FALLBACK = "SQRT_FALLBACK"  # solver failed; sqrt bound is conservative


def _check_direction(direction):
    if direction not in ("upper", "lower"):
        raise ValueError("direction must be 'upper' or 'lower'")
    return 1.0 if direction == "upper" else -1.0


# -- moments ----------------------------------------------------------------


@dataclass(frozen=True)
class MomentSummary:
    """Moments of the target X and the constraint vector Y.

    ``e_x`` is the reference mean E_P X (the centre of the bounds); the
    remaining entries are moments under the dominating measure mu. ``cov_xy``
    has one entry per constraint and ``cov_y`` is the constraint covariance.
    """

    e_x: float
    mean_x: float
    var_x: float
    cov_xy: np.ndarray
    cov_y: np.ndarray
    mean_y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cov_xy", np.atleast_1d(np.asarray(self.cov_xy, dtype=float)))
        object.__setattr__(self, "cov_y", np.atleast_2d(np.asarray(self.cov_y, dtype=float)))
        object.__setattr__(self, "mean_y", np.atleast_1d(np.asarray(self.mean_y, dtype=float)))
        if np.linalg.det(self.cov_y) <= 0:
            raise ValueError("constraint covariance is singular; the model is degenerate")

    @property
    def beta(self) -> np.ndarray:
        return np.linalg.solve(self.cov_y, self.cov_xy)

    @property
    def det_ratio(self) -> float:
        """Schur complement var X - cov_xy' cov_y^-1 cov_xy (clipped at 0)."""
        return max(0.0, float(self.var_x - self.cov_xy @ self.beta))

    @property
    def var_y(self):
        return float(self.cov_y[0, 0]) if self.cov_y.shape == (1, 1) else self.cov_y

    @classmethod
    def from_weighted(cls, x, ys, w, lik=None):
        """Moments from weighted points (weights of the dominating measure).

        ``lik`` is L = dP/dmu at the points; ``None`` means mu = P.
        """
        x = np.asarray(x, dtype=float)
        ys = np.asarray(ys, dtype=float).reshape(x.size, -1)
        w = np.asarray(w, dtype=float)
        tot = w.sum()
        mx = float(w @ x) / tot
        my = (w @ ys) / tot
        dx, dy = x - mx, ys - my
        e_x = mx if lik is None else float((w * lik) @ x)
        return cls(e_x, mx, float(w @ dx**2) / tot, (w * dx) @ dy / tot, (dy.T * w) @ dy / tot, my)


def sqrt_bound(ms: MomentSummary, delta: float, direction: str = "upper") -> float:
    """E_P X plus or minus sqrt(delta * det_ratio)."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    sign = _check_direction(direction)
    return ms.e_x + sign * math.sqrt(delta * ms.det_ratio)


def clip_to_triangle(z, lower, upper):
    """Restrict bound curves to the admissible Pickands region [z v 1-z, 1]."""
    z = np.asarray(z, dtype=float)
    floor = np.maximum(z, 1.0 - z)
    return np.clip(lower, floor, 1.0), np.clip(upper, floor, 1.0)


# -- the (model, z, mu) frame -----------------------------------------------


class PickandsFrame:
    """Quadrature frame for X(z) and Y under a dominating measure.

    Parameters
    ----------
    model : SpectralModel
        Reference model P.
    z : float
        Argument of the Pickands function, in (0, 1).
    mu : str, DominatingMeasure or AtomicMeasure
        ``"p"`` for mu = P, ``"leb"`` for Lebesgue measure.
    """

    def __init__(self, model: SpectralModel, z: float, mu="p"):
        if not 0.0 < z < 1.0:
            raise ValueError("z must lie in the open interval (0, 1)")
        self.model = model
        self.z = float(z)
        self.mu = as_mu(mu)
        res = resolve(self.mu, model)
        kind = self.mu.kind
        self._x = pickands_integrand(self.z)
        pdf, pdf_r = model.pdf, model.pdf_right
        if kind == "p":
            has = res.logpdf is not None
            self._g, self._g_right = (pdf, pdf_r) if has else (None, None)
            self._lik = self._lik_right = None
            self._g_total = model.continuous_mass
        elif kind == "leb":
            self._g, self._g_right = _ones, _ones
            self._lik, self._lik_right = pdf, pdf_r
            self._g_total = 1.0
        else:
            dens = self.mu.measure.density

            def ratio(p, g):
                p = np.asarray(p, dtype=float)
                g = np.asarray(g, dtype=float)
                with np.errstate(divide="ignore", invalid="ignore"):
                    return np.where(g > 0, p / np.where(g > 0, g, 1.0), 0.0)

            self._g = dens
            self._g_right = None if dens is None else (lambda t: dens(1.0 - np.asarray(t, dtype=float)))
            self._lik = lambda y: ratio(pdf(y), dens(y))
            self._lik_right = lambda t: ratio(pdf_r(t), self._g_right(t))
            self._g_total = None
        self._p_total = model.continuous_mass
        atoms = [(loc, m, model.atom_mass(loc) / m) for loc, m in res.atoms if m > 0]
        self.atom_y = np.array([a[0] for a in atoms])
        self.atom_w = np.array([a[1] for a in atoms])
        self.atom_L = np.array([a[2] for a in atoms])
        grade = [2.0**-j for j in range(1, 53)]
        base = {0.0, 1.0, self.z, *grade, *(1.0 - g for g in grade), *np.linspace(0, 1, 33)}
        self._points = {self.z, *getattr(model, "points", ())}
        if isinstance(model, Empirical):
            self._points |= set(model.grid.tolist())
        if self.mu.measure is not None:
            self._points |= set(getattr(self.mu.measure, "points", ()))
        base |= self._points
        self._base = np.array(sorted(b for b in base if 0.0 <= b <= 1.0))
        self._cache_key = None
        self._cache = None

    # pointwise functions
    def X(self, y):
        return self._x(np.asarray(y, dtype=float))

    def L(self, y):
        y = np.asarray(y, dtype=float)
        if self._lik is None:
            return np.ones_like(y)
        return np.asarray(self._lik(y), dtype=float)

    def _L_right(self, t):
        t = np.asarray(t, dtype=float)
        if self._lik_right is None:
            return np.ones_like(t)
        return np.asarray(self._lik_right(t), dtype=float)

    @property
    def has_continuous(self) -> bool:
        return self._g is not None

    def rule(self, kinks=()):
        """Return (y, w, L) for the continuous part plus atoms.

        ``kinks`` are extra breakpoints; each is surrounded by a small
        geometric cluster of panels so that one-sided power behaviour at the
        kink is resolved.
        """
        key = tuple(np.round(np.asarray(kinks, dtype=float), 15))
        if key == self._cache_key:
            return self._cache
        if self._g is None:
            y = self.atom_y.copy()
            out = (y, self.atom_w.copy(), self.atom_L.copy())
        else:
            pts = set(self._points)
            for k in key:
                if 0.0 < k < 1.0:
                    pts.add(k)
                    for j in range(1, 7):
                        d = 2.0**-5 * 4.0**-j
                        pts.update((k - d, k + d))
            yl, wl, tr, wr, e0, e1 = graded_nodes(sorted(pts))
            w = np.concatenate([wl * _finite(self._g(yl)), wr * _finite(self._g_right(tr))])
            lik = np.concatenate([_finite(self.L(yl)), _finite(self._L_right(tr))])
            y = np.concatenate([yl, 1.0 - tr])
            ty, tw, tl = self._tail_nodes(w, lik, e0, e1)
            out = (
                np.concatenate([y, ty, self.atom_y]),
                np.concatenate([w, tw, self.atom_w]),
                np.concatenate([lik, tl, self.atom_L]),
            )
        self._cache_key, self._cache = key, out
        return out

    def _tail_nodes(self, w, lik, e0, e1):
        """Nodes for the two end panels.

        The mu-mass comes from the power-law tail of the mu-density; L is
        set so that w * L carries the power-law tail mass of the P density.
        Known totals fix both masses exactly.
        """
        g_res = None if self._g_total is None else self._g_total - w.sum()
        (y0, g0), (y1, g1) = end_panel_nodes(self._g, e0, e1, g_res, self._g_right)
        if self._lik is None:
            return np.array([y0, y1]), np.array([g0, g1]), np.ones(2)

        def p_left(y):
            return _finite(self._g(y)) * _finite(self.L(y))

        def p_right(t):
            return _finite(self._g_right(t)) * _finite(self._L_right(t))

        p_res = self._p_total - float(w @ lik)
        (_, p0), (_, p1) = end_panel_nodes(p_left, e0, e1, p_res, p_right)
        l0 = p0 / g0 if g0 > 0 else 0.0
        l1 = p1 / g1 if g1 > 0 else 0.0
        return np.array([y0, y1]), np.array([g0, g1]), np.array([l0, l1])

    def moments(self) -> MomentSummary:
        y, w, lik = self.rule()
        return MomentSummary.from_weighted(self.X(y), y, w, lik)

    def support_points(self):
        """Dense points of the closed mu-support with L at each point."""
        pts = [self.atom_y]
        liks = [self.atom_L]
        if self._g is not None:
            probe = np.linspace(0.0, 1.0, 4001)[1:-1]
            grade = np.concatenate([10.0 ** -np.arange(4, 300, 4.0), 2.0 ** -np.arange(12, 53)])
            inner = np.unique(np.concatenate([probe, grade, 1.0 - grade, [self.z]]))
            inner = inner[(inner > 0) & (inner < 1)]
            g = np.asarray(self._g(inner), dtype=float)
            pos = g > 0
            if np.any(pos):
                lo, hi = inner[pos].min(), inner[pos].max()
                sel = inner[pos]
                lik = self.L(sel)
                ends, end_l = [], []
                if lo <= 1e-3:
                    ends.append(0.0)
                    end_l.append(float(self.L(np.array([_TINY]))[0]))
                if hi >= 1 - 1e-3:
                    ends.append(1.0)
                    end_l.append(float(self._L_right(np.array([_TINY]))[0]))
                pts += [sel, np.array(ends)]
                liks += [lik, np.array(end_l)]
        y = np.concatenate(pts)
        lik = np.concatenate(liks)
        return y, np.where(np.isfinite(lik), lik, np.inf)


def _ones(y):
    return np.ones_like(np.asarray(y, dtype=float))


def moments_for_pickands(model: SpectralModel, z: float, mu="p") -> MomentSummary:
    """Moments of (X(z), Y) under ``mu``; E_P X is stored as ``e_x``."""
    return PickandsFrame(model, z, mu).moments()


# -- thresholds ---------------------------------------------------------------


def _residual_direction(frame: PickandsFrame, ms: MomentSummary):
    beta = float(ms.beta[0])
    mx, my = ms.mean_x, float(ms.mean_y[0])

    def s(y):
        return frame.X(y) - mx - beta * (np.asarray(y) - my)

    return s


def delta_star(model, z, mu="p", direction="upper", frame=None) -> float:
    """Largest radius for which the square-root bound is exact.

    The sqrt optimizer is L + sqrt(delta / D) * sign * s with s the residual
    of X after projecting out (1, Y); the threshold is the first delta at
    which it touches zero on the closed mu-support.
    """
    sign = _check_direction(direction)
    frame = frame or PickandsFrame(model, z, mu)
    ms = frame.moments()
    dr = ms.det_ratio
    if dr <= 0:
        return math.inf
    s = _residual_direction(frame, ms)
    y, lik = frame.support_points()
    sv = sign * s(y)
    neg = sv < 0
    if not np.any(neg):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(neg, dr * lik**2 / sv**2, np.inf)
    i = int(np.argmin(ratio))
    best = float(ratio[i])
    # refine a smooth interior minimum
    yi = y[i]
    is_atom = np.any(frame.atom_y == yi) and (frame._g is None or yi in (0.0, 1.0))
    if frame.mu.kind != "p" and 0.0 < yi < 1.0 and not is_atom and best > 0:
        order = np.sort(y[(y > 0) & (y < 1)])
        k = np.searchsorted(order, yi)
        lo = order[max(k - 1, 0)]
        hi = order[min(k + 1, order.size - 1)]

        def f(t):
            v = sign * float(s(np.array([t]))[0])
            if v >= 0:
                return np.inf
            return dr * float(frame.L(np.array([t]))[0]) ** 2 / v**2

        r = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if r.success and r.fun < best:
            best = float(r.fun)
    return best


def delta_star_pickands_p(model, z) -> tuple:
    """Closed-form thresholds for mu = P when 0, z and 1 lie in the support.

    Returns ``(delta_star_upper, delta_star_lower)`` from the intercepts
    b* and b_- of the residual line at the support extremes.
    """
    ms = moments_for_pickands(model, z, "p")
    rho = float(ms.beta[0])
    ex = ms.e_x
    b_up = ex - rho / 2 + max(-2 * z, rho * z - 2 * z * (1 - z), rho - 2 * (1 - z))
    b_lo = ex - rho / 2 + min(-2 * z, rho - 2 * (1 - z))
    dr = ms.det_ratio
    up = dr / b_up**2 if b_up > 0 else math.inf
    lo = dr / b_lo**2 if b_lo < 0 else math.inf
    return up, lo


def delta_star_star(model, z, mu="p", direction="upper", frame=None) -> float:
    """Radius beyond which the bound equals the trivial extreme.

    Upper: the optimizer is the independence law with mass 1/2 at 0 and 1,
    which needs mu-atoms at both endpoints. Lower: the optimizer lives on
    {Y >= z} (z < 1/2) or {Y <= z} (z > 1/2), or on {Y = 1/2} at z = 1/2.
    """
    _check_direction(direction)
    frame = frame or PickandsFrame(model, z, mu)
    y, w, lik = frame.rule()
    if direction == "upper":
        at0 = (frame.atom_y == 0.0)
        at1 = (frame.atom_y == 1.0)
        if not (at0.any() and at1.any()):
            return math.inf
        m0, l0 = float(frame.atom_w[at0][0]), float(frame.atom_L[at0][0])
        m1, l1 = float(frame.atom_w[at1][0]), float(frame.atom_L[at1][0])
        rest = float(w @ lik**2) - m0 * l0**2 - m1 * l1**2
        return m0 * (0.5 / m0 - l0) ** 2 + m1 * (0.5 / m1 - l1) ** 2 + rest
    zz = frame.z
    ybar = float(w @ (lik * y))
    if abs(zz - 0.5) < 1e-12:
        at = np.isclose(frame.atom_y, 0.5)
        if not at.any():
            return math.inf
        m, l_half = float(frame.atom_w[at][0]), float(frame.atom_L[at][0])
        return m * (1.0 / m - l_half) ** 2 + float(w @ lik**2) - m * l_half**2
    inside = y >= zz if zz < 0.5 else y <= zz
    sol = _restricted_projection(y[inside], w[inside], lik[inside], ybar)
    if sol is None:
        return math.inf
    lstar = sol
    return float(w[inside] @ (lstar - lik[inside]) ** 2 + w[~inside] @ lik[~inside] ** 2)


def _restricted_projection(y, w, lik, ybar):
    """Solve (L + b + cY)_+ with unit mass and mean ``ybar`` on a subset."""
    if w.sum() <= 0 or y.size == 0:
        return None
    if not (y[w > 0].min() <= ybar <= y[w > 0].max()):
        return None

    def resid(theta):
        b, c = theta
        l = np.maximum(lik + b + c * y, 0.0)
        return np.array([w @ l - 1.0, w @ (l * y) - ybar])

    # unconstrained projection as the starting point
    m = np.array([[w.sum(), w @ y], [w @ y, w @ y**2]])
    rhs = np.array([1.0 - w @ lik, ybar - w @ (lik * y)])
    try:
        x0 = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError:
        return None
    try:
        b, c = solve_system(resid, x0, tol=1e-11, max_iter=200)
    except SolverError:
        # convex dual 0.5 E (L + b + cY)_+^2 - b - c ybar
        def dual(theta):
            b, c = theta
            l = np.maximum(lik + b + c * y, 0.0)
            return 0.5 * w @ l**2 - b - c * ybar, np.array([w @ l - 1.0, w @ (l * y) - ybar])

        r = optimize.minimize(dual, x0, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 2000})
        b, c = r.x
        if np.max(np.abs(resid(r.x))) > 1e-8:
            return None
    return np.maximum(lik + b + c * y, 0.0)


# -- reports ------------------------------------------------------------------


@dataclass
class BoundReport:
    """Result of a robust bound query.

    ``multipliers`` are (a, b, c) in L* = (a X + b + c Y + L)_+ for the
    divergence ball, or the analogous parameters of the Renyi and
    Kullback-Leibler optimizers.
    """

    z: float
    delta: float
    direction: str
    e_x: float
    sqrt_value: float
    exact_value: float | None
    regime: Regime
    multipliers: tuple | None = None
    delta_star: float = math.inf
    delta_star_star: float = math.inf
    mu: str = "p"
    notes: str = ""
    divergence: str = "l2"
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def value(self) -> float:
        """Best available bound: the exact value, else the sqrt bound."""
        return self.exact_value if self.exact_value is not None else self.sqrt_value


# -- exact solver --------------------------------------------------------------


def _kinks(frame: PickandsFrame, fn, y_nodes):
    """Zeros of a continuous function of y located from sign changes."""
    grid = np.unique(np.concatenate([frame._base, y_nodes[(y_nodes > 0) & (y_nodes < 1)]]))
    grid = grid[(grid > 0) & (grid < 1)]
    v = fn(grid)
    ch = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]
    out = []
    for i in ch:
        try:
            out.append(optimize.brentq(lambda t: float(fn(np.array([t]))[0]), grid[i], grid[i + 1], xtol=1e-14))
        except ValueError:
            continue
    return out


class WeightedDual:
    """Convex dual of the divergence-ball program on a weighted point set.

    The primal maximises ``sign * E_mu[L' X]`` over ``L' >= 0`` with
    ``E_mu L' = 1``, ``E_mu[L' Y] = ybar`` and ``E_mu (L' - L)^2 <= delta``;
    ``Y`` may be a vector. Dual variables are theta = (alpha, b, c) with
    alpha > 0, and the optimal density is (L + (t + b + c'Y) / (2 alpha))_+
    with t = sign * X.

    Subclasses may override :meth:`arrays` to refine the point set
    around the kinks of the current density.
    """

    def __init__(self, x, ys, w, lik, sign: float, delta: float, ybar=None):
        self.sign = sign
        self.delta = delta
        self._x = np.asarray(x, dtype=float)
        self._ys = np.asarray(ys, dtype=float).reshape(self._x.size, -1)
        self._w = np.asarray(w, dtype=float)
        self._lik = np.ones_like(self._x) if lik is None else np.asarray(lik, dtype=float)
        if ybar is None:
            ybar = (self._w * self._lik) @ self._ys
        self.ybar = np.atleast_1d(np.asarray(ybar, dtype=float))

    def arrays(self, theta):
        """Return (x, Y, w, L) at the current dual point."""
        return self._x, self._ys, self._w, self._lik

    def evaluate(self, theta, hess=True):
        alpha, b, c = theta[0], theta[1], np.asarray(theta[2:])
        x, ys, w, lik = self.arrays(theta)
        phi = self.sign * x + b + ys @ c
        psi = phi + 2 * alpha * lik
        pos = psi > 0
        l = np.where(pos, psi, 0.0) / (2 * alpha)
        # stable forms: on {psi > 0} the L^2 terms cancel exactly
        inner = np.where(pos, phi**2 / (4 * alpha) + phi * lik, -alpha * lik**2)
        dev2 = np.where(pos, (phi / (2 * alpha)) ** 2, lik**2)
        val = w @ inner + alpha * self.delta - b - c @ self.ybar
        grad = np.concatenate([[self.delta - w @ dev2, w @ l - 1.0], (w * l) @ ys - self.ybar])
        if not hess:
            return val, grad, None
        v = np.column_stack([-phi[pos] / alpha, np.ones(int(pos.sum())), ys[pos]])
        h = (v.T * w[pos]) @ v / (2 * alpha)
        return val, grad, h

    def density(self, theta, x, ys, lik):
        alpha, b, c = theta[0], theta[1], np.asarray(theta[2:])
        phi = self.sign * x + b + ys @ c
        return np.maximum(lik + phi / (2 * alpha), 0.0)

    def value(self, theta):
        x, ys, w, lik = self.arrays(theta)
        return float(w @ (self.density(theta, x, ys, lik) * x))

    def multipliers(self, theta):
        """(a, b, c) of the theorem form L* = (a X + b + c'Y + L)_+."""
        a = 1.0 / (2 * theta[0])
        return (self.sign * a, theta[1] * a, *(np.asarray(theta[2:]) * a))

    def solve(self, theta0, tol=1e-10, max_iter=100, accept_tol=1e-8):
        """Damped Newton in (log alpha, b, c) with a trust cap on each step.

        Stops once the gradient in (log alpha, b, c) is below ``tol``; a
        stalled iterate is still accepted below ``accept_tol``.
        """
        theta = np.asarray(theta0, dtype=float).copy()
        k = theta.size
        val, grad, h = self.evaluate(theta)
        for _ in range(max_iter):
            alpha = theta[0]
            # chain rule for tau = log alpha; alpha * (divergence residual)
            # is the first-order error in the value, so test convergence there
            jac = np.ones(k)
            jac[0] = alpha
            gt = grad * jac
            if np.max(np.abs(gt)) <= tol:
                return theta
            ht = h * np.outer(jac, jac)
            ht[0, 0] += alpha * grad[0]
            # Jacobi scaling: near the degenerate radius alpha -> 0 and the
            # Hessian spans many decades, so the shift must be relative
            dg = np.sqrt(np.maximum(np.abs(np.diag(ht)), 1e-300))
            hs = ht / np.outer(dg, dg)
            lam = 1e-14
            while True:
                try:
                    step = -np.linalg.solve(hs + lam * np.eye(k), gt / dg) / dg
                    if float(gt @ step) < 0:
                        break
                except np.linalg.LinAlgError:
                    pass
                lam = max(10.0 * lam, 1e-10)
                if lam > 1e12:
                    raise SolverError("dual Newton direction unavailable", theta, np.max(np.abs(grad)))
            step = step / max(1.0, np.max(np.abs(step)))
            slope = float(gt @ step)
            # once the predicted decrease is below the rounding of the value
            # (large point sets), fall back to decrease of the gradient
            flat = abs(slope) < 1e-12 * max(1.0, abs(val))
            gnorm = np.linalg.norm(gt)
            t = 1.0
            while t > 1e-10:
                cand = theta + t * step
                cand[0] = alpha * math.exp(t * step[0])
                v2, g2, h2 = self.evaluate(cand)
                if np.isfinite(v2) and v2 <= val + 1e-4 * t * slope + 1e-15 * abs(val):
                    break
                if flat and np.isfinite(v2):
                    j2 = np.ones(k)
                    j2[0] = cand[0]
                    if np.linalg.norm(g2 * j2) <= (1.0 - 1e-4 * t) * gnorm:
                        break
                t *= 0.5
            else:
                if np.max(np.abs(gt)) <= accept_tol:
                    return theta
                raise SolverError("dual line search failed", theta, np.max(np.abs(grad)))
            theta, val, grad, h = cand, v2, g2, h2
        # the kink-refined rule moves with theta, which leaves a residual
        # floor near 1e-10 when the optimizer is close to degenerate
        if np.max(np.abs(grad[1:])) <= accept_tol and abs(theta[0] * grad[0]) <= accept_tol:
            return theta
        raise SolverError("dual iteration cap", theta, np.max(np.abs(grad)))


class _DualProblem(WeightedDual):
    """The dual for the Pickands target on a frame's quadrature rule."""

    def __init__(self, frame: PickandsFrame, sign: float, delta: float):
        self.frame = frame
        y, w, lik = frame.rule()
        super().__init__(frame.X(y), y, w, lik, sign, delta)

    def arrays(self, theta):
        alpha, b, c = theta
        fr = self.frame
        y0, _, _ = fr.rule()

        def psi(y):
            y = np.asarray(y, dtype=float)
            return self.sign * fr.X(y) + b + c * y + 2 * alpha * fr.L(y)

        kinks = _kinks(fr, psi, y0) if fr.has_continuous else []
        y, w, lik = fr.rule(kinks)
        return fr.X(y), y[:, None], w, lik


def _sqrt_dual_start(ms: MomentSummary, delta: float, sign: float = 1.0):
    """Dual point reproducing the square-root optimizer L + sqrt(delta/D) s."""
    beta = sign * ms.beta
    a = math.sqrt(delta / ms.det_ratio)
    alpha = 1.0 / (2.0 * a)
    return np.concatenate([[alpha, -sign * ms.mean_x + float(beta @ ms.mean_y)], -beta])


def reduced_kkt_system(frame: PickandsFrame, delta: float, sign: float = 1.0):
    """Two-equation optimality system for mu = P.

    Unknowns (b, c) with U = t + b + c Y and t = sign * X; the equations are
    cov(U_+, Y) = 0 and var(U_+) / E(U_+)^2 = delta.
    """
    if frame.mu.kind != "p":
        raise ValueError("the reduced system applies to mu = P only")

    def F(theta):
        b, c = theta
        y, w = _p_rule_kinked(frame, sign, b, c)
        u = np.maximum(sign * frame.X(y) + b + c * y, 0.0)
        eu = w @ u
        if eu <= 0:
            return np.array([np.nan, np.nan])
        ey = w @ y
        cov = w @ (u * y) - eu * ey
        var = w @ u**2 - eu**2
        return np.array([cov / eu, var / eu**2 - delta])

    return F


def _p_rule_kinked(frame, sign, b, c):
    y0, _, _ = frame.rule()

    def u(y):
        return sign * frame.X(y) + b + c * y

    kinks = _kinks(frame, u, y0) if frame.has_continuous else []
    y, w, _ = frame.rule(kinks)
    return y, w


def _reduced_solve(frame, ms, delta, sign):
    beta = sign * float(ms.beta[0])
    b0 = -sign * ms.mean_x + beta * float(ms.mean_y[0]) + math.sqrt(ms.det_ratio / delta)
    F = reduced_kkt_system(frame, delta, sign)
    b, c = solve_system(F, np.array([b0, -beta]), tol=1e-11, max_iter=60)
    y, w = _p_rule_kinked(frame, sign, b, c)
    u = np.maximum(sign * frame.X(y) + b + c * y, 0.0)
    eu = float(w @ u)
    value = float(w @ (u * frame.X(y))) / eu
    # theorem form: L* = (a X + b + c Y + 1)_+
    mult = (sign / eu, b / eu - 1.0, c / eu)
    return value, mult


def exact_bound(model, z, mu="p", delta=0.1, direction="upper", frame=None) -> BoundReport:
    """Exact robust bound on A(z) over the divergence ball of radius ``delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    sign = _check_direction(direction)
    frame = frame or PickandsFrame(model, z, mu)
    ms = frame.moments()
    sq = sqrt_bound(ms, delta, direction)
    d1 = delta_star(model, z, mu, direction, frame=frame)
    d2 = delta_star_star(model, z, mu, direction, frame=frame)
    base = dict(z=float(z), delta=float(delta), direction=direction, e_x=ms.e_x, sqrt_value=sq,
                delta_star=d1, delta_star_star=d2, mu=str(frame.mu))
    dr = ms.det_ratio
    if dr <= 0:
        return BoundReport(exact_value=ms.e_x, regime=Regime.SQRT_EXACT, multipliers=(0.0, 0.0, 0.0), **base)
    if delta <= d1:
        beta = float(ms.beta[0])
        a = sign * math.sqrt(delta / dr)
        mult = (a, -a * (ms.mean_x - beta * float(ms.mean_y[0])), -a * beta)
        return BoundReport(exact_value=sq, regime=Regime.SQRT_EXACT, multipliers=mult, **base)
    # thresholds carry quadrature rounding; treat a relative gap below 1e-10 as reached
    if delta >= d2 * (1.0 - 1e-10):
        val = _trivial(frame.z, sign)
        return BoundReport(exact_value=val, regime=Regime.DEGENERATE, multipliers=None, **base)
    notes = []
    if frame.mu.kind == "p":
        try:
            value, mult = _reduced_solve(frame, ms, delta, sign)
            return BoundReport(exact_value=value, regime=Regime.EXACT_SOLVED, multipliers=mult, **base)
        except SolverError as exc:
            notes.append(f"reduced system: {exc}")
    try:
        value, mult, note = _dual_solve(frame, ms, delta, sign, d1)
        if note:
            notes.append(note)
        return BoundReport(exact_value=value, regime=Regime.EXACT_SOLVED, multipliers=mult,
                           notes="; ".join(notes), **base)
    except SolverError as exc:
        notes.append(f"dual: {exc}")
    return BoundReport(exact_value=None, regime=Regime.SQRT_FALLBACK, notes="; ".join(notes), **base)


BRACKET_TOL = 1e-8


def _dual_solve(frame, ms, delta, sign, d_star):
    """Solve the dual at ``delta``; returns (value, multipliers, note)."""
    prob = _DualProblem(frame, sign, delta)
    try:
        theta = prob.solve(_sqrt_dual_start(ms, delta, sign))
        return prob.value(theta), prob.multipliers(theta), ""
    except SolverError:
        pass
    # continuation in delta from just above the sqrt-exact range, halving
    # a step that fails
    d_s = d_star if 0 < d_star < delta else delta / 100.0
    theta = _sqrt_dual_start(ms, d_s, sign)
    v_s = None
    targets = [float(d) for d in np.geomspace(d_s, delta, 12)[1:]]
    failures = 0
    while targets:
        prob = _DualProblem(frame, sign, targets[0])
        try:
            cand = prob.solve(theta)
        except SolverError:
            failures += 1
            if failures > 16:
                break
            targets.insert(0, 0.5 * (d_s + targets[0]))
            continue
        theta, d_s, v_s = cand, targets.pop(0), prob.value(cand)
    if not targets:
        return v_s, prob.multipliers(theta), ""
    if v_s is None:
        raise SolverError("dual continuation made no progress")
    # sign * V is concave and nondecreasing in delta with slope alpha and is
    # capped by the trivial value; that brackets V(delta) from the last solve
    lo = sign * v_s
    hi = min(lo + theta[0] * (delta - d_s), sign * _trivial(frame.z, sign))
    # the cap can sit a quadrature rounding below the last solved value
    lo = min(lo, hi)
    if hi - lo > BRACKET_TOL:
        raise SolverError(f"dual stalled at delta={d_s:.6g}; bracket width {hi - lo:.1e}")
    return sign * hi, None, f"bracketed to {hi - lo:.1e} from the solve at delta={d_s:.6g}"


def optimizer_density(report: BoundReport, model, z, mu="p") -> AtomicMeasure:
    """Worst- or best-case measure L* mu behind an exact bound."""
    frame = PickandsFrame(model, z, mu)
    sign = _check_direction(report.direction)
    if report.regime == Regime.DEGENERATE:
        if sign > 0:
            return AtomicMeasure(None, ((0.0, 0.5), (1.0, 0.5)))
        return _lower_degenerate_measure(frame)
    if report.multipliers is None:
        raise ValueError("report has no multipliers; the exact solve failed")
    a, b, c = report.multipliers

    def lstar(y):
        y = np.asarray(y, dtype=float)
        return np.maximum(a * frame.X(y) + b + c * y + frame.L(y), 0.0)

    atoms = tuple((float(l), float(m * lstar(np.array([l]))[0])) for l, m in zip(frame.atom_y, frame.atom_w))
    if not frame.has_continuous:
        return AtomicMeasure(None, atoms)
    g = frame._g

    def dens(y):
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            out = lstar(y) * np.asarray(g(y), dtype=float)
        return np.where(np.isfinite(out), out, 0.0)

    return AtomicMeasure(dens, atoms, points=(float(z),))


def _lower_degenerate_measure(frame):
    zz = frame.z
    if abs(zz - 0.5) < 1e-12:
        return AtomicMeasure(None, ((0.5, 1.0),))
    y, w, lik = frame.rule()
    ybar = float(w @ (lik * y))
    inside = y >= zz if zz < 0.5 else y <= zz
    sol = _restricted_projection(y[inside], w[inside], lik[inside], ybar)
    if sol is None:
        raise ValueError("no degenerate optimizer on the restricted support")
    # recover (b, c) by least squares on the positive part
    yi, li = y[inside], lik[inside]
    pos = sol > 0
    coef = np.linalg.lstsq(np.column_stack([np.ones(pos.sum()), yi[pos]]), sol[pos] - li[pos], rcond=None)[0]
    b, c = coef

    def lstar(t):
        t = np.asarray(t, dtype=float)
        ok = t >= zz if zz < 0.5 else t <= zz
        return np.where(ok, np.maximum(frame.L(t) + b + c * t, 0.0), 0.0)

    atoms = tuple((float(l), float(m * lstar(np.array([l]))[0])) for l, m in zip(frame.atom_y, frame.atom_w))
    if not frame.has_continuous:
        return AtomicMeasure(None, atoms)
    g = frame._g
    return AtomicMeasure(lambda t: lstar(t) * np.asarray(g(t), dtype=float), atoms, points=(zz,))


def pseudo_density(model, z, mu="p", delta=0.1, direction="upper"):
    """Signed density of the sqrt optimizer (positivity constraint dropped).

    Returns a vectorised function of y giving (L + a X + b + c Y) times the
    mu-density; negative values show where the sqrt bound is not attainable.
    """
    sign = _check_direction(direction)
    frame = PickandsFrame(model, z, mu)
    ms = frame.moments()
    s = _residual_direction(frame, ms)
    scale = sign * math.sqrt(delta / ms.det_ratio) if ms.det_ratio > 0 else 0.0
    g = frame._g or _ones

    def f(y):
        y = np.asarray(y, dtype=float)
        return (frame.L(y) + scale * s(y)) * np.asarray(g(y), dtype=float)

    return f


# -- Renyi and Kullback-Leibler balls (mu = P) ---------------------------------


def _renyi_parts(frame, sign, eta, b, c):
    y0, _, _ = frame.rule()

    def u(y):
        return sign * frame.X(y) + b + c * y

    kinks = _kinks(frame, u, y0) if frame.has_continuous else []
    y, w, _ = frame.rule(kinks)
    wt = np.maximum(u(y), 0.0) ** (1.0 / (eta - 1.0))
    return y, w, wt


def _renyi_of(w, wt, eta):
    ew = w @ wt
    return math.log((w @ wt**eta) / ew**eta) / (eta - 1.0)


def renyi_degenerate_threshold(model, eta, z=None, direction="upper"):
    """Smallest Renyi-eta radius at which the bound reaches the trivial extreme.

    ``eta = 1`` stands for Kullback-Leibler. Upper: divergence of the
    independence law (mass 1/2 at 0 and 1). Lower: smallest divergence of a
    law with mean 1/2 living where X(z) is linear in Y.
    """
    if direction == "upper":
        p0, p1 = model.atom_mass(0.0), model.atom_mass(1.0)
        if p0 <= 0 or p1 <= 0:
            return math.inf
        if eta == 1.0:
            return 0.5 * math.log(0.5 / p0) + 0.5 * math.log(0.5 / p1)
        return math.log(0.5**eta * (p0 ** (1 - eta) + p1 ** (1 - eta))) / (eta - 1.0)
    frame = PickandsFrame(model, z, "p")
    if abs(frame.z - 0.5) < 1e-12:
        m = model.atom_mass(0.5)
        return -math.log(m) if m > 0 else math.inf
    y, w, _ = frame.rule()
    ybar = float(w @ y)
    inside = (y >= frame.z) if frame.z < 0.5 else (y <= frame.z)
    y, w = y[inside], w[inside]
    if w.sum() <= 0 or not (y[w > 0].min() < ybar < y[w > 0].max()):
        return math.inf

    def weight(k):
        if eta == 1.0:
            e = k * (y - ybar)
            return np.exp(e - e.max())
        return np.maximum(1.0 + k * (y - ybar), 0.0) ** (1.0 / (eta - 1.0))

    def moment(k):
        wt = weight(k)
        return float(w @ (wt * (y - ybar)) / (w @ wt))

    lo, hi = -1.0, 1.0
    while moment(lo) > 0:
        lo *= 2
    while moment(hi) < 0:
        hi *= 2
    k = optimize.brentq(moment, lo, hi, xtol=1e-14)
    wt = weight(k)
    lp = wt / (w @ wt)
    if eta == 1.0:
        pos = lp > 0
        return float(w[pos] @ (lp[pos] * np.log(lp[pos])))
    return math.log(w @ lp**eta) / (eta - 1.0)


def renyi_eta_bound(model, z, delta, eta=2.0, direction="upper") -> BoundReport:
    """Bound on A(z) over the Renyi ball of order ``eta`` > 1 and radius ``delta``.

    The optimizer is proportional to (sign X + b + c Y)_+^(1/(eta-1)).
    """
    if not eta > 1:
        raise ValueError("eta must exceed 1")
    if not delta > 0:
        raise ValueError("delta must be positive")
    sign = _check_direction(direction)
    frame = PickandsFrame(model, z, "p")
    ms = frame.moments()
    ybar = float(ms.mean_y[0])
    dr = ms.det_ratio
    # Renyi order >= 2 dominates order 2, so the chi-square sqrt bound applies
    sq = sqrt_bound(ms, math.expm1(delta), direction) if eta >= 2 else math.nan
    thr = renyi_degenerate_threshold(model, eta, z, direction)
    base = dict(z=float(z), delta=float(delta), direction=direction, e_x=ms.e_x, sqrt_value=sq,
                delta_star=math.nan, delta_star_star=thr, mu="p", divergence=f"renyi{eta:g}")
    if dr <= 0:
        return BoundReport(exact_value=ms.e_x, regime=Regime.EXACT_SOLVED, **base)
    if delta >= thr:
        return BoundReport(exact_value=_trivial(z, sign), regime=Regime.DEGENERATE, **base)
    beta = sign * float(ms.beta[0])

    def F_for(d):
        def F(theta):
            b, c = theta
            y, w, wt = _renyi_parts(frame, sign, eta, b, c)
            ew = w @ wt
            if not ew > 0:
                return np.array([np.nan, np.nan])
            return np.array([w @ (wt * (y - ybar)) / ew, _renyi_of(w, wt, eta) - d])

        return F

    def start(d):
        eps = math.sqrt(2 * d / (eta * dr))
        return np.array([1.0 / ((eta - 1) * eps) - sign * ms.mean_x + beta * ybar, -beta])

    theta = _continuation(F_for, start, delta)
    if theta is None:
        return BoundReport(exact_value=None, regime=Regime.SQRT_FALLBACK, notes="Renyi system did not converge", **base)
    b, c = theta
    y, w, wt = _renyi_parts(frame, sign, eta, b, c)
    value = float(w @ (wt * frame.X(y)) / (w @ wt))
    return BoundReport(exact_value=value, regime=Regime.EXACT_SOLVED, multipliers=(sign, b, c), **base)


def _trivial(z, sign):
    return 1.0 if sign > 0 else max(z, 1.0 - z)


def _continuation(F_for, start, delta, steps=(1, 4, 16)):
    """Newton at the target radius, else warm-started along a delta path."""
    try:
        return solve_system(F_for(delta), start(delta), tol=1e-11, max_iter=80)
    except SolverError:
        pass
    for n in steps[1:]:
        path = np.geomspace(delta / 50.0, delta, n + 1)
        theta = start(path[0])
        try:
            for d in path:
                theta = solve_system(F_for(float(d)), theta, tol=1e-11, max_iter=80)
            return theta
        except SolverError:
            continue
    return None


def kl_bound(model, z, delta, direction="upper") -> BoundReport:
    """Bound on A(z) over the Kullback-Leibler ball KL(P' | P) <= delta.

    The optimizer is the exponential tilt exp(a X + c Y) / G(a, c).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    sign = _check_direction(direction)
    frame = PickandsFrame(model, z, "p")
    ms = frame.moments()
    ybar = float(ms.mean_y[0])
    dr = ms.det_ratio
    y, w, _ = frame.rule()
    x = frame.X(y)
    thr = renyi_degenerate_threshold(model, 1.0, z, direction)
    base = dict(z=float(z), delta=float(delta), direction=direction, e_x=ms.e_x, sqrt_value=math.nan,
                delta_star=math.nan, delta_star_star=thr, mu="p", divergence="kl")
    if dr <= 0:
        return BoundReport(exact_value=ms.e_x, regime=Regime.EXACT_SOLVED, **base)
    if delta >= thr:
        return BoundReport(exact_value=_trivial(z, sign), regime=Regime.DEGENERATE, **base)
    beta = float(ms.beta[0])
    keep = w > 0
    y, w, x = y[keep], w[keep], x[keep]
    logw = np.log(w)

    def tilt(a, c):
        e = a * x + c * y + logw
        m = e.max()
        p = np.exp(e - m)
        s = p.sum()
        return p / s, m + math.log(s)

    def F_for(d):
        def F(theta):
            a, c = theta
            q, log_g = tilt(a, c)
            ex, ey = q @ x, q @ y
            return np.array([ey - ybar, a * ex + c * ey - log_g - d])

        return F

    def start(d):
        eps = math.sqrt(2 * d / dr)
        return np.array([sign * eps, -sign * eps * beta])

    theta = _continuation(F_for, start, delta)
    if theta is None:
        return BoundReport(exact_value=None, regime=Regime.SQRT_FALLBACK, notes="KL system did not converge", **base)
    a, c = theta
    q, log_g = tilt(a, c)
    return BoundReport(exact_value=float(q @ x), regime=Regime.EXACT_SOLVED, multipliers=(a, -log_g, c), **base)
