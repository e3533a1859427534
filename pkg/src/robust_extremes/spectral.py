"""Bivariate spectral distributions on [0, 1].

A spectral model is the law of the first angular coordinate ``Y`` of the
extremes under the sum norm. Every model here has a continuous part on
(0, 1), given through its log-density, and possibly atoms at 0 and 1.
Densities are evaluated in log space so that tails which vanish faster than
any power (Husler-Reiss) do not produce ``0 * inf``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .numerics import (
    AtomicMeasure,
    as_generator,
    graded_rule,
    quad_segments,
    sample_positive_stable,
)

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _as_angles(w):
    return np.asarray(w, dtype=float)


class SpectralModel:
    """Base class. Subclasses provide ``logpdf`` and ``atoms``."""

    family = "base"
    points: tuple = ()

    def _logpdf_logs(self, lw, l1w):
        """Log density from log(w) and log(1 - w)."""
        raise NotImplementedError

    def logpdf(self, w):
        w = _as_angles(w)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = self._logpdf_logs(np.log(w), np.log1p(-w))
        return np.where((w > 0) & (w < 1), out, -np.inf)

    def pdf(self, w):
        w = _as_angles(w)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.exp(self.logpdf(w))
        return np.where(np.isfinite(out), out, 0.0) if np.ndim(out) else (float(out) if np.isfinite(out) else 0.0)

    def pdf_right(self, t):
        """Density at 1 - t, with ``t`` taken exactly (no rounding near 1)."""
        t = _as_angles(t)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.exp(self._logpdf_logs(np.log1p(-t), np.log(t)))
        out = np.where((t > 0) & (t < 1) & np.isfinite(out), out, 0.0)
        return out if np.ndim(out) else float(out)

    @property
    def atoms(self) -> tuple:
        return ()

    @property
    def params(self) -> tuple:
        raise NotImplementedError

    def atom_mass(self, loc: float) -> float:
        for a, m in self.atoms:
            if a == loc:
                return m
        return 0.0

    def measure(self) -> AtomicMeasure:
        return AtomicMeasure(density=self.pdf, atoms=self.atoms, points=self.points)

    @property
    def continuous_mass(self) -> float:
        return 1.0 - sum(m for _, m in self.atoms)

    @cached_property
    def _inverse_cdf_table(self):
        return _cdf_table(self)

    def __str__(self):
        return f"{self.family.upper()}({', '.join(f'{p:.4g}' for p in self.params)})"


@dataclass(frozen=True)
class HuslerReiss(SpectralModel):
    lam: float
    family = "hr"

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("Husler-Reiss parameter must be positive")

    @property
    def params(self):
        return (self.lam,)

    def _logpdf_logs(self, lw, l1w):
        lam = self.lam
        t = l1w - lw
        return -np.log(4.0 * lam) - 2.0 * lw - l1w - LOG_SQRT_2PI - 0.5 * (lam + t / (2.0 * lam)) ** 2


@dataclass(frozen=True)
class AsymmetricLogistic(SpectralModel):
    a: float
    b1: float = 1.0
    b2: float = 1.0
    family = "al"

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ValueError("logistic dependence parameter must lie in (0, 1)")
        if not (0.0 <= self.b1 <= 1.0 and 0.0 <= self.b2 <= 1.0):
            raise ValueError("asymmetry parameters must lie in [0, 1]")

    @property
    def params(self):
        return (self.a, self.b1, self.b2)

    @property
    def atoms(self):
        return ((0.0, (1.0 - self.b2) / 2.0), (1.0, (1.0 - self.b1) / 2.0))

    def _logpdf_logs(self, lw, l1w):
        a, b1, b2 = self.a, self.b1, self.b2
        if b1 == 0.0 or b2 == 0.0:
            return np.full(np.shape(lw), -np.inf)
        lb1, lb2 = np.log(b1), np.log(b2)
        inner = np.logaddexp((lb1 - lw) / a, (lb2 - l1w) / a)
        return (np.log((1.0 - a) / (2.0 * a)) + (lb1 + lb2) / a
                - (1.0 + 1.0 / a) * (lw + l1w) + (a - 2.0) * inner)


@dataclass(frozen=True)
class ExtremalT(SpectralModel):
    rho: float
    a: float
    family = "et"

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError("extremal-t correlation must lie in (-1, 1); rho = +-1 is degenerate")
        if not self.a > 0.0:
            raise ValueError("extremal-t degrees of freedom must be positive")

    @property
    def params(self):
        return (self.rho, self.a)

    @cached_property
    def endpoint_mass(self) -> float:
        # Each endpoint carries half of the t tail probability; with the full
        # tail probability the measure would not be a probability measure.
        rho, a = self.rho, self.a
        x = rho * np.sqrt((a + 1.0) / (1.0 - rho**2))
        return 0.5 * float(stats.t.sf(x, a + 1.0))

    @property
    def atoms(self):
        p = self.endpoint_mass
        return ((0.0, p), (1.0, p))

    def _logpdf_logs(self, lw, l1w):
        rho, a = self.rho, self.a
        logc = (0.5 * (a + 1.0) * np.log1p(-rho**2) + gammaln(0.5 * (a + 2.0))
                - np.log(2.0 * a * np.sqrt(np.pi)) - gammaln(0.5 * (a + 1.0)))
        # w^(2/a) - 2 rho (w(1-w))^(1/a) + (1-w)^(2/a), factored by its
        # dominant term to stay finite near the endpoints
        d = (lw - l1w) / a
        r = np.exp(np.minimum(d, -d))
        big = np.where(d <= 0, 2.0 * l1w / a, 2.0 * lw / a)
        log_br = big + np.log1p(r * (r - 2.0 * rho))
        return logc + (1.0 / a - 1.0) * (lw + l1w) - 0.5 * (a + 2.0) * log_br


class Empirical(SpectralModel):
    """Density tabulated on a grid (linear interpolation) plus atoms."""

    family = "empirical"

    def __init__(self, grid, values, atoms=()):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > 1:
            raise ValueError("grid must be increasing inside [0, 1]")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite and nonnegative")
        self.grid = grid
        self.values = values
        self._atoms = tuple((float(l), float(m)) for l, m in atoms if m > 0)

    @classmethod
    def from_atoms(cls, atoms):
        """Purely atomic model (no continuous part)."""
        return cls(np.array([0.0, 1.0]), np.zeros(2), atoms)

    @property
    def atoms(self):
        return self._atoms

    @property
    def params(self):
        return ()

    @property
    def has_density(self) -> bool:
        return bool(np.any(self.values > 0))

    def pdf(self, w):
        w = _as_angles(w)
        out = np.interp(w, self.grid, self.values, left=0.0, right=0.0)
        return out if np.ndim(out) else float(out)

    def logpdf(self, w):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(w))

    def pdf_right(self, t):
        return self.pdf(1.0 - _as_angles(t))

    def measure(self):
        dens = self.pdf if self.has_density else None
        return AtomicMeasure(density=dens, atoms=self.atoms, points=tuple(self.grid[1:-1]))

    @property
    def continuous_mass(self):
        return float(np.trapezoid(self.values, self.grid)) if self.has_density else 0.0

    def __str__(self):
        return f"Empirical(grid={self.grid.size}, atoms={self.atoms})"


def parse_model(text: str) -> SpectralModel:
    """Parse ``"hr:0.6"``, ``"al:0.4,0.7,1"`` or ``"et:0.65,1.21"``."""
    try:
        fam, _, rest = text.strip().partition(":")
        vals = [float(v) for v in rest.split(",") if v.strip()]
    except ValueError as exc:
        raise ValueError(f"cannot parse model {text!r}") from exc
    fam = fam.lower()
    if fam == "hr" and len(vals) == 1:
        return HuslerReiss(*vals)
    if fam == "al" and len(vals) in (1, 3):
        return AsymmetricLogistic(*vals)
    if fam == "et" and len(vals) == 2:
        return ExtremalT(*vals)
    raise ValueError(f"cannot parse model {text!r}")


def format_model(model: SpectralModel) -> str:
    return f"{model.family}:" + ",".join(repr(float(p)) for p in model.params)


# -- operations -----------------------------------------------------------


def density(model: SpectralModel, w):
    """Continuous-part density at ``w`` in (0, 1)."""
    w_arr = _as_angles(w)
    if np.any((w_arr <= 0) | (w_arr >= 1)):
        raise ValueError("density is defined on the open interval (0, 1)")
    return model.pdf(w)


def atoms(model: SpectralModel) -> list:
    return [(loc, m) for loc, m in model.atoms if m > 0]


def pickands_integrand(z: float):
    """X(z) = 2 max((1 - z) y, z (1 - y)) as a function of the angle y."""

    def x(y):
        return 2.0 * np.maximum((1.0 - z) * y, z * (1.0 - y))

    return x


def pickands(model: SpectralModel, z):
    """Pickands dependence function A(z) = 2 E max((1-z)Y, z(1-Y)).

    ``z`` may be a scalar or an array. All values share one graded
    Gauss-Legendre rule split at every z.
    """
    zs = np.asarray(z, dtype=float)
    if np.any((zs < 0) | (zs > 1)):
        raise ValueError("z must lie in [0, 1]")
    out = _pickands_curve(model, zs)
    return float(out) if out.ndim == 0 else out


def _model_rule(model: SpectralModel, points=()):
    """Nodes and weights integrating against H: graded rule plus the atoms."""
    m = model.measure()
    y = np.array([loc for loc, _ in m.atoms])
    w = np.array([mass for _, mass in m.atoms])
    if m.density is not None:
        yc, wc = graded_rule(m.density, (*m.points, *points), total=model.continuous_mass,
                             density_right=model.pdf_right)
        y, w = np.concatenate([yc, y]), np.concatenate([wc, w])
    return y, w


def _pickands_curve(model: SpectralModel, zs):
    y, w = _model_rule(model, tuple(zs.ravel()))
    z = zs.ravel()[:, None]
    vals = 2.0 * np.maximum((1.0 - z) * y, z * (1.0 - y)) @ w
    # A(0) = A(1) = 1 by the moment constraint
    vals[(zs.ravel() == 0.0) | (zs.ravel() == 1.0)] = 1.0
    return vals.reshape(zs.shape)


def extremal_coefficient(model: SpectralModel) -> float:
    return 2.0 * pickands(model, 0.5)


def moment(model: SpectralModel, k: int = 1) -> float:
    """E Y**k under H."""
    y, w = _model_rule(model)
    return float(w @ y**k)


# -- sampling --------------------------------------------------------------


def _cdf_table(model: SpectralModel, n_cells: int = 2048):
    """Normalised CDF of the continuous part on a Chebyshev-type grid."""
    cmass = model.continuous_mass
    if cmass <= 0:
        return None
    j = np.arange(n_cells + 1)
    grid = 0.5 - 0.5 * np.cos(np.pi * j / n_cells)
    # 8-point Gauss-Legendre per interior cell; quadrature in the two end
    # cells where the density may be singular
    xg, wg = np.polynomial.legendre.leggauss(8)
    a, b = grid[:-1], grid[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    nodes = mid[:, None] + half[:, None] * xg[None, :]
    cells = (model.pdf(nodes) * wg[None, :]).sum(axis=1) * half
    pdf = model.pdf
    for i in (0, n_cells - 1):
        cells[i] = quad_segments(lambda y: float(pdf(y)), (), 1e-12, a[i], b[i])
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    total = cdf[-1]
    return grid, cdf / total, model.pdf(grid) / total


def _invert_cdf(table, u, tol=1e-10):
    """Invert the tabulated CDF by bisection on a cubic Hermite interpolant."""
    grid, cdf, dens = table
    idx = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, grid.size - 2)
    y0, y1 = grid[idx], grid[idx + 1]
    c0, c1 = cdf[idx], cdf[idx + 1]
    h = y1 - y0
    d0, d1 = dens[idx] * h, dens[idx + 1] * h
    bad = ~(np.isfinite(d0) & np.isfinite(d1)) | (idx == 0) | (idx == grid.size - 2)
    d0 = np.where(bad, c1 - c0, d0)
    d1 = np.where(bad, c1 - c0, d1)
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    while np.max(hi - lo) * np.max(h) > tol:
        t = 0.5 * (lo + hi)
        t2, t3 = t * t, t * t * t
        val = (2 * t3 - 3 * t2 + 1) * c0 + (t3 - 2 * t2 + t) * d0 + (-2 * t3 + 3 * t2) * c1 + (t3 - t2) * d1
        below = val < u
        lo = np.where(below, t, lo)
        hi = np.where(below, hi, t)
    return y0 + 0.5 * (lo + hi) * h


def continuous_cdf(model: SpectralModel, y):
    """CDF of the continuous part, normalised to total mass one."""
    grid, cdf, dens = model._inverse_cdf_table
    return np.interp(y, grid, cdf)


def sample_angle(model: SpectralModel, n: int, rng) -> np.ndarray:
    """Draw ``n`` angles: atoms with their masses, then inverse CDF."""
    if n < 1:
        raise ValueError("n must be at least 1")
    gen = as_generator(rng)
    locs = [loc for loc, m in model.atoms if m > 0]
    masses = [m for loc, m in model.atoms if m > 0]
    cmass = max(0.0, 1.0 - sum(masses))
    probs = np.array([*masses, cmass])
    probs /= probs.sum()
    which = gen.choice(probs.size, size=n, p=probs)
    out = np.empty(n)
    for i, loc in enumerate(locs):
        out[which == i] = loc
    cont = which == len(locs)
    if np.any(cont):
        table = model._inverse_cdf_table
        if table is None:
            raise ValueError("model has no continuous part")
        out[cont] = _invert_cdf(table, gen.uniform(size=int(cont.sum())))
    return out


# -- bivariate data --------------------------------------------------------


@dataclass
class BivariateSample:
    """Rows ``(z1, z2)`` with a tag for the marginal scale."""

    data: np.ndarray
    margins: str = "raw"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2:
            raise ValueError("bivariate sample must have shape (n, 2)")
        if np.any(np.isnan(data)) or np.any(data < 0):
            raise ValueError("coordinates must be nonnegative")
        if self.margins not in ("frechet", "pareto", "raw"):
            raise ValueError("margins must be 'frechet', 'pareto' or 'raw'")
        self.data = data

    def __len__(self):
        return self.data.shape[0]

    def to_csv(self, path):
        write_sample_csv(self, path)

    @classmethod
    def from_csv(cls, path, margins="raw"):
        return read_sample_csv(path, margins)


def simulate_asym_logistic(a: float, b1: float, b2: float, n: int, rng) -> BivariateSample:
    """Asymmetric logistic max-stable pairs with unit Frechet margins.

    Z_i = max((1 - b_i) F_i, b_i L_i) where F_i are independent unit Frechet
    and L_i = S**a * X_i with S positive a-stable and X_i Frechet of shape
    1/a, which gives the symmetric logistic pair.
    """
    AsymmetricLogistic(a, b1, b2)  # validates parameters
    gen = as_generator(rng)
    f = 1.0 / gen.exponential(size=(n, 2))
    s = sample_positive_stable(a, gen, size=n)
    xl = gen.exponential(size=(n, 2)) ** (-a)
    logistic = (s**a)[:, None] * xl
    b = np.array([b1, b2])
    z = np.maximum((1.0 - b) * f, b * logistic)
    return BivariateSample(z, "frechet")


def to_pareto_margins(s: BivariateSample) -> BivariateSample:
    """Probability-integral map from unit Frechet to unit Pareto margins."""
    if s.margins != "frechet":
        raise ValueError("sample must have unit Frechet margins")
    z = s.data
    if np.any(z <= 0):
        raise ValueError("Frechet coordinates must be positive")
    with np.errstate(divide="ignore"):
        out = -1.0 / np.expm1(-1.0 / z)
    return BivariateSample(out, "pareto")


def rank_pareto_margins(s: BivariateSample) -> BivariateSample:
    """Empirical probability-integral map to unit Pareto margins.

    Each column is replaced by 1 / (1 - r / (n + 1)) with r its rank
    (ties averaged), so any continuous margins can be used.
    """
    z = np.asarray(getattr(s, "data", s), dtype=float)
    n = z.shape[0]
    u = np.column_stack([stats.rankdata(z[:, j]) for j in range(2)]) / (n + 1.0)
    return BivariateSample(1.0 / (1.0 - u), "pareto")


def as_pareto(s: BivariateSample) -> BivariateSample:
    """Unit Pareto margins from a sample tagged frechet, pareto or raw."""
    if s.margins == "pareto":
        return s
    if s.margins == "frechet":
        return to_pareto_margins(s)
    return rank_pareto_margins(s)


def write_sample_csv(s: BivariateSample, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z1", "z2"])
        for z1, z2 in s.data:
            w.writerow([f"{z1:.17g}", f"{z2:.17g}"])


def read_sample_csv(path, margins="raw") -> BivariateSample:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"z1", "z2"} <= set(reader.fieldnames):
            raise ValueError("CSV must have a header with columns z1,z2")
        rows = [(float(r["z1"]), float(r["z2"])) for r in reader]
    return BivariateSample(np.array(rows, dtype=float).reshape(-1, 2), margins)
