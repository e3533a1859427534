"""Brute-force reference solutions used only by the tests.

The spectral law is projected onto 401 hat functions on a uniform grid, so
expectations of functions that are linear between grid nodes (X(z) with z on
the grid, and Y) are reproduced exactly. The robust program then becomes a
finite convex program solved with cvxpy.
"""

import numpy as np
from scipy import integrate

N_NODES = 401


def _hat_masses(f, nodes):
    """Integrals of f against each hat function on the uniform grid."""
    h = nodes[1] - nodes[0]
    out = np.zeros(nodes.size)
    for i in range(nodes.size - 1):
        a, b = nodes[i], nodes[i + 1]
        left = integrate.quad(lambda y: f(y) * (b - y) / h, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        right = integrate.quad(lambda y: f(y) * (y - a) / h, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        out[i] += left
        out[i + 1] += right
    return out


def discretize(model, mu="p", n=N_NODES):
    """Return (y, w, L): node locations, mu-weights and dP/dmu at the nodes.

    Atoms are appended as separate nodes.
    """
    nodes = np.linspace(0.0, 1.0, n)
    pdf = lambda y: float(model.pdf(y))  # noqa: E731
    p = _hat_masses(pdf, nodes)
    if mu == "p":
        w, lik = p, np.ones(n)
    else:
        w = _hat_masses(lambda y: 1.0, nodes)
        lik = p / w
    keep = w > 0
    y, w, lik = nodes[keep], w[keep], lik[keep]
    atoms = [(loc, m) for loc, m in model.atoms if m > 0]
    if atoms:
        if mu != "p":
            raise ValueError("Lebesgue measure cannot dominate a model with atoms")
        y = np.concatenate([y, [a for a, _ in atoms]])
        w = np.concatenate([w, [m for _, m in atoms]])
        lik = np.concatenate([lik, np.ones(len(atoms))])
    return y, w, lik


def grid_bound(model, z, delta, direction="upper", mu="p", kind="l2", eta=3.0, disc=None):
    """Optimal value of the discretised robust program.

    ``kind`` is ``"l2"`` (E_mu (L' - L)^2 <= delta), ``"renyi"`` (order
    ``eta``, mu = P) or ``"kl"`` (mu = P).
    """
    import cvxpy as cp

    y, w, lik = disc if disc is not None else discretize(model, mu)
    x = 2.0 * np.maximum((1.0 - z) * y, z * (1.0 - y))
    ybar = float(w @ (lik * y))
    lp = cp.Variable(y.size, nonneg=True)
    cons = [w @ lp == 1.0, (w * y) @ lp == ybar]
    if kind == "l2":
        cons.append(cp.sum(cp.multiply(w, cp.square(lp - lik))) <= delta)
    elif kind == "renyi":
        cons.append(w @ cp.power(lp, eta) <= np.exp((eta - 1.0) * delta))
    elif kind == "kl":
        cons.append(-(w @ cp.entr(lp)) <= delta)
    else:
        raise ValueError(kind)
    obj = (w * x) @ lp
    prob = cp.Problem(cp.Maximize(obj) if direction == "upper" else cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-9, tol_gap_rel=1e-9, tol_feas=1e-9)
    return float(prob.value)
