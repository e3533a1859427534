"""Batch command line: robust Pickands bounds, the fit/bootstrap experiments,
simulation, fitting, divergences and portfolio VaR stress tests.

Every command writes its tables as CSV (17 significant digits, LF line
endings), an SVG plot unless ``--no-plot`` is given, and a ``run.json``
provenance record into ``--out``. Options can also be read from a plain
``key=value`` file given with ``--config``; flags on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import check_delta, check_z, parse_grid
from .bounds import Regime, delta_star, exact_bound, moments_for_pickands, optimizer_density, pseudo_density, sqrt_bound
from .divergence import divergence, empirical_model, renyi2_radius
from .inference import (
    EXPERIMENTS,
    ExperimentConfig,
    bootstrap_pickands,
    default_endpoint_tol,
    fit_mle,
    polar_topk,
    robust_band,
    run_experiment,
)
from .numerics import RngState
from .portfolio import (
    DEFAULT_N,
    BivariateSampler,
    DirichletSampler,
    PortfolioSpec,
    comonotone_sampler,
    draw,
    independence_sampler,
    mc_moments,
    var_bounds,
)
from .spectral import (
    AsymmetricLogistic,
    as_pareto,
    format_model,
    parse_model,
    pickands,
    read_sample_csv,
    simulate_asym_logistic,
    write_sample_csv,
)

Z_GRID = "0:1:51"
SVG_SALT = "robust-extremes"

# -- output helpers --------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, Regime):
        return v.value
    return str(v)


def write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv` as a list of dicts."""
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def write_provenance(out: Path, args, extra=None):
    cfg = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    rec = {"command": args.command, "version": __version__, "seed": args.seed, "config": cfg}
    if extra:
        rec["results"] = {k: _jsonable(v) for k, v in extra.items()}
    with (out / "run.json").open("w", newline="") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _figure(ncols=1):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = SVG_SALT
    fig, axes = plt.subplots(1, ncols, figsize=(5.0 * ncols, 4.0), squeeze=False)
    return fig, axes[0]


def _save(fig, path):
    import matplotlib.pyplot as plt

    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _z_values(text):
    text = str(text)
    vals = parse_grid(text) if ":" in text else np.array(_floats(text))
    return check_z(vals)


def _deltas(args, default=None):
    if args.delta_grid is not None:
        d = parse_grid(args.delta_grid)
    elif args.delta is not None:
        d = np.array([args.delta])
    elif default is not None:
        d = parse_grid(default)
    else:
        raise ValueError("give --delta or --delta-grid")
    return np.array([check_delta(v) for v in d])


def _load_angles(args):
    s = as_pareto(read_sample_csv(args.data, args.margins))
    k = min(args.k, s.data.shape[0])
    return polar_topk(s, k)


# -- bounds ----------------------------------------------------------------------


def cmd_bounds(args):
    model = parse_model(args.model)
    zs = _z_values(args.z)
    deltas = _deltas(args, default="0:1:21")
    rows, reports = [], {}
    for z in zs:
        inner = 0.0 < z < 1.0
        ms = moments_for_pickands(model, float(z), args.mu) if inner else None
        # same quadrature as the bounds, so the delta = 0 row matches exactly
        a = ms.e_x if inner else 1.0
        ds = {d: delta_star(model, float(z), args.mu, d) if inner else math.inf for d in ("lower", "upper")}
        for delta in deltas:
            row = {"z": z, "delta": delta, "A": a}
            notes = []
            for d, tag in (("lower", "lo"), ("upper", "hi")):
                sq = sqrt_bound(ms, delta, d) if inner else a
                row[f"sqrt_{tag}"] = sq
                row[f"delta_star_{tag}"] = ds[d]
                ex, reg = None, None
                if args.exact:
                    if not inner or delta == 0:
                        ex, reg = (sq if inner else a), Regime.SQRT_EXACT
                    else:
                        rep = exact_bound(model, float(z), args.mu, float(delta), d)
                        ex, reg = rep.exact_value, rep.regime
                        reports[(float(z), float(delta), d)] = rep
                        if rep.notes:
                            notes.append(f"{d}: {rep.notes}")
                row[f"exact_{tag}"], row[f"regime_{tag}"] = ex, reg
            row["notes"] = "; ".join(notes)
            rows.append(row)
    cols = ["z", "delta", "A", "sqrt_lo", "sqrt_hi", "exact_lo", "exact_hi", "regime_lo", "regime_hi",
            "delta_star_lo", "delta_star_hi", "notes"]
    write_csv(args.out / "bounds.csv", cols, [[r[c] for c in cols] for r in rows])
    if not args.no_plot:
        _plot_bounds(args.out / "bounds.svg", rows, model, zs, deltas, args, reports)
    return {"rows": len(rows)}


def _plot_bounds(path, rows, model, zs, deltas, args, reports):
    fig, (ax, ax2) = _figure(2)
    by_delta = len(deltas) > 1
    x_key = "delta" if by_delta else "z"
    groups = zs if by_delta else deltas
    key = "z" if by_delta else "delta"
    for g in groups:
        sel = [r for r in rows if r[key] == g]
        x = [r[x_key] for r in sel]
        ax.plot(x, [r["A"] for r in sel], color="tab:blue", lw=1)
        ax.plot(x, [r["sqrt_lo"] for r in sel], color="tab:green", lw=1)
        ax.plot(x, [r["sqrt_hi"] for r in sel], color="tab:green", lw=1)
        if args.exact:
            for tag in ("lo", "hi"):
                ex = [np.nan if r[f"exact_{tag}"] is None else r[f"exact_{tag}"] for r in sel]
                ax.plot(x, ex, color="black", lw=1)
    ax.set_xlabel("delta" if by_delta else "z")
    ax.set_ylabel("A(z)")
    # optimizer densities at the largest radius for the first interior z
    inner = [z for z in zs if 0.0 < z < 1.0]
    dmax = float(deltas.max())
    if inner and dmax > 0:
        z0 = float(inner[0])
        y = np.linspace(0.0, 1.0, 401)[1:-1]
        for d, colour in (("lower", "tab:orange"), ("upper", "tab:red")):
            rep = reports.get((z0, dmax, d))
            m = None
            if rep is not None:
                try:
                    m = optimizer_density(rep, model, z0, args.mu)
                except ValueError:
                    m = None
            if m is not None:
                if m.density is not None:
                    ax2.plot(y, m.density(y), color=colour, lw=1, label=d)
                for loc, mass in m.atoms:
                    ax2.vlines(loc, 0.0, mass, color=colour, lw=2)
            else:
                ax2.plot(y, pseudo_density(model, z0, args.mu, dmax, d)(y), color=colour, lw=1, ls="--", label=d)
        ax2.axhline(0.0, color="grey", lw=0.5)
        ax2.legend(frameon=False)
        ax2.set_title(f"z = {z0:g}, delta = {dmax:g}")
    ax2.set_xlabel("y")
    _save(fig, path)


# -- experiment ------------------------------------------------------------------


def _experiment_config(args) -> ExperimentConfig:
    if args.id is not None:
        cfg = EXPERIMENTS[args.id]
    else:
        if args.true_model is None or args.fit_family is None:
            raise ValueError("give --id or both --true-model and --fit-family")
        cfg = ExperimentConfig(AsymmetricLogistic(0.5, 1.0, 1.0), 20000, 500, "hr")
    fields = {}
    if args.true_model is not None:
        m = parse_model(args.true_model)
        if m.family != "al":
            raise ValueError("only asymmetric logistic data can be simulated")
        fields["true_model"] = m
    for name in ("n", "k", "fit_family", "mu", "boot", "bandwidth", "endpoint_tol"):
        v = getattr(args, name)
        if v is not None:
            fields[name] = v
    fields["z_grid"] = tuple(_z_values(args.z))
    import dataclasses

    return dataclasses.replace(cfg, **fields)


def cmd_experiment(args):
    cfg = _experiment_config(args)
    res = run_experiment(cfg, args.seed)
    lo, hi = res.robust_lo, res.robust_hi
    delta = res.delta_hat
    if args.delta is not None or args.exact:
        delta = res.delta_hat if args.delta is None else check_delta(args.delta)
        lo, hi = robust_band(res.fitted, res.z, delta, cfg.mu, exact=args.exact)
    for w in res.warnings:
        _warn(w)
    rows = zip(res.z, res.a_true, res.a_fit, _col(res.boot_lo, res.z), _col(res.boot_hi, res.z), lo, hi)
    write_csv(args.out / "experiment.csv", ["z", "A_true", "A_fit", "boot_lo", "boot_hi", "robust_lo", "robust_hi"],
              rows)
    summary = {
        "true_model": format_model(cfg.true_model),
        "fit_family": cfg.fit_family,
        "fitted_model": format_model(res.fitted),
        **{f"param_{i}": p for i, p in enumerate(res.fitted.params)},
        "loglik": res.loglik,
        "mu": cfg.mu,
        "n": cfg.n,
        "k": cfg.k,
        "boot": cfg.boot,
        "delta_hat": res.delta_hat,
        "delta_true": res.delta_true,
        "delta_used": delta,
        "band_contains_truth": bool(np.all((lo - 1e-9 <= res.a_true) & (res.a_true <= hi + 1e-9))),
    }
    write_csv(args.out / "summary.csv", ["key", "value"], summary.items())
    if not args.no_plot:
        _plot_experiment(args.out / "experiment.svg", res.sample.angles, res.z, res.a_true, res.a_fit,
                         res.boot_lo, res.boot_hi, lo, hi)
    return summary


def _col(v, like):
    return [None] * len(like) if v is None else list(v)


def _plot_experiment(path, angles, z, a_true, a_fit, blo, bhi, lo, hi):
    fig, (ax1, ax2) = _figure(2)
    ax1.hist(angles, bins=np.linspace(0.0, 1.0, 41), density=True, color="lightgrey", edgecolor="grey")
    ax1.set_xlabel("angle")
    ax2.plot([0.0, 0.5, 1.0], [1.0, 0.5, 1.0], color="grey", lw=0.5)
    ax2.plot([0.0, 1.0], [1.0, 1.0], color="grey", lw=0.5)
    if a_true is not None:
        ax2.plot(z, a_true, color="tab:red", lw=1)
    ax2.plot(z, a_fit, color="tab:blue", lw=1)
    if blo is not None:
        ax2.plot(z, blo, color="tab:blue", lw=1, ls="--")
        ax2.plot(z, bhi, color="tab:blue", lw=1, ls="--")
    ax2.plot(z, lo, color="tab:green", lw=1)
    ax2.plot(z, hi, color="tab:green", lw=1)
    ax2.set_xlabel("z")
    ax2.set_ylabel("A(z)")
    _save(fig, path)


# -- simulate, fit, divergence ---------------------------------------------------


def cmd_simulate(args):
    m = parse_model(args.true_model)
    if m.family != "al":
        raise ValueError("only asymmetric logistic data can be simulated")
    s = simulate_asym_logistic(m.a, m.b1, m.b2, args.n, RngState(args.seed, 0))
    if args.margins == "pareto":
        s = as_pareto(s)
    write_sample_csv(s, args.out / "sample.csv")
    return {"rows": int(s.data.shape[0])}


def cmd_fit(args):
    if args.data is None:
        raise ValueError("fit needs --data")
    sample = _load_angles(args)
    tol = default_endpoint_tol(args.fit_family, args.mu) if args.endpoint_tol is None else args.endpoint_tol
    fit = fit_mle(args.fit_family, sample, tol)
    emp = empirical_model(sample.angles, args.bandwidth, tol)
    delta_hat = divergence(emp, fit.model, args.mu)
    if math.isinf(delta_hat) and args.mu == "p":
        _warn("divergence is infinite under mu=P; choose mu=leb")
    delta = delta_hat if args.delta is None else check_delta(args.delta)
    z = _z_values(args.z)
    a_fit = pickands(fit.model, z)
    lo, hi = robust_band(fit.model, z, delta, args.mu, exact=args.exact)
    blo = bhi = None
    if args.boot > 0:
        env = bootstrap_pickands(sample, args.fit_family, args.boot, z, RngState(args.seed, 1), fitted=fit.model,
                                 endpoint_tol=tol)
        blo, bhi = env.lower, env.upper
    write_csv(args.out / "fit.csv", ["z", "A_fit", "boot_lo", "boot_hi", "robust_lo", "robust_hi"],
              zip(z, a_fit, _col(blo, z), _col(bhi, z), lo, hi))
    summary = {
        "fit_family": args.fit_family,
        "fitted_model": format_model(fit.model),
        **{f"param_{i}": p for i, p in enumerate(fit.model.params)},
        "loglik": fit.loglik,
        "converged": fit.converged,
        "mu": args.mu,
        "k": sample.k,
        "n_total": sample.n_total,
        "delta_hat": delta_hat,
        "delta_used": delta,
    }
    write_csv(args.out / "summary.csv", ["key", "value"], summary.items())
    if not args.no_plot:
        _plot_experiment(args.out / "fit.svg", sample.angles, z, None, a_fit, blo, bhi, lo, hi)
    return summary


def cmd_divergence(args):
    p = parse_model(args.ref)
    if args.data is not None:
        sample = _load_angles(args)
        tol = default_endpoint_tol(p.family, args.mu) if args.endpoint_tol is None else args.endpoint_tol
        q = empirical_model(sample.angles, args.bandwidth, tol)
        q_name = f"data:{Path(args.data).name}"
    elif args.model is not None:
        q = parse_model(args.model)
        q_name = format_model(q)
    else:
        raise ValueError("divergence needs --model or --data")
    d = divergence(q, p, args.mu)
    if math.isinf(d) and args.mu == "p":
        _warn("divergence is infinite under mu=P; choose mu=leb")
    renyi = renyi2_radius(d) if args.mu == "p" else None
    write_csv(args.out / "divergence.csv", ["q", "p", "mu", "divergence", "renyi2"],
              [[q_name, format_model(p), args.mu, d, renyi]])
    print(_fmt(d))
    return {"divergence": d}


# -- var -------------------------------------------------------------------------


def _portfolio_spec(args) -> PortfolioSpec:
    w = tuple(_floats(args.weights))
    d = len(w)
    if args.sampler == "dirichlet":
        sampler = DirichletSampler(d, args.beta)
    elif args.sampler == "comonotone":
        sampler = comonotone_sampler(d)
    elif args.sampler == "independent":
        sampler = independence_sampler(d)
    else:
        if args.model is None or d != 2:
            raise ValueError("sampler 'model' needs --model and two weights")
        sampler = BivariateSampler(parse_model(args.model))
    scales = tuple(_floats(args.scales)) if args.scales else None
    return PortfolioSpec(w, args.alpha, sampler, scales)


def cmd_var(args):
    spec = _portfolio_spec(args)
    deltas = _deltas(args)
    y = draw(spec, args.n, RngState(args.seed, 0))
    mom = mc_moments(spec, samples=y)
    res = [var_bounds(spec, float(d), exact=args.exact, moments=mom, samples=y) for d in deltas]
    cols = ["delta", "eX_lo", "eX_hi", "ratio_lo", "ratio_hi", "mc_stderr", "exact_lo", "exact_hi", "regime_lo",
            "regime_hi", "notes"]
    rows = [[r.delta, r.e_x_lo, r.e_x_hi, r.ratio_lo, r.ratio_hi, r.mc_stderr, r.exact_lo, r.exact_hi,
             r.regime_lo, r.regime_hi, "; ".join(dict.fromkeys(r.notes))] for r in res]
    write_csv(args.out / "var.csv", cols, rows)
    if not args.no_plot:
        fig, (ax,) = _figure(1)
        ax.plot(deltas, [r.ratio_lo for r in res], color="tab:green", lw=1)
        ax.plot(deltas, [r.ratio_hi for r in res], color="tab:green", lw=1)
        ax.axhline(float((len(spec.weights) * mom.e_x) ** (1.0 / spec.alpha)), color="tab:blue", lw=1)
        ax.set_xlabel("delta")
        ax.set_ylabel("VaR ratio")
        _save(fig, args.out / "var.svg")
    return {"e_x": mom.e_x, "det_ratio": mom.det_ratio}


# -- parser ----------------------------------------------------------------------


def _shared(p, exact=True):
    p.add_argument("--config", type=Path, help="key=value file; command-line flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--delta", type=float)
    p.add_argument("--delta-grid", metavar="A:B:N")
    p.add_argument("--no-plot", action="store_true", help="skip the SVG")
    if exact:
        p.add_argument("--exact", action="store_true", help="also solve for the exact bounds")


def _data_flags(p):
    p.add_argument("--data", type=Path, help="CSV with header z1,z2")
    p.add_argument("--margins", choices=("raw", "frechet", "pareto"), default="raw")
    p.add_argument("--k", type=int, default=500)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--endpoint-tol", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="robust-extremes", description=__doc__.split("\n\n")[0].replace("\n", " "))
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("bounds", help="sqrt and exact bounds on A(z) over a delta grid")
    _shared(p)
    p.add_argument("--mu", choices=("p", "leb"), default="p")
    p.add_argument("--model", default="hr:0.6", help="e.g. hr:0.6, al:0.4,0.7,1, et:0.65,1.21")
    p.add_argument("--z", default="0.4", help="value, comma list or a:b:n")
    p.set_defaults(func=cmd_bounds)
    subs["bounds"] = p

    p = sub.add_parser("experiment", help="simulate, fit, estimate delta, bound and bootstrap")
    _shared(p)
    p.add_argument("--mu", choices=("p", "leb"))
    p.add_argument("--id", type=int, choices=sorted(EXPERIMENTS))
    p.add_argument("--true-model")
    p.add_argument("--fit-family", choices=("hr", "al", "et"))
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--boot", type=int)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--endpoint-tol", type=float)
    p.add_argument("--z", default=Z_GRID)
    p.set_defaults(func=cmd_experiment)
    subs["experiment"] = p

    p = sub.add_parser("simulate", help="draw asymmetric logistic pairs")
    _shared(p, exact=False)
    p.add_argument("--true-model", default="al:0.4,0.7,1")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--margins", choices=("frechet", "pareto"), default="frechet")
    p.set_defaults(func=cmd_simulate)
    subs["simulate"] = p

    p = sub.add_parser("fit", help="fit a spectral family to data and bound A(z)")
    _shared(p)
    _data_flags(p)
    p.add_argument("--mu", choices=("p", "leb"), default="p")
    p.add_argument("--fit-family", choices=("hr", "al", "et"), default="et")
    p.add_argument("--boot", type=int, default=0)
    p.add_argument("--z", default=Z_GRID)
    p.set_defaults(func=cmd_fit)
    subs["fit"] = p

    p = sub.add_parser("divergence", help="divergence of a model or of data from a reference model")
    _shared(p, exact=False)
    _data_flags(p)
    p.add_argument("--mu", choices=("p", "leb"), default="p")
    p.add_argument("--model", help="model Q; omit to use --data")
    p.add_argument("--ref", required=True, help="reference model P")
    p.set_defaults(func=cmd_divergence)
    subs["divergence"] = p

    p = sub.add_parser("var", help="bounds on the portfolio VaR ratio")
    _shared(p)
    p.add_argument("--mu", choices=("p",), default="p")
    p.add_argument("--weights", default="1,1")
    p.add_argument("--scales")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--sampler", choices=("dirichlet", "comonotone", "independent", "model"), default="dirichlet")
    p.add_argument("--beta", type=float, default=1.0, help="Dirichlet concentration")
    p.add_argument("--model", help="spectral model for --sampler model")
    p.add_argument("--n", type=int, default=DEFAULT_N)
    p.set_defaults(func=cmd_var)
    subs["var"] = p
    return parser, subs


def read_config(path):
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes become underscores."""
    out = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{i}: expected key=value")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        p = subs[args.command]
        actions = {a.dest: a for a in p._actions}
        values = read_config(args.config)
        for key, value in values.items():
            if key not in actions or key in ("config", "help"):
                raise ValueError(f"unknown option {key!r} in {args.config}")
            if isinstance(actions[key], argparse._StoreTrueAction):
                values[key] = value.lower() in ("1", "true", "yes", "on")
        # string defaults go through the option's type conversion
        p.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        args.out.mkdir(parents=True, exist_ok=True)
        results = args.func(args)
        write_provenance(args.out, args, results)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
