"""Batch command line: rules, covariance applies, sampling, forward models,
inversion, benchmarks, and canned experiments.

Exit codes: 0 success, 2 validation/usage error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .covariance import CovarianceApplicator, PriorConfig, estimate_diag_q
from .errors import SolverError, ValidationError
from .experiments import run_experiment, shifted_benchmark
from .fileio import load_data_csv, load_field, render_pgm, save_data_csv, save_field
from .forward import NoiseModel, heat_operator, make_data, tomo_operator
from .grid import Field
from .inversion import map_estimate, posterior_variance
from .randomness import RandomStream
from .sampling import SpdeSampler, kl_eigs, sample_kl
from .sincquad import inverse_rule, spde_rule


def _applicator(cfg) -> CovarianceApplicator:
    return CovarianceApplicator(cfg.grid, cfg.prior, taus=cfg.solver.taus,
                                tol=cfg.solver.tol, max_iter=cfg.solver.max_iter,
                                zeta=cfg.solver.zeta)


def _forward_from_args(args, grid):
    if args.model == "tomo":
        n_src = args.sources if args.sources else math.ceil(0.4 * grid.nx)
        n_rec = args.receivers if args.receivers else math.ceil(0.6 * grid.nx)
        return tomo_operator(grid, n_src, n_rec, geometry=args.geometry)
    op, _ = heat_operator(grid, args.t_final, args.steps)
    return op


def cmd_rule(args):
    if args.spde_alpha is not None:
        rule = spde_rule(args.spde_alpha, 1.0 / args.nx, zeta=args.zeta)
    else:
        rule = inverse_rule(args.s, 1.0 / args.nx, zeta=args.zeta)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["j", "z_j", "w_j"])
        for j, z, wt in zip(rule.j, rule.nodes, rule.weights):
            w.writerow([j, repr(float(z)), repr(float(wt))])
    finally:
        if args.out:
            out.close()
    print(f"n_sigma={rule.n_sigma} (M-={rule.m_minus}, M+={rule.m_plus}, zeta={rule.zeta:.6g})",
          file=sys.stderr)
    return 0


def cmd_apply_cov(args):
    cfg = load_config(args.config, require_trace_class=False)
    f = load_field(args.infile)
    if (f.grid.nx, f.grid.ny) != (cfg.grid.nx, cfg.grid.ny):
        raise ValidationError(f"field grid {f.grid.nx}x{f.grid.ny} does not match config "
                              f"grid {cfg.grid.nx}x{cfg.grid.ny}")
    app = _applicator(cfg)
    u = app.apply_cov(f.values)
    save_field(args.out, Field(u, cfg.grid))
    if app.last_report is not None:
        print(f"solver iterations: {app.last_report.iterations}", file=sys.stderr)
    return 0


def cmd_sample_spde(args):
    cfg = load_config(args.config)
    if not cfg.prior.alpha < 2.0:
        raise ValidationError(f"SPDE sampling needs alpha in (1,2); got {cfg.prior.alpha}")
    seed = args.seed if args.seed is not None else cfg.sampling.seed
    sampler = SpdeSampler(cfg.grid, cfg.prior.coefficients(), cfg.prior.alpha,
                          taus=cfg.solver.taus, tol=cfg.solver.tol,
                          max_iter=cfg.solver.max_iter, zeta=cfg.solver.zeta)
    stream = RandomStream(seed)
    count = args.count if args.count else cfg.sampling.n_samples
    paths = _numbered(args.out, count)
    for path in paths:
        u = sampler.draw(stream)
        save_field(path, Field(u, cfg.grid))
        if args.pgm:
            render_pgm(Field(u, cfg.grid), Path(path).with_suffix(".pgm"))
    print(f"wrote {count} sample(s); iterations={sampler.last_report.iterations}", file=sys.stderr)
    return 0


def _numbered(out, count):
    if count == 1:
        return [out]
    stem = Path(out)
    return [stem.with_name(f"{stem.stem}_{i:03d}{stem.suffix}") for i in range(count)]


def cmd_kl_eigs(args):
    cfg = load_config(args.config)
    app = _applicator(cfg)
    basis = kl_eigs(app, args.n_modes, oversample=args.oversample,
                    stream=RandomStream(args.seed if args.seed is not None else cfg.sampling.seed),
                    n_power=args.power)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, lam in enumerate(basis.eigenvalues, start=1):
            w.writerow([i, repr(float(lam))])
    if args.basis_out:
        np.savez(args.basis_out, eigenvalues=basis.eigenvalues, vectors=basis.vectors,
                 nx=cfg.grid.nx, ny=cfg.grid.ny, alpha=basis.alpha)
    return 0


def cmd_sample_kl(args):
    cfg = load_config(args.config)
    app = _applicator(cfg)
    seed = args.seed if args.seed is not None else cfg.sampling.seed
    basis = kl_eigs(app, args.n_modes, oversample=args.oversample,
                    stream=RandomStream(seed), n_power=args.power)
    stream = RandomStream(seed).branch(1)
    count = args.count if args.count else cfg.sampling.n_samples
    for path in _numbered(args.out, count):
        u = sample_kl(basis, cfg.prior.mean, stream)
        save_field(path, Field(u, cfg.grid))
        if args.pgm:
            render_pgm(Field(u, cfg.grid), Path(path).with_suffix(".pgm"))
    return 0


def cmd_forward(args):
    truth = load_field(args.truth)
    f = _forward_from_args(args, truth.grid)
    y, noise = make_data(f, truth.values, args.noise, RandomStream(args.seed))
    save_data_csv(args.out, y, noise.variances)
    print(f"{f.description}: wrote {len(y)} measurements", file=sys.stderr)
    return 0


def cmd_invert(args):
    cfg = load_config(args.prior)
    if args.alpha is not None:
        cfg.prior = PriorConfig(alpha=args.alpha, kappa2=cfg.prior.kappa2,
                                theta=cfg.prior.theta, lambda_c=cfg.prior.lambda_c,
                                mean=cfg.prior.mean)
        cfg.prior.require_trace_class()
    values, variances = load_data_csv(args.data)
    noise = NoiseModel(variances, noise_level=0.0 if args.noise is None else args.noise)
    f = _forward_from_args(args, cfg.grid)
    if f.n_data != len(values):
        raise ValidationError(f"forward model produces {f.n_data} measurements, data file has {len(values)}")
    app = _applicator(cfg)

    truth = None
    errs = []
    if args.truth:
        truth = load_field(args.truth).values
        tn = np.linalg.norm(truth)

        def track(state, lam_k, z_k):
            errs.append(float(np.linalg.norm(state.qv @ z_k - truth) / tn))
    else:
        track = None

    uq_rank = args.uq_rank if args.uq_rank else cfg.inversion.uq_rank
    result = map_estimate(f, noise, app, values, lam=cfg.prior.lambda_c,
                          max_iter=cfg.inversion.max_iter, min_iter=cfg.inversion.min_iter,
                          gcv_rtol=cfg.inversion.gcv_rtol,
                          uq_rank=uq_rank if args.uq else None, callback=track)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_field(outdir / "m_post.fld", Field(result.m_post, cfg.grid))
    render_pgm(Field(result.m_post, cfg.grid), outdir / "m_post.pgm")
    header = ["k", "lambda", "gcv", "rel_residual"] + (["rel_error"] if truth is not None else [])
    rows = []
    for i, (k, lam, g, r) in enumerate(result.history):
        row = [k, repr(lam), repr(g), repr(r)]
        if truth is not None:
            row.append(repr(errs[i]))
        rows.append(row)
    with open(outdir / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)

    msg = f"stopped at k={result.k}, lambda={result.lam:.6g}, converged={result.converged}"
    if truth is not None:
        msg += f", rel_error={np.linalg.norm(result.m_post - truth) / np.linalg.norm(truth):.4f}"
    if args.uq:
        diag_q = estimate_diag_q(app, args.diag_samples, stream=RandomStream(args.seed).branch(7))
        var, update, n_clamped = posterior_variance(result.state, result.lam, diag_q)
        save_field(outdir / "variance.fld", Field(var, cfg.grid))
        render_pgm(Field(var, cfg.grid), outdir / "variance.pgm")
        save_field(outdir / "variance_update.fld", Field(update, cfg.grid))
        msg += f", variance clamped at {n_clamped} nodes"
    print(msg, file=sys.stderr)
    return 0


def cmd_benchmark(args):
    row = shifted_benchmark(args.nx, s=args.s, kappa2=args.kappa2, tol=args.tol,
                            with_direct=not args.skip_direct)
    header = ["grid", "n_sigma", "iters", "basis_dim", "t_direct", "t_precond", "t_solve"]
    vals = [row["grid"], row["n_sigma"], row["iters"], row["basis_dim"],
            f"{row['t_direct']:.4f}", f"{row['t_precond']:.4f}", f"{row['t_mpgmres']:.4f}"]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(header)
        w.writerow(vals)
    finally:
        if args.out:
            out.close()
    return 0


def cmd_experiment(args):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    run_experiment(args.name, args.outdir, overrides)
    print(f"experiment {args.name} written to {args.outdir}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wmprior", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("rule", help="sinc quadrature rules")
    prsub = pr.add_subparsers(dest="rule_command", required=True)
    prd = prsub.add_parser("dump", help="emit (j, z_j, w_j) as CSV")
    prd.add_argument("--s", type=float, default=0.5, help="fractional exponent in (0,1)")
    prd.add_argument("--spde-alpha", type=float, default=None,
                     help="use the sampler rule for this alpha in (0,2) instead")
    prd.add_argument("--nx", type=int, default=33, help="grid points per dimension (h = 1/nx)")
    prd.add_argument("--zeta", type=float, default=None, help="override the quadrature step")
    prd.add_argument("--out", default=None)
    prd.set_defaults(func=cmd_rule)

    pa = sub.add_parser("apply-cov", help="apply the prior covariance to a field")
    pa.add_argument("--config", required=True)
    pa.add_argument("--in", dest="infile", required=True)
    pa.add_argument("--out", required=True)
    pa.set_defaults(func=cmd_apply_cov)

    ps = sub.add_parser("sample-spde", help="draw white-noise SPDE samples")
    ps.add_argument("--config", required=True)
    ps.add_argument("--out", required=True)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--count", type=int, default=None)
    ps.add_argument("--pgm", action="store_true", help="also render PGM images")
    ps.set_defaults(func=cmd_sample_spde)

    pk = sub.add_parser("kl-eigs", help="randomized truncated KL eigenpairs")
    pk.add_argument("--config", required=True)
    pk.add_argument("--n-modes", type=int, required=True)
    pk.add_argument("--oversample", type=int, default=20)
    pk.add_argument("--power", type=int, default=1)
    pk.add_argument("--seed", type=int, default=None)
    pk.add_argument("--out", required=True, help="eigenvalue CSV")
    pk.add_argument("--basis-out", default=None, help="optional NPZ with eigenvectors")
    pk.set_defaults(func=cmd_kl_eigs)

    pkl = sub.add_parser("sample-kl", help="draw truncated KL samples")
    pkl.add_argument("--config", required=True)
    pkl.add_argument("--n-modes", type=int, required=True)
    pkl.add_argument("--oversample", type=int, default=20)
    pkl.add_argument("--power", type=int, default=1)
    pkl.add_argument("--seed", type=int, default=None)
    pkl.add_argument("--count", type=int, default=None)
    pkl.add_argument("--out", required=True)
    pkl.add_argument("--pgm", action="store_true")
    pkl.set_defaults(func=cmd_sample_kl)

    pf = sub.add_parser("forward", help="apply a forward model and add noise")
    pf.add_argument("--model", choices=("tomo", "heat"), required=True)
    pf.add_argument("--truth", required=True, help="FLD1 field")
    pf.add_argument("--noise", type=float, default=0.02)
    pf.add_argument("--seed", type=int, default=0)
    pf.add_argument("--out", required=True, help="data CSV")
    pf.add_argument("--sources", type=int, default=None)
    pf.add_argument("--receivers", type=int, default=None)
    pf.add_argument("--geometry", choices=("cross-well", "parallel"), default="cross-well")
    pf.add_argument("--t-final", type=float, default=0.01)
    pf.add_argument("--steps", type=int, default=100)
    pf.set_defaults(func=cmd_forward)

    pi = sub.add_parser("invert", help="MAP estimate (and optionally posterior variance)")
    pi.add_argument("--model", choices=("tomo", "heat"), required=True)
    pi.add_argument("--data", required=True)
    pi.add_argument("--prior", required=True, help="config file")
    pi.add_argument("--alpha", type=float, default=None, help="override the prior exponent")
    pi.add_argument("--uq", action="store_true", help="compute the posterior variance")
    pi.add_argument("--uq-rank", type=int, default=None)
    pi.add_argument("--diag-samples", type=int, default=300)
    pi.add_argument("--truth", default=None, help="optional truth FLD1 for error history")
    pi.add_argument("--noise", type=float, default=None)
    pi.add_argument("--seed", type=int, default=0)
    pi.add_argument("--outdir", required=True)
    pi.add_argument("--sources", type=int, default=None)
    pi.add_argument("--receivers", type=int, default=None)
    pi.add_argument("--geometry", choices=("cross-well", "parallel"), default="cross-well")
    pi.add_argument("--t-final", type=float, default=0.01)
    pi.add_argument("--steps", type=int, default=100)
    pi.set_defaults(func=cmd_invert)

    pb = sub.add_parser("benchmark", help="MPGMRES-Sh vs per-shift direct solves")
    pb.add_argument("--nx", type=int, required=True)
    pb.add_argument("--s", type=float, default=0.5)
    pb.add_argument("--kappa2", type=float, default=100.0)
    pb.add_argument("--tol", type=float, default=1e-8)
    pb.add_argument("--skip-direct", action="store_true")
    pb.add_argument("--out", default=None)
    pb.set_defaults(func=cmd_benchmark)

    pe = sub.add_parser("experiment", help="run a canned experiment")
    pe.add_argument("name")
    pe.add_argument("--outdir", default="out")
    pe.add_argument("--set", action="append", metavar="KEY=VALUE")
    pe.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
