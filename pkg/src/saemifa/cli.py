"""Command-line surface: simulate, fit, errors, scores, spectra, dims.

Exit codes: 0 success, 2 validation failure, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import engine, io, scores as scores_mod, simulation, spectral
from .distributions import RngStream
from .model import ConvergenceConfig, GainSchedule

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3


def _load_config(path):
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _schedule_from(cfg: dict, n: int):
    burn_in = cfg.get("burn_in")
    if burn_in is None:
        sched = engine.default_schedule(n)
        burn_in = sched.burn_in
    frac = cfg.get("anneal_fraction", 0.2)
    return GainSchedule(burn_in=int(burn_in),
                        anneal_window=max(1, round(frac * int(burn_in))))


def _convergence_from(cfg: dict, burn_in: int):
    return ConvergenceConfig(
        epsilon=cfg.get("epsilon", 1e-4),
        window=cfg.get("window", 3),
        max_iterations=cfg.get("max_iter", burn_in + 3000),
    )


def _run_fit(args, cfg):
    y = io.load_responses_csv(args.input, has_header=args.has_header)
    q = args.q if args.q is not None else cfg.get("Q", 1)
    model = args.model or cfg.get("model", "graded" if y.n_categories > 2 else "2PNO")
    schedule = _schedule_from(cfg, y.n_examinees)
    conv = _convergence_from(cfg, schedule.burn_in)
    result = engine.fit(y, q, model=model, schedule=schedule, cfg=conv,
                        rng=RngStream(args.seed), workers=args.workers,
                        track_errors=getattr(args, "track_errors", False))
    return y, result


def cmd_simulate(args, cfg):
    spec = simulation.condition(args.condition)
    report = simulation.run_condition(
        spec, reps=args.reps, seed=args.seed,
        workers=args.workers, n_override=args.n)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    io.write_params_csv(report.true_params, outdir / "true_params.csv")
    # regenerate the per-replication data deterministically for export
    master = RngStream(args.seed)
    streams = master.children(report.replications + 2)
    for r in range(report.replications):
        data_rng = streams[2 + r].children(2)[0].generator()
        theta = simulation.generate_abilities(spec, data_rng, n=args.n or spec.n)
        y = simulation.generate_responses(report.true_params, theta, data_rng)
        np.savetxt(outdir / f"responses_rep{r + 1}.csv", y.data, fmt="%d", delimiter=",")
    recovery = {
        "condition": spec.id,
        "replications": report.replications,
        "metrics": report.metrics,
        "deviations": report.deviations,
    }
    (outdir / "recovery.json").write_text(json.dumps(recovery, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_fit(args, cfg):
    y, result = _run_fit(args, cfg)
    params = result.parameters
    if args.rotate != "none" and params.n_factors > 1:
        from .rotation import TargetMask, random_restart_target, varimax
        if args.rotate == "varimax":
            rotated = varimax(params.loadings)
        else:
            if not args.target:
                raise ValueError("--rotate target requires --target mask.csv")
            mask = TargetMask(free=io.load_matrix_csv(args.target) != 0)
            rotated, _, _ = random_restart_target(
                params.loadings, mask, RngStream(args.seed, 999).generator())
        result.parameters = params.with_loadings(rotated)
    stats = engine.compute_fit_statistics(
        y, result.parameters, rng=RngStream(args.seed, 998).generator())
    result.fit_statistics = stats
    spectra = io.spectral_report(result.sigma, y.n_examinees)
    io.write_fit_report(result, None, spectra, args.out)
    return EXIT_OK if result.converged else EXIT_NONCONVERGENCE


def cmd_errors(args, cfg):
    from . import standard_errors as se
    args.track_errors = args.method == "ice"
    y, result = _run_fit(args, cfg)
    method = args.method.lower()
    if method in ("ice", "spce", "ipce"):
        report = se.estimate_hessian_errors(
            result, y, mode=method.upper(), link=args.link,
            rng=RngStream(args.seed, 997).generator())
    else:
        report = se.mcmc_chain_errors(result.chain_snapshots,
                                      mode=method.replace("-", "_").upper())
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    io.write_params_csv(result.parameters, outdir / "params.csv",
                        errors={report.method: report})
    payload = {
        "method": report.method,
        "se": {n: (None if not np.isfinite(v) else float(v))
               for n, v in zip(report.names, report.se)},
        "negative_variance_flags": [n for n, f in
                                    zip(report.names, report.negative_variance_flags) if f],
    }
    (outdir / "errors.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK if result.converged else EXIT_NONCONVERGENCE


def cmd_scores(args, cfg):
    y, result = _run_fit(args, cfg)
    if args.method == "eap":
        mean, sd = scores_mod.eap_scores(y, result.parameters)
        mean, sd = mean[:, None], sd[:, None]
    else:
        mean, sd = scores_mod.sampled_scores(
            y, result, n_cycles=args.cycles,
            rng=RngStream(args.seed, 996).generator())
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    q = mean.shape[1]
    header = ",".join([f"theta{m + 1}" for m in range(q)] +
                      [f"sd{m + 1}" for m in range(q)])
    np.savetxt(outdir / "scores.csv", np.hstack([mean, sd]),
               delimiter=",", header=header, comments="", fmt="%.17g")
    return EXIT_OK if result.converged else EXIT_NONCONVERGENCE


def cmd_spectra(args, cfg):
    s2 = io.load_matrix_csv(args.input)
    payload = io.spectral_report(s2, args.n, args.alpha)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_dims(args, cfg):
    y = io.load_responses_csv(args.input, has_header=args.has_header)
    model = args.model or cfg.get("model", "graded" if y.n_categories > 2 else "2PNO")
    schedule = _schedule_from(cfg, y.n_examinees)
    conv = _convergence_from(cfg, schedule.burn_in)

    def fitter(q):
        result = engine.fit(y, q, model=model, schedule=schedule, cfg=conv,
                            rng=RngStream(args.seed, 100 + q),
                            workers=args.workers, record_chains=False)
        return result.sigma

    history = []
    q, d_f = spectral.retain_dimensions(fitter, y.n_items, y.n_examinees,
                                        alpha=args.alpha, history=history)
    payload = {
        "retained": q,
        "residual_gap": d_f,
        "trajectory": [vars(h) for h in history],
        "alpha": args.alpha,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saemifa",
                                     description="SAEM item factor analysis")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--config", default=None, help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate and score a simulation condition")
    p.add_argument("--condition", type=int, required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--n", type=int, default=None, help="down-scaled sample size")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    def add_fit_args(p):
        p.add_argument("--input", required=True)
        p.add_argument("--has-header", action="store_true")
        p.add_argument("--q", type=int, default=None)
        p.add_argument("--model", choices=engine.MODELS, default=None)

    p = sub.add_parser("fit", help="fit the factor model to a response CSV")
    add_fit_args(p)
    p.add_argument("--rotate", choices=["none", "varimax", "target"], default="none")
    p.add_argument("--target", default=None, help="target mask CSV for --rotate target")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("errors", help="standard errors for a fitted model")
    add_fit_args(p)
    p.add_argument("--method", required=True,
                   choices=["ice", "spce", "ipce", "clt-f", "clt-i", "mcmc"])
    p.add_argument("--link", choices=["ogive", "logistic"], default="ogive")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_errors)

    p = sub.add_parser("scores", help="factor scores at converged parameters")
    add_fit_args(p)
    p.add_argument("--method", choices=["eap", "sampled"], default="eap")
    p.add_argument("--cycles", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scores)

    p = sub.add_parser("spectra", help="eigenvalue significance report for an S2 CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("dims", help="run the factor-retention loop end to end")
    add_fit_args(p)
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_dims)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _load_config(args.config)
    if "seed" in cfg and args.seed == 0:
        args.seed = int(cfg["seed"])
    if "workers" in cfg and args.workers == 1:
        args.workers = int(cfg["workers"])
    try:
        return args.func(args, cfg)
    except (ValueError, io.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
