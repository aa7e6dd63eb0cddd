"""Command line interface: `sdepath run` and `sdepath diagnose`."""

import argparse
import sys

import numpy as np

from .brownian import RngStream
from .errors import SdePathError
from .experiments import (
    DEFAULT_N_LIST,
    ExperimentConfig,
    emit_outputs,
    run_experiment,
)
from .model import get_problem, problem_keys


def _n_list(text):
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse N list {text!r}") from None


def _add_common(p):
    p.add_argument("--problem", default="gbm-0.1-1.2",
                   help=f"problem key (built-in: {', '.join(problem_keys())})")
    p.add_argument("--N", type=_n_list, default=DEFAULT_N_LIST,
                   help="comma-separated discretisation parameters, h = T/N")
    p.add_argument("--samples", type=int, default=5000, help="Monte Carlo samples M")
    p.add_argument("--seed", type=int, default=0, help="base seed; sample j uses stream (seed, j)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sdepath",
        description="Pathwise SDE integration with bounded-diffusion adaptive steps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="error-vs-steps Monte Carlo study")
    _add_common(run_p)
    run_p.add_argument("--method", choices=("fixed", "adaptive1", "adaptive2"),
                       default="fixed")
    run_p.add_argument("--stepper", choices=("explicit", "implicit"), default="explicit")
    run_p.add_argument("--alpha", type=float, default=None,
                       help="step-rule parameter (default 0.5 adaptive1, 0.9 adaptive2)")
    run_p.add_argument("--beta", type=float, default=0.1,
                       help="sub-step stopping fraction of h (adaptive2)")
    run_p.add_argument("--clamp", type=float, default=100.0,
                       help="cap on the curvature norms |q_ij|")
    run_p.add_argument("--no-plots", action="store_true", help="skip SVG figures")

    diag_p = sub.add_parser("diagnose", help="probe the assumptions behind the rates")
    _add_common(diag_p)
    diag_p.add_argument("--probe", choices=("truncation", "scaling", "flow"),
                        default="scaling")
    diag_p.add_argument("--method", choices=("fixed", "adaptive1", "adaptive2"),
                        default="fixed")
    diag_p.add_argument("--stepper", choices=("explicit", "implicit"), default="explicit")
    diag_p.add_argument("--alpha", type=float, default=None)
    diag_p.add_argument("--beta", type=float, default=0.1)
    diag_p.add_argument("--clamp", type=float, default=100.0)
    diag_p.add_argument("--reference", choices=("exact", "fine_grid"), default="exact")
    diag_p.add_argument("--refine", type=int, default=64,
                        help="fine-grid refinement factor of the reference flow")
    diag_p.add_argument("--pairs", type=int, default=2000,
                        help="probe pairs for the flow probe")
    return parser


def _cmd_run(args):
    config = ExperimentConfig(
        problem=args.problem,
        method=args.method,
        stepper=args.stepper,
        alpha=args.alpha,
        beta=args.beta,
        clamp=args.clamp,
        N_list=args.N,
        samples=args.samples,
        seed=args.seed,
        out=args.out,
    )
    rows = run_experiment(config)
    for r in rows:
        s = r.stats
        print(
            f"{r.method} N={r.N}: mean_steps={s.mean_steps:.2f} "
            f"E2={s.E2:.6g} sigma={s.sigma:.6g} failures={s.failures} "
            f"[{r.wall_seconds:.2f}s]"
        )
    written = emit_outputs(rows, args.out, plots=not args.no_plots)
    print("wrote: " + ", ".join(written))
    return 0


def _diag_trajectories(args, problem):
    from . import engine
    from .experiments import ExperimentConfig

    config = ExperimentConfig(
        problem=args.problem,
        method=args.method,
        stepper=args.stepper,
        alpha=args.alpha,
        beta=args.beta,
        clamp=args.clamp,
        N_list=args.N,
        samples=args.samples,
        seed=args.seed,
    )
    per_n = {}
    for N in config.N_list:
        controller = config.controller(problem.T, N)
        streams = [RngStream(config.seed, sid) for sid in range(config.samples)]
        res = engine.run_batch(problem, controller, config.stepper, streams, record=True)
        per_n[N] = [t for t in res.trajectories if t is not None]
    return per_n


def _cmd_diagnose(args):
    import os

    from . import diagnostics, plots

    problem = get_problem(args.problem)
    os.makedirs(args.out, exist_ok=True)

    if args.probe == "flow":
        probe = diagnostics.flow_probe(problem, args.pairs, RngStream(args.seed, 0))
        print(
            f"flow probe over {args.pairs} pairs: max boom ratio "
            f"{probe.max_boom:.4g}, max scaled lte2 ratio {probe.max_lte2_scaled:.4g}, "
            f"(t-s) exponent {probe.gap_exponent:.3f} "
            f"CI [{probe.gap_exponent_ci[0]:.3f}, {probe.gap_exponent_ci[1]:.3f}]"
        )
        import csv

        path = os.path.join(args.out, "flow.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "t", "boom_ratio", "lte2_ratio", "lte2_scaled"])
            for row in zip(probe.s, probe.t, probe.boom_ratio, probe.lte2_ratio,
                           probe.lte2_scaled):
                w.writerow([repr(float(v)) for v in row])
        print(f"wrote: {path}")
        return 0

    per_n = _diag_trajectories(args, problem)
    reports = []
    for N, trajs in per_n.items():
        for sid, traj in enumerate(trajs):
            stream = RngStream(args.seed ^ 0xD1A6, sid)
            reports.append(
                diagnostics.local_truncation(
                    problem,
                    traj,
                    reference=args.reference,
                    refine_factor=args.refine,
                    stream=stream,
                    sample_id=sid,
                )
            )
    path = os.path.join(args.out, "xkn.csv")
    diagnostics.write_xkn_csv(reports, path)
    print(f"wrote: {path}")

    if args.probe == "truncation":
        slope, ci = diagnostics.truncation_order_fit(reports)
        print(f"per-step error exponent: {slope:.3f} CI [{ci[0]:.3f}, {ci[1]:.3f}]")
        ks = [
            diagnostics.step_bound_constant(t, problem.T / N)
            for N, trajs in per_n.items()
            for t in trajs
        ]
        ks = np.asarray([k for k in ks if np.isfinite(k)])
        if len(ks):
            print(
                f"step lower-bound constant (delta=1/7): median {np.median(ks):.4g}, "
                f"q90 {np.quantile(ks, 0.9):.4g}"
            )
    else:  # scaling
        fit = diagnostics.truncation_sum_scaling(reports)
        print(
            f"h-exponent: {fit.h_exponent:.3f} CI [{fit.h_ci[0]:.3f}, {fit.h_ci[1]:.3f}]"
        )
        print(
            f"time-exponent: {fit.time_exponent:.3f} "
            f"CI [{fit.time_ci[0]:.3f}, {fit.time_ci[1]:.3f}]"
        )
        fig_path = os.path.join(args.out, "scaling_fit.svg")
        plots.render_scaling_fit(reports, fit, fig_path)
        print(f"wrote: {fig_path}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_diagnose(args)
    except SdePathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
