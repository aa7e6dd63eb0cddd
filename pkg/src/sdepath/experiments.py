"""Monte Carlo error-versus-steps studies and their file outputs.

For each discretisation parameter N (max step h = T/N) the harness runs M
independent paths, one stream per sample id, and collects the pathwise
relative error

    E = max_n |y_n - y(tau_n)| / max_n |y(tau_n)|

evaluated against the exact solution on the same Brownian record, together
with step-count statistics. Aggregates follow the reference study:
|E|_2 = (sum_j E_j^2)^(1/2) over the M samples (no 1/M normalisation) and
sigma is the sample standard deviation of E.

Outputs are deterministic given the configuration: CSV bytes depend only on
it, and the per-sample reduction is ordered by sample id. Wall-clock
timings, being inherently nondeterministic, go to a separate sidecar file.
"""

import csv
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import engine
from .brownian import RngStream
from .errors import (
    ConfigurationError,
    DegenerateNormalizerError,
    ExperimentError,
    ParameterError,
)
from .model import get_problem
from .steppers import DEFAULT_CLAMP, StepController

METHODS = ("fixed", "adaptive1", "adaptive2")
DEFAULT_N_LIST = (16, 32, 64, 128, 256, 512, 1024)
DEFAULT_ALPHA = {"fixed": 0.0, "adaptive1": 0.5, "adaptive2": 0.9}
MAX_FAILURE_FRACTION = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    method: str
    stepper: str = "explicit"
    alpha: Optional[float] = None  # per-method default when None
    beta: float = 0.1
    clamp: float = DEFAULT_CLAMP
    N_list: tuple = DEFAULT_N_LIST
    samples: int = 5000
    seed: int = 0
    out: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.stepper not in ("explicit", "implicit"):
            raise ConfigurationError(f"unknown stepper {self.stepper!r}")
        if self.samples < 1:
            raise ConfigurationError(f"samples must be >= 1, got {self.samples}")
        n = tuple(int(x) for x in self.N_list)
        if not n or any(b <= a for a, b in zip(n, n[1:])):
            raise ConfigurationError(f"N_list must be nonempty and increasing, got {n}")
        object.__setattr__(self, "N_list", n)

    def resolved_alpha(self):
        return DEFAULT_ALPHA[self.method] if self.alpha is None else self.alpha

    def controller(self, T, N):
        h = T / N
        if self.method == "fixed":
            return StepController.fixed(h)
        if self.method == "adaptive1":
            return StepController.adaptive1(h, alpha=self.resolved_alpha(), clamp=self.clamp)
        return StepController.adaptive2(
            h, alpha=self.resolved_alpha(), beta=self.beta, clamp=self.clamp
        )


@dataclass(frozen=True)
class ErrorStats:
    """Per-sample errors and step counts for one (method, N) cell."""

    errors: np.ndarray  # successful samples only
    steps: np.ndarray
    sample_ids: np.ndarray
    failures: int

    @property
    def samples(self):
        return len(self.errors)

    @property
    def E2(self):
        return float(np.sqrt(np.sum(self.errors**2)))

    @property
    def sigma(self):
        return float(np.std(self.errors, ddof=1)) if len(self.errors) > 1 else 0.0

    @property
    def mean_steps(self):
        return float(np.mean(self.steps))

    @property
    def sigma_steps(self):
        return float(np.std(self.steps, ddof=1)) if len(self.steps) > 1 else 0.0


@dataclass(frozen=True)
class RunRow:
    method: str
    N: int
    stats: ErrorStats
    wall_seconds: float = field(default=0.0, compare=False)


def relative_error(traj, problem):
    """Max relative deviation from the exact solution on the same record."""
    if problem.exact is None:
        raise ConfigurationError("problem has no exact solution")
    times = np.asarray(traj.record.times)
    w = np.asarray(traj.record.cumulative)
    yex = np.asarray(problem.exact(times, w), dtype=float)
    z = np.linalg.norm(yex, axis=-1).max()
    if not z > 0.0:
        raise DegenerateNormalizerError("max |y(tau_n)| is zero")
    num = np.linalg.norm(np.asarray(traj.states) - yex, axis=-1).max()
    return float(num / z)


def run_experiment(config):
    """Run the configured study; returns one RunRow per N, ordered as given.

    Failed samples (overflow, solver breakdown) are excluded and counted;
    more than MAX_FAILURE_FRACTION of M failing raises ExperimentError.
    Deterministic given config: sample j always uses stream (seed, j).
    """
    problem = get_problem(config.problem)
    if problem.exact is None:
        raise ConfigurationError("experiments need a problem with an exact solution")
    rows = []
    for N in config.N_list:
        controller = config.controller(problem.T, N)
        t0 = time.perf_counter()
        streams = [RngStream(config.seed, sid) for sid in range(config.samples)]
        result = engine.run_batch(problem, controller, config.stepper, streams)
        wall = time.perf_counter() - t0
        ok = ~result.failed
        n_fail = int(result.failed.sum())
        if n_fail > MAX_FAILURE_FRACTION * config.samples:
            raise ExperimentError(
                f"{n_fail}/{config.samples} samples failed at N={N} "
                f"({config.method}, {config.problem})"
            )
        ids = np.nonzero(ok)[0]
        stats = ErrorStats(
            errors=result.errors[ids],
            steps=result.steps[ids],
            sample_ids=ids,
            failures=n_fail,
        )
        rows.append(RunRow(method=config.method, N=int(N), stats=stats, wall_seconds=wall))
    return rows


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    ci: tuple
    n_points: int


def convergence_slope(rows, n_boot=1000, seed=0):
    """Least-squares slope of log E2 against log mean steps, with bootstrap CI.

    Needs >= 4 N values spanning >= 1.5 decades in mean steps.
    """
    rows = [r for r in rows]
    if len(rows) < 4:
        raise ConfigurationError(f"need >= 4 N values, got {len(rows)}")
    x = np.array([r.stats.mean_steps for r in rows])
    if np.log10(x.max() / x.min()) < 1.5:
        raise ConfigurationError("mean-step range must span >= 1.5 decades")
    y = np.array([r.stats.E2 for r in rows])
    slope = float(np.polyfit(np.log(x), np.log(y), 1)[0])

    rng = np.random.Generator(np.random.Philox(key=seed))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        xs, ys = [], []
        for r in rows:
            e = r.stats.errors
            s = r.stats.steps
            idx = rng.integers(0, len(e), len(e))
            xs.append(np.mean(s[idx]))
            ys.append(np.sqrt(np.sum(e[idx] ** 2)))
        boots[b] = np.polyfit(np.log(xs), np.log(ys), 1)[0]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return SlopeFit(slope=slope, ci=(float(lo), float(hi)), n_points=len(rows))


def matched_stats(rows_fixed, rows_other, stat="E2"):
    """Interpolate the other method's statistic at the fixed method's
    mean-step abscissae (log-log), keeping abscissae inside the overlap.

    Returns a list of (mean_steps, fixed_value, other_value_interp).
    """
    getter = {
        "E2": lambda r: r.stats.E2,
        "sigma": lambda r: r.stats.sigma,
    }[stat]
    xo = np.array([r.stats.mean_steps for r in rows_other])
    yo = np.array([getter(r) for r in rows_other])
    order = np.argsort(xo)
    xo, yo = xo[order], yo[order]
    out = []
    for r in rows_fixed:
        xf = r.stats.mean_steps
        if xo[0] <= xf <= xo[-1]:
            val = np.interp(np.log(xf), np.log(xo), np.log(yo))
            out.append((xf, getter(r), float(np.exp(val))))
    return out


def _fmt(x):
    return repr(float(x))


def emit_outputs(rows, outdir, plots=True):
    """Write stats.csv, scatter.csv, steps.csv (+ figures, timings sidecar).

    CSV bytes are a pure function of the rows; timings.csv echoes the
    nondeterministic wall-clock column and is excluded from that guarantee.
    Returns the list of paths written.
    """
    os.makedirs(outdir, exist_ok=True)
    written = []

    path = os.path.join(outdir, "stats.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["method", "N", "mean_steps", "sigma_steps", "E2", "sigma_E", "samples", "failures"]
        )
        for r in rows:
            s = r.stats
            w.writerow(
                [
                    r.method,
                    r.N,
                    _fmt(s.mean_steps),
                    _fmt(s.sigma_steps),
                    _fmt(s.E2),
                    _fmt(s.sigma),
                    s.samples,
                    s.failures,
                ]
            )
    written.append(path)

    path = os.path.join(outdir, "scatter.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "N", "sample_id", "steps", "E"])
        for r in rows:
            s = r.stats
            for sid, st, e in zip(s.sample_ids, s.steps, s.errors):
                w.writerow([r.method, r.N, int(sid), int(st), _fmt(e)])
    written.append(path)

    path = os.path.join(outdir, "steps.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "N", "mean_steps", "sigma_steps"])
        for r in rows:
            w.writerow([r.method, r.N, _fmt(r.stats.mean_steps), _fmt(r.stats.sigma_steps)])
    written.append(path)

    path = os.path.join(outdir, "timings.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "N", "wall_seconds"])
        for r in rows:
            w.writerow([r.method, r.N, _fmt(r.wall_seconds)])
    written.append(path)

    if plots and rows:
        from . import plots as _plots

        written.extend(_plots.render_report(rows, outdir))
    return written


def read_stats_csv(path):
    """Parse stats.csv back into typed rows (round-trip helper)."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                {
                    "method": rec["method"],
                    "N": int(rec["N"]),
                    "mean_steps": float(rec["mean_steps"]),
                    "sigma_steps": float(rec["sigma_steps"]),
                    "E2": float(rec["E2"]),
                    "sigma_E": float(rec["sigma_E"]),
                    "samples": int(rec["samples"]),
                    "failures": int(rec["failures"]),
                }
            )
    return out
