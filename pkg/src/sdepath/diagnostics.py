"""Empirical probes of the regularity assumptions behind the error theory.

Measured quantities, all against a reference flow evaluated on the same
Brownian increments as the numerical path:

* per-step defects delta_k = y(tau_{k+1}; tau_k, y_k) - S_{k,k+1}(y_k) and
  their telescoped sums X_kn = sum_{j=k}^{n-1} delta_j;
* the scaling of a high quantile of |X_kn| in the time gap and in the
  maximum step h (two-way log-log fit with bootstrap intervals);
* continuity-of-flow ratios between two nearby starting states and the
  Holder exponent of their (t - s) dependence;
* the empirical constant of the step-size lower bound h <= K dt^(1-delta).

The reference flow is the closed form when the problem carries one, or an
Euler solve on a refine_factor-times finer grid whose sub-increments are a
Gaussian bridge conditioned on the recorded step increment, so the fine
solve lives on the same path as the coarse one.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .brownian import RngStream
from .errors import ConfigurationError
from .steppers import _implicit_solve

MAX_PAIRS = 32  # X_kn pairs kept per trajectory, geometric in the gap n-k
SCALING_QUANTILE = 0.9  # a.s.-bounded constants: high quantile, not max


@dataclass(frozen=True)
class TruncationReport:
    """Per-step defects and subsampled partial sums for one trajectory."""

    h: float
    sample_id: int
    times: np.ndarray  # (N+1,)
    dts: np.ndarray  # (N,)
    per_step_errors: np.ndarray  # (N,) |delta_k|
    pairs: np.ndarray  # (P, 5) columns k, n, tau_k, tau_n, |X_kn|
    fitted_exponents: tuple  # (step_exponent, time_exponent), NaN if not identifiable
    prefix: np.ndarray  # (N+1, d) prefix sums of the delta vectors

    def partial_sum(self, k, n):
        """X_kn as a vector (prefix-sum difference; X_kk = 0)."""
        return self.prefix[n] - self.prefix[k]

    def partial_sum_matrix(self):
        """Dense |X_kn| matrix; O(N^2), intended for short trajectories."""
        diff = self.prefix[None, :, :] - self.prefix[:, None, :]
        return np.linalg.norm(diff, axis=-1)


def _slope(x, y):
    if len(x) < 2 or np.ptp(x) == 0.0:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def _binned_median_slope(logx, logy, bins=8):
    """Slope of log-median trend, robust to the heavy tails of |delta|."""
    order = np.argsort(logx)
    lx, ly = logx[order], logy[order]
    uniq = np.unique(lx)
    if len(uniq) <= bins:
        centers = uniq
        meds = np.array([np.median(ly[lx == u]) for u in uniq])
    else:
        edges = np.quantile(lx, np.linspace(0.0, 1.0, bins + 1))
        edges[-1] += 1e-12
        which = np.digitize(lx, edges) - 1
        centers, meds = [], []
        for b in range(bins):
            sel = which == b
            if sel.sum() >= 3:
                centers.append(lx[sel].mean())
                meds.append(np.median(ly[sel]))
        centers, meds = np.array(centers), np.array(meds)
    return _slope(centers, meds)


def _bridge_fine_flow(problem, y_from, dts, incs, refine, stream):
    """Euler flow on a refine-times finer grid, conditioned on each step's
    total increment (Gaussian bridge), vectorized across steps."""
    n, m = incs.shape
    sub_dt = dts / refine
    if m:
        z = stream.normals(n * refine * m).reshape(n, refine, m)
        eta = z * np.sqrt(sub_dt)[:, None, None]
        eta += (incs - eta.sum(axis=1))[:, None, :] / refine
    else:
        eta = np.zeros((n, refine, 0))
    y = y_from.copy()
    for r in range(refine):
        upd = problem.drift.eval(y) * sub_dt[:, None]
        for j in range(m):
            upd = upd + problem.g[j + 1].eval(y) * eta[:, r, j, None]
        y = y + upd
    return y


def local_truncation(
    problem,
    traj,
    reference="exact",
    refine_factor=64,
    stream=None,
    stepper=None,
    sample_id=0,
):
    """Per-step defects of one trajectory against a reference flow.

    reference is "exact" (requires problem.exact_flow) or "fine_grid"
    (refine_factor >= 10; needs a stream for the bridge sub-increments).
    """
    if stepper is None:
        stepper = traj.controller_tag.split(":")[-1] if ":" in traj.controller_tag else "explicit"
    times = np.asarray(traj.record.times)
    dts = np.diff(times)
    incs = np.asarray(traj.record.increments)
    y_from = np.asarray(traj.states[:-1])
    y_to = np.asarray(traj.states[1:])
    n = len(dts)

    if reference == "exact":
        if problem.exact_flow is None:
            raise ConfigurationError("problem has no exact flow; use fine_grid")
        flow = np.asarray(problem.exact_flow(y_from, dts, incs), dtype=float)
    elif reference == "fine_grid":
        if refine_factor < 10:
            raise ConfigurationError(f"refine_factor must be >= 10, got {refine_factor}")
        if stream is None:
            raise ConfigurationError("fine_grid reference needs a stream")
        flow = _bridge_fine_flow(problem, y_from, dts, incs, int(refine_factor), stream)
    else:
        raise ConfigurationError(f"unknown reference {reference!r}")

    if stepper == "explicit":
        method_out = y_to
    else:
        method_out, ok = _implicit_solve(problem, y_from, dts, incs)
        if not ok.all():
            raise ConfigurationError("implicit re-solve failed on recorded steps")

    delta = flow - method_out
    per_step = np.linalg.norm(delta, axis=-1)
    prefix = np.vstack([np.zeros((1, problem.d)), np.cumsum(delta, axis=0)])

    # subsampled (k, n) grid, geometric in the gap
    gaps = []
    g = 1
    while g <= n:
        gaps.append(g)
        g *= 2
    if gaps and gaps[-1] != n:
        gaps.append(n)
    per_gap = max(1, MAX_PAIRS // max(len(gaps), 1))
    rows = []
    for g in gaps:
        ks = np.unique(np.round(np.linspace(0, n - g, min(per_gap, n - g + 1))).astype(int))
        for k in ks:
            nn = k + g
            xnorm = float(np.linalg.norm(prefix[nn] - prefix[k]))
            rows.append((k, nn, times[k], times[nn], xnorm))
    pairs = np.array(rows, dtype=float) if rows else np.zeros((0, 5))

    with np.errstate(divide="ignore"):
        pos = per_step > 0.0
        step_exp = (
            _binned_median_slope(np.log(dts[pos]), np.log(per_step[pos]))
            if pos.sum() >= 2
            else float("nan")
        )
        ppos = pairs[:, 4] > 0.0
        gap_t = pairs[ppos, 3] - pairs[ppos, 2]
        time_exp = (
            _binned_median_slope(np.log(gap_t), np.log(pairs[ppos, 4]))
            if ppos.sum() >= 3
            else float("nan")
        )

    return TruncationReport(
        h=float(np.max(dts)),
        sample_id=int(sample_id),
        times=times,
        dts=dts,
        per_step_errors=per_step,
        pairs=pairs,
        fitted_exponents=(step_exp, time_exp),
        prefix=prefix,
    )


@dataclass(frozen=True)
class ScalingFit:
    """Two-way fit |X| ~ gap^time_exponent * h^h_exponent with bootstrap CIs."""

    h_exponent: float
    h_ci: tuple
    time_exponent: float
    time_ci: tuple
    n_cells: int


def _fit_cells(log_gap, log_h, log_q):
    a = np.column_stack([np.ones_like(log_gap), log_gap, log_h])
    coef, *_ = np.linalg.lstsq(a, log_q, rcond=None)
    return coef[1], coef[2]


def truncation_sum_scaling(reports, quantile=SCALING_QUANTILE, n_boot=1000, seed=0):
    """Fit the (gap, h) scaling of the quantile of |X_kn| across reports.

    Needs at least 3 distinct h values with >= 100 reports each. Cells are
    (h, gap) groups; the regression is over cell quantiles and the bootstrap
    resamples reports within each h group.
    """
    by_h = {}
    for rep in reports:
        by_h.setdefault(rep.h, []).append(rep)
    if len(by_h) < 3:
        raise ConfigurationError(f"need >= 3 distinct h values, got {len(by_h)}")
    for h, reps in by_h.items():
        if len(reps) < 100:
            raise ConfigurationError(
                f"need >= 100 samples per h, got {len(reps)} at h={h}"
            )

    # rows per h group: value matrix-ish storage keyed by gap
    groups = []  # (log h, {gap: (values (n_rep, n_k), log_dtau rows)})
    for h in sorted(by_h):
        reps = by_h[h]
        per_gap_vals = {}
        per_gap_ldt = {}
        for ri, rep in enumerate(reps):
            k = rep.pairs[:, 0].astype(int)
            nn = rep.pairs[:, 1].astype(int)
            gap = nn - k
            dtau = rep.pairs[:, 3] - rep.pairs[:, 2]
            val = rep.pairs[:, 4]
            for gi in np.unique(gap):
                sel = gap == gi
                per_gap_vals.setdefault(gi, []).append(val[sel])
                per_gap_ldt.setdefault(gi, []).append(np.log(dtau[sel]))
        groups.append((np.log(h), len(reps), per_gap_vals, per_gap_ldt))

    def cells_from(selection_per_group):
        lg, lh, lq = [], [], []
        for (logh, n_rep, vals, ldts), sel in zip(groups, selection_per_group):
            for gi in vals:
                v = np.concatenate([vals[gi][i] for i in sel])
                v = v[v > 0.0]
                if len(v) < 10:
                    continue
                q = np.quantile(v, quantile)
                ld = np.concatenate([ldts[gi][i] for i in sel])
                lg.append(np.mean(ld))
                lh.append(logh)
                lq.append(np.log(q))
        return np.array(lg), np.array(lh), np.array(lq)

    full_sel = [np.arange(n_rep) for _, n_rep, _, _ in groups]
    lg, lh, lq = cells_from(full_sel)
    if len(lq) < 6:
        raise ConfigurationError("too few usable (h, gap) cells for the fit")
    t_exp, h_exp = _fit_cells(lg, lh, lq)

    rng = np.random.Generator(np.random.Philox(key=seed))
    boots = np.empty((n_boot, 2))
    for b in range(n_boot):
        sel = [rng.integers(0, n_rep, n_rep) for _, n_rep, _, _ in groups]
        blg, blh, blq = cells_from(sel)
        boots[b] = _fit_cells(blg, blh, blq)
    t_lo, t_hi = np.percentile(boots[:, 0], [2.5, 97.5])
    h_lo, h_hi = np.percentile(boots[:, 1], [2.5, 97.5])
    return ScalingFit(
        h_exponent=float(h_exp),
        h_ci=(float(h_lo), float(h_hi)),
        time_exponent=float(t_exp),
        time_ci=(float(t_lo), float(t_hi)),
        n_cells=len(lq),
    )


def truncation_order_fit(reports, n_boot=1000, seed=0):
    """Slope of log median |delta_k| against log h across reports.

    Returns (slope, (lo, hi)). This is the per-step error exponent; for the
    explicit scheme on smooth noise it sits near 1 (and 2 for noise-free
    linear problems).
    """
    by_h = {}
    for rep in reports:
        by_h.setdefault(rep.h, []).append(rep)
    if len(by_h) < 3:
        raise ConfigurationError(f"need >= 3 distinct h values, got {len(by_h)}")
    hs = np.array(sorted(by_h))

    def fit(selector):
        meds = []
        for h in hs:
            reps = by_h[h]
            vals = np.concatenate([reps[i].per_step_errors for i in selector(len(reps))])
            vals = vals[vals > 0.0]
            meds.append(np.median(vals))
        return _slope(np.log(hs), np.log(np.array(meds)))

    slope = fit(lambda n: np.arange(n))
    rng = np.random.Generator(np.random.Philox(key=seed))
    boots = [fit(lambda n: rng.integers(0, n, n)) for _ in range(n_boot)]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return slope, (float(lo), float(hi))


@dataclass(frozen=True)
class FlowProbe:
    """Continuity-of-flow measurements over random state pairs and windows."""

    s: np.ndarray
    t: np.ndarray
    boom_ratio: np.ndarray  # |flow(z1) - flow(z2)| / |z1 - z2|
    lte2_ratio: np.ndarray  # |(flow(z1)-z1) - (flow(z2)-z2)| / |z1 - z2|
    lte2_scaled: np.ndarray  # lte2_ratio / sqrt(t - s)
    max_boom: float
    max_lte2_scaled: float
    gap_exponent: float  # fitted (t-s) exponent of lte2_ratio
    gap_exponent_ci: tuple


def flow_probe(problem, pairs, stream, grid=4096, refine_factor=64):
    """Probe both flow-continuity ratios on one Brownian path.

    Uses the exact flow when available, otherwise a bridge-free fine Euler
    flow with shared sub-increments for the two starting states.
    """
    if pairs < 8:
        raise ConfigurationError("need at least 8 probe pairs")
    m, d = problem.m, problem.d
    tgrid = np.linspace(0.0, problem.T, grid + 1)
    dW = stream.normals(grid * m).reshape(grid, m) * np.sqrt(problem.T / grid)
    # probe windows: random grid indices, then states around y0
    ui = stream.uniforms(pairs)
    uj = stream.uniforms(pairs)
    i = np.minimum((ui * grid).astype(int), grid - 1)
    j = np.minimum(i + 1 + (uj * (grid - i - 1)).astype(int), grid)
    s, t = tgrid[i], tgrid[j]
    gap = t - s
    winc = np.vstack([np.zeros((1, m)), np.cumsum(dW, axis=0)])
    dw_pair = winc[j] - winc[i]

    scale = max(1.0, float(np.linalg.norm(problem.y0)))
    z1 = problem.y0[None, :] + (stream.uniforms(pairs * d).reshape(pairs, d) - 0.5) * scale
    z2 = problem.y0[None, :] + (stream.uniforms(pairs * d).reshape(pairs, d) - 0.5) * scale

    if problem.exact_flow is not None:
        f1 = np.asarray(problem.exact_flow(z1, gap, dw_pair), dtype=float)
        f2 = np.asarray(problem.exact_flow(z2, gap, dw_pair), dtype=float)
    else:
        if refine_factor < 10:
            raise ConfigurationError(f"refine_factor must be >= 10, got {refine_factor}")
        # identical sub-increments for both states: the flows share the path
        sub = RngStream(stream.seed, stream.stream_id ^ 0x5EED)
        state = sub._gen.bit_generator.state
        f1 = _bridge_fine_flow(problem, z1, gap, dw_pair, refine_factor, sub)
        sub._gen.bit_generator.state = state
        f2 = _bridge_fine_flow(problem, z2, gap, dw_pair, refine_factor, sub)

    dz = np.linalg.norm(z1 - z2, axis=-1)
    boom = np.linalg.norm(f1 - f2, axis=-1) / dz
    lte2 = np.linalg.norm((f1 - z1) - (f2 - z2), axis=-1) / dz
    scaled = lte2 / np.sqrt(gap)

    good = lte2 > 0.0
    exp_fit = _binned_median_slope(np.log(gap[good]), np.log(lte2[good]))
    rng = np.random.Generator(np.random.Philox(key=17))
    boots = []
    idx_all = np.nonzero(good)[0]
    for _ in range(1000):
        pick = idx_all[rng.integers(0, len(idx_all), len(idx_all))]
        boots.append(_binned_median_slope(np.log(gap[pick]), np.log(lte2[pick])))
    lo, hi = np.percentile(boots, [2.5, 97.5])

    return FlowProbe(
        s=s,
        t=t,
        boom_ratio=boom,
        lte2_ratio=lte2,
        lte2_scaled=scaled,
        max_boom=float(boom.max()),
        max_lte2_scaled=float(scaled.max()),
        gap_exponent=float(exp_fit),
        gap_exponent_ci=(float(lo), float(hi)),
    )


def step_bound_constant(traj, h, delta=1.0 / 7.0):
    """Empirical K in h <= K dt^(1-delta) over interior steps.

    The final step (which lands on T) is exempt. Returns NaN when the
    trajectory has no interior step.
    """
    dt = np.diff(np.asarray(traj.record.times))[:-1]
    if len(dt) == 0:
        return float("nan")
    return float(np.max(h / dt ** (1.0 - delta)))


def write_xkn_csv(reports, path):
    """Write the subsampled |X_kn| grid: k,n,tau_k,tau_n,norm_X,h,sample_id."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "n", "tau_k", "tau_n", "norm_X", "h", "sample_id"])
        for rep in reports:
            for k, nn, tk, tn, xn in rep.pairs:
                w.writerow(
                    [int(k), int(nn), repr(tk), repr(tn), repr(xn), repr(rep.h), rep.sample_id]
                )
