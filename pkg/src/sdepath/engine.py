"""Batched integration driver shared by integrate() and the experiments.

Runs many samples in lockstep: every sample draws from its own stream (in
exactly the order the scalar operations would), while the numerics are
vectorized across the active batch. A batch of size one therefore replays
bit-for-bit what a larger batch produced for the same stream key, and
parallel aggregation order never changes output bytes.

Per-sample failures (overflow, implicit-solver breakdown, step-cap runaway)
deactivate the sample and are reported, not raised; integrate() re-raises
them for single paths.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .brownian import HORIZON_RTOL, BrownianRecord
from .errors import (
    DegenerateNormalizerError,
    RunawayError,
    SolverError,
    StepOverflowError,
)
from .exit_sampling import _cuboid_exit_batch, _region_ii_batch
from .model import diffusion_q_norms
from .steppers import STEP_CAP, Trajectory, _implicit_solve

_FAIL_EXC = {
    "overflow": lambda step: StepOverflowError(step),
    "solver": lambda step: SolverError(f"implicit step failed to converge at step {step}"),
    "runaway": lambda step: RunawayError(f"step cap exceeded at step {step}"),
    "normalizer": lambda step: DegenerateNormalizerError("|y(tau)| vanished at all nodes"),
}


@dataclass
class BatchResult:
    """Per-sample outcome of a batched integration."""

    steps: np.ndarray  # (B,) int, number of steps taken
    errors: Optional[np.ndarray]  # (B,) pathwise relative error E, NaN if failed
    failed: np.ndarray  # (B,) bool
    fail_kind: list  # per sample: None or one of _FAIL_EXC keys
    fail_step: np.ndarray  # (B,) int, step index of the failure (-1 if none)
    final_states: np.ndarray  # (B, d)
    final_W: np.ndarray  # (B, m)
    trajectories: Optional[list]  # per-sample Trajectory (None if failed) if recorded

    def raise_failure(self, i):
        raise _FAIL_EXC[self.fail_kind[i]](int(self.fail_step[i]))


def _drift_diffusion_update(problem, y, dt, dW):
    out = y + problem.drift.eval(y) * dt[:, None]
    for j in range(problem.m):
        out = out + problem.g[j + 1].eval(y) * dW[:, j, None]
    return out


def _adaptive_propose(controller, problem, y, t, streams, pos):
    if controller.variant == "adaptive1":
        a0 = np.minimum(controller.h, problem.T - t)
        if problem.m:
            qn = diffusion_q_norms(problem, y)
            qc = np.minimum(qn, controller.clamp)
            qmax = qc.max(axis=-1)
            with np.errstate(divide="ignore"):
                a = np.where(
                    qmax > 0.0,
                    np.sqrt(controller.h)
                    * controller.alpha
                    / np.sqrt(np.where(qmax > 0.0, qmax, 1.0)),
                    np.inf,
                )
        else:
            a = np.zeros((len(pos), 0))
        tau, w, _, _ = _cuboid_exit_batch(streams, a0, a, idx=pos)
        return tau, w
    # adaptive2 (m == 1, validated by the caller)
    qn = diffusion_q_norms(problem, y)[:, 0, 0]
    qc = np.minimum(qn, controller.clamp)
    tau, x = _region_ii_batch(
        streams,
        qc,
        controller.alpha,
        controller.h,
        problem.T - t,
        controller.beta,
        idx=pos,
    )
    return tau, x[:, None]


def run_batch(problem, controller, stepper, streams, record=False, step_cap=STEP_CAP):
    """Integrate one path per stream; see BatchResult for the outcome."""
    if stepper not in ("explicit", "implicit"):
        raise ValueError(f"unknown stepper {stepper!r}")
    B = len(streams)
    d, m, T = problem.d, problem.m, problem.T
    tol = HORIZON_RTOL * T
    want_error = problem.exact is not None

    y = np.tile(problem.y0, (B, 1))
    t = np.zeros(B)
    W = np.zeros((B, m))
    steps = np.zeros(B, dtype=np.int64)
    failed = np.zeros(B, dtype=bool)
    fail_kind = [None] * B
    fail_step = np.full(B, -1, dtype=np.int64)
    err = np.zeros(B)
    zmax = np.full(B, float(np.linalg.norm(problem.y0)))

    if record:
        times_l = [[0.0] for _ in range(B)]
        incs_l = [[] for _ in range(B)]
        states_l = [[problem.y0.copy()] for _ in range(B)]

    def mark_failed(global_idx, kind):
        for gi in global_idx:
            failed[gi] = True
            fail_kind[gi] = kind
            fail_step[gi] = steps[gi]

    def advance(pos, dt, dW):
        """One step for the samples at positions pos; returns ok row mask."""
        ya = y[pos]
        if stepper == "explicit":
            ynew = _drift_diffusion_update(problem, ya, dt, dW)
            ok = np.isfinite(ynew).all(axis=1)
            solver_bad = np.zeros(len(pos), dtype=bool)
        else:
            ynew, ok = _implicit_solve(problem, ya, dt, dW)
            solver_bad = ~ok
            ok = ok & np.isfinite(ynew).all(axis=1)
        tnew = t[pos] + dt
        tnew = np.where(T - tnew <= tol, T, tnew)
        Wnew = W[pos] + dW
        y[pos] = ynew
        t[pos] = tnew
        W[pos] = Wnew
        if want_error and ok.any():
            yex = np.asarray(problem.exact(tnew, Wnew), dtype=float)
            en = np.linalg.norm(ynew - yex, axis=-1)
            ez = np.linalg.norm(yex, axis=-1)
            good = ok & np.isfinite(en) & np.isfinite(ez)
            gp = pos[good]
            err[gp] = np.maximum(err[gp], en[good])
            zmax[gp] = np.maximum(zmax[gp], ez[good])
            ok = good
        if record:
            okp = np.nonzero(ok)[0]
            for k in okp:
                gi = pos[k]
                times_l[gi].append(float(tnew[k]))
                incs_l[gi].append(dW[k].copy())
                states_l[gi].append(ynew[k].copy())
        bad = np.nonzero(~ok)[0]
        if len(bad):
            solver_pos = pos[np.nonzero(solver_bad)[0]]
            mark_failed(solver_pos, "solver")
            other = pos[bad][~np.isin(pos[bad], solver_pos)]
            mark_failed(other, "overflow")
        steps[pos] += 1
        return ok

    if controller.variant == "fixed":
        h = controller.h
        K = int(np.ceil(T / h - 1e-9))
        grid = np.minimum(np.arange(K + 1, dtype=float) * h, T)
        grid[-1] = T
        if m:
            Z = np.stack([s.normals(K * m).reshape(K, m) for s in streams])
        else:
            Z = np.zeros((B, K, 0))
        for k in range(K):
            pos = np.nonzero(~failed)[0]
            if not len(pos):
                break
            dt_k = grid[k + 1] - grid[k]
            dt = np.full(len(pos), dt_k)
            dW = Z[pos, k, :] * np.sqrt(dt_k)
            advance(pos, dt, dW)
            # pin times to the uniform grid (sums of h accumulate rounding)
            t[pos] = grid[k + 1]
            if record:
                for gi in pos:
                    if not failed[gi]:
                        times_l[gi][-1] = grid[k + 1]
    else:
        active = ~failed
        while active.any():
            pos = np.nonzero(active)[0]
            over = pos[steps[pos] >= step_cap]
            if len(over):
                mark_failed(over, "runaway")
                active[over] = False
                pos = pos[steps[pos] < step_cap]
                if not len(pos):
                    break
            dt, dW = _adaptive_propose(
                controller, problem, y[pos], t[pos], streams, pos
            )
            ok = advance(pos, dt, dW)
            active[pos] = ok & (t[pos] < T)

    if want_error:
        degenerate = ~failed & (zmax <= 0.0)
        if degenerate.any():
            mark_failed(np.nonzero(degenerate)[0], "normalizer")
        errors = np.where(failed, np.nan, err / np.where(zmax > 0, zmax, 1.0))
    else:
        errors = None

    trajectories = None
    if record:
        tag = f"{controller.variant}:{stepper}"
        trajectories = []
        for i in range(B):
            if failed[i]:
                trajectories.append(None)
                continue
            rec = BrownianRecord.from_arrays(
                T, np.asarray(times_l[i]), np.asarray(incs_l[i]).reshape(-1, m)
            )
            trajectories.append(
                Trajectory(record=rec, states=np.asarray(states_l[i]), controller_tag=tag)
            )

    return BatchResult(
        steps=steps,
        errors=errors,
        failed=failed,
        fail_kind=fail_kind,
        fail_step=fail_step,
        final_states=y,
        final_W=W,
        trajectories=trajectories,
    )
