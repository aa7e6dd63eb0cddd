"""One-step methods and the integration driver over random partitions.

Explicit Euler-Maruyama freezes all coefficients at the left endpoint:

    y_{n+1} = y_n + g_0(y_n) dt + sum_j g_j(y_n) dW^j,

the implicit variant evaluates the drift at the right endpoint instead.
A step controller chooses (dt, dW): a fixed grid, or one of the two
bounded-diffusion rules where (dt, dW) is the first exit of (t, W) from a
state-dependent cuboid (adaptive-I) or an inscribed-box walk through the
parabola region of the double-integral bound (adaptive-II). Only the
diffusion block q_ij, i, j >= 1, of the curvature coefficients enters the
controllers, with norms clamped to keep steps from collapsing on excursions.
"""

from dataclasses import dataclass

import numpy as np

from .brownian import HORIZON_RTOL, BrownianRecord, gaussian_increment
from .errors import (
    ParameterError,
    SolverError,
    StepOverflowError,
    UnsupportedConfigurationError,
)
from .exit_sampling import Cuboid, RegionII, sample_exit_cuboid, sample_region_ii
from .model import diffusion_q_norms

DEFAULT_CLAMP = 100.0
STEP_CAP = 10**8


@dataclass(frozen=True)
class StepController:
    """Step-size policy: fixed(h), adaptive1(alpha, h, clamp) or
    adaptive2(alpha, h, beta, clamp)."""

    variant: str
    h: float
    alpha: float = 0.0
    beta: float = 0.0
    clamp: float = np.inf

    def __post_init__(self):
        if self.variant not in ("fixed", "adaptive1", "adaptive2"):
            raise ParameterError(f"unknown controller variant {self.variant!r}")
        if not self.h > 0.0:
            raise ParameterError(f"h must be positive, got {self.h}")
        if self.variant != "fixed":
            if not self.alpha > 0.0:
                raise ParameterError(f"alpha must be positive, got {self.alpha}")
            if not self.clamp > 0.0:
                raise ParameterError(f"clamp must be positive, got {self.clamp}")
        if self.variant == "adaptive2" and not 0.0 < self.beta < 1.0:
            raise ParameterError(f"beta must lie in (0, 1), got {self.beta}")

    @classmethod
    def fixed(cls, h):
        return cls(variant="fixed", h=float(h))

    @classmethod
    def adaptive1(cls, h, alpha=0.5, clamp=DEFAULT_CLAMP):
        return cls(variant="adaptive1", h=float(h), alpha=float(alpha), clamp=float(clamp))

    @classmethod
    def adaptive2(cls, h, alpha=0.9, beta=0.1, clamp=DEFAULT_CLAMP):
        return cls(
            variant="adaptive2",
            h=float(h),
            alpha=float(alpha),
            beta=float(beta),
            clamp=float(clamp),
        )


@dataclass(frozen=True)
class Trajectory:
    """A numerical path: Brownian record, states at the partition times, and
    the policy tag that produced it."""

    record: BrownianRecord
    states: np.ndarray  # (N+1, d)
    controller_tag: str

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.shape[0] != len(self.record.times):
            raise ParameterError("states and partition lengths disagree")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def n_steps(self):
        return self.states.shape[0] - 1


def em_step(problem, y, dt, dW):
    """Explicit Euler-Maruyama update; broadcasts over leading axes."""
    y = np.asarray(y, dtype=float)
    dW = np.asarray(dW, dtype=float)
    dt_arr = np.asarray(dt, dtype=float)
    out = y + problem.drift.eval(y) * dt_arr[..., None]
    for j in range(problem.m):
        out = out + problem.g[j + 1].eval(y) * dW[..., j, None]
    if not np.isfinite(out).all():
        raise StepOverflowError(-1, "non-finite state after explicit step")
    return out


def _implicit_solve(problem, y, dt, dW, max_iter=100):
    """Damped fixed-point solve of the implicit relation; returns (y1, ok).

    Residual target 1e-12 * (1 + |y|) per row; the damping factor halves
    whenever a row's residual grows. Rows that fail to converge within
    max_iter (dt too large for the drift stiffness) are flagged False.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    squeeze = np.asarray(dW).ndim == 1
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    dt_arr = np.broadcast_to(np.asarray(dt, dtype=float), y.shape[:-1]).copy()
    base = y.copy()
    for j in range(problem.m):
        base = base + problem.g[j + 1].eval(y) * dW[..., j, None]
    tol = 1e-12 * (1.0 + np.linalg.norm(y, axis=-1))
    x = base + problem.drift.eval(y) * dt_arr[..., None]
    ok = np.zeros(y.shape[0], dtype=bool)
    omega = np.ones(y.shape[0])
    last = np.full(y.shape[0], np.inf)
    active = np.ones(y.shape[0], dtype=bool)
    for _ in range(max_iter):
        pos = np.nonzero(active)[0]
        xa = x[pos]
        phi = base[pos] + problem.drift.eval(xa) * dt_arr[pos, None]
        res = np.linalg.norm(phi - xa, axis=-1)
        conv = res <= tol[pos]
        bad = ~np.isfinite(res)
        grew = res > last[pos]
        omega[pos] = np.where(grew, omega[pos] * 0.5, omega[pos])
        x[pos] = np.where(
            conv[:, None], phi, xa + omega[pos, None] * (phi - xa)
        )
        last[pos] = res
        ok[pos] |= conv
        active[pos] = ~(conv | bad)
        if not active.any():
            break
    good = ok & np.isfinite(x).all(axis=-1)
    if squeeze:
        return x[0], good[0]
    return x, good


def implicit_em_step(problem, y, dt, dW):
    """Implicit (drift at the right endpoint) Euler-Maruyama update."""
    y1, ok = _implicit_solve(problem, np.atleast_1d(np.asarray(y, dtype=float)), dt, dW)
    if not bool(np.all(ok)):
        raise SolverError(
            f"implicit step did not converge (dt={dt}); reduce the step size"
        )
    if not np.isfinite(y1).all():
        raise StepOverflowError(-1, "non-finite state after implicit step")
    return y1


def adaptive1_cuboid(controller, problem, y, t_now):
    """The state-dependent cuboid of the adaptive-I rule at state y.

    a0 = min(h, T - t), a_i = sqrt(h) * alpha / max_j min(|q_ij|, clamp)^(1/2)
    over the diffusion block i, j = 1..m; a_i = +inf where the row vanishes.
    """
    qn = diffusion_q_norms(problem, y)
    qc = np.minimum(qn, controller.clamp)
    qmax = qc.max(axis=-1) if problem.m else np.zeros(0)
    with np.errstate(divide="ignore"):
        a = np.where(
            qmax > 0.0,
            np.sqrt(controller.h) * controller.alpha / np.sqrt(np.where(qmax > 0, qmax, 1.0)),
            np.inf,
        )
    a0 = min(controller.h, problem.T - t_now)
    return Cuboid(a0=a0, a=a)


def propose_step(controller, problem, y, t_now, stream):
    """Draw the next (dt, dW) under the controller's policy."""
    if not t_now < problem.T:
        raise ParameterError(f"t_now={t_now} is not before the horizon T={problem.T}")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if controller.variant == "fixed":
        dt = min(controller.h, problem.T - t_now)
        return dt, gaussian_increment(stream, dt, problem.m)
    if controller.variant == "adaptive1":
        sample = sample_exit_cuboid(stream, adaptive1_cuboid(controller, problem, y, t_now))
        return sample.tau, sample.dW
    # adaptive2
    if problem.m != 1:
        raise UnsupportedConfigurationError(
            "adaptive2 is implemented for scalar noise (m = 1) only"
        )
    qn = float(diffusion_q_norms(problem, y)[0, 0])
    region = RegionII(
        qnorm=min(qn, controller.clamp),
        alpha=controller.alpha,
        h=controller.h,
        remaining=problem.T - t_now,
    )
    tau, dw = sample_region_ii(stream, region, controller.beta)
    return tau, np.array([dw])


def integrate(problem, controller, stepper, stream, step_cap=STEP_CAP):
    """Integrate one path from 0 to T; the final partition time is exactly T.

    stepper is "explicit" or "implicit". Returns the full Trajectory with
    its Brownian record. Pure function of its arguments: replaying with the
    same stream key reproduces the trajectory bit for bit.
    """
    from . import engine

    result = engine.run_batch(
        problem, controller, stepper, [stream], record=True, step_cap=step_cap
    )
    if result.failed[0]:
        result.raise_failure(0)
    return result.trajectories[0]
