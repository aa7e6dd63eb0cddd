"""Sampling the first exit of Brownian motion from boxes and parabola regions.

Everything reduces to one scalar kernel: for a standard Brownian motion W,
the survival function S(t; a) = P(sup_{s<=t} |W(s)| < a) in canonical time
theta = t / a^2. Two complementary expansions cover the range

    theta >= 1/2   eigenfunction series
        S = (4/pi) sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2 theta / 8)
    theta <  1/2   reflection (image) series, written in the numerically
        stable exit form  1 - S = 2 sum_j (-1)^j erfc((2j+1)/sqrt(2 theta)),

each truncated once the next term is negligible (alternating, geometric
decay on its side of the crossover). The exit-time law is inverted by a
safeguarded Newton iteration; the position of a surviving coordinate is
drawn from the absorbing-boundary density by rejection against the uniform
envelope whose height is the density at the center (the mode).

Batch variants draw each sample's randomness from its own stream but share
the vectorized numerics, and give exactly the draw sequence the scalar
functions consume, so scalar and batched integrations replay bit-for-bit.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv

from .errors import ParameterError, UnsupportedConfigurationError, ZeroStepError

_PI = np.pi
_LAM0 = _PI * _PI / 8.0
_CROSSOVER = 0.5  # theta = t/a^2 where the two series swap
_TRUNC = 1e-14  # series remainders stay below this on their side
_EIG_KMAX = 6
_REFL_JMAX = 4
# Below this theta the absorbed density differs from the free Gaussian by
# total variation < 4e-12 (the exit probability), so sample the Gaussian
# directly instead of rejecting against a ~sqrt(theta)-acceptance envelope.
_GAUSS_THETA = 0.02
_TARGET_FLOOR = 1e-280  # inversion targets below this are probability-zero


def _survival_eig(theta):
    # valid for theta >= 0.45: the k = _EIG_KMAX term is below 3e-21 there
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape)
    for k in range(_EIG_KMAX):
        c = 2 * k + 1
        out += (4.0 / _PI) * ((-1.0) ** k / c) * np.exp(-c * c * _LAM0 * theta)
    return out


def _survival_eig_deriv(theta):
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape)
    for k in range(_EIG_KMAX):
        c = 2 * k + 1
        out += (-1.0) ** k * c * np.exp(-c * c * _LAM0 * theta)
    return -(_PI / 2.0) * out


def _exit_refl(theta):
    """1 - S via images, stable for small theta (no 1 - tiny cancellation).

    Valid for theta <= 0.55: the dropped terms are below 1e-15 relative.
    """
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape)
    with np.errstate(divide="ignore"):
        beta = 1.0 / np.sqrt(2.0 * theta)
    for j in range(_REFL_JMAX):
        out += 2.0 * (-1.0) ** j * erfc((2 * j + 1) * beta)
    return out


def _exit_refl_deriv(theta):
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape)
    with np.errstate(divide="ignore", over="ignore"):
        inv2t = 1.0 / (2.0 * theta)
        for j in range(_REFL_JMAX):
            c = 2 * j + 1
            out += (-1.0) ** j * c * np.exp(-c * c * inv2t)
        scale = (4.0 / np.sqrt(_PI)) * np.power(2.0 * theta, -1.5)
    return np.where(theta > 0.0, scale * out, 0.0)


def _exit_prob(theta):
    """P(sup_{s<=theta} |W(s)| >= 1), vectorized over theta >= 0."""
    theta = np.asarray(theta, dtype=float)
    out = np.empty(theta.shape)
    small = theta < _CROSSOVER
    if small.any():
        out[small] = _exit_refl(theta[small])
    if (~small).any():
        out[~small] = 1.0 - _survival_eig(theta[~small])
    return out


def _exit_prob_deriv(theta):
    theta = np.asarray(theta, dtype=float)
    out = np.empty(theta.shape)
    small = theta < _CROSSOVER
    if small.any():
        out[small] = _exit_refl_deriv(theta[small])
    if (~small).any():
        out[~small] = -_survival_eig_deriv(theta[~small])
    return out


def _survival(theta):
    return 1.0 - _exit_prob(theta)


_EXIT_CROSS = float(1.0 - _survival_eig(np.array([_CROSSOVER]))[0])


def _absorbed_density(theta, xi):
    """Density of W(theta) absorbed at +-1, started at 0, at position xi.

    Canonical units (a = 1); xi in [-1, 1]. Not conditioned on survival.
    """
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    theta, xi = np.broadcast_arrays(theta, xi)
    out = np.zeros(theta.shape)
    small = theta < _CROSSOVER
    if small.any():
        th, x = theta[small], xi[small]
        with np.errstate(divide="ignore"):
            pref = 1.0 / np.sqrt(2.0 * _PI * th)
        acc = np.zeros(th.shape)
        for k in range(0, 4):
            if k == 0:
                acc += np.exp(-x * x / (2.0 * th))
            else:
                sgn = (-1.0) ** k
                acc += sgn * np.exp(-((x - 2.0 * k) ** 2) / (2.0 * th))
                acc += sgn * np.exp(-((x + 2.0 * k) ** 2) / (2.0 * th))
        out[small] = pref * acc
    if (~small).any():
        th, x = theta[~small], xi[~small]
        acc = np.zeros(th.shape)
        for k in range(_EIG_KMAX):
            c = 2 * k + 1
            acc += np.exp(-c * c * _LAM0 * th) * np.cos(c * _PI * x / 2.0)
        out[~small] = acc
    return np.maximum(out, 0.0)


def _invert_exit(target):
    """Solve exit_prob(theta) = target for theta, elementwise.

    Safeguarded Newton (bracketed, bisection fallback) to 1e-13 relative in
    theta; targets must lie in (0, 1).
    """
    target = np.asarray(target, dtype=float)
    t = np.clip(target, _TARGET_FLOOR, 1.0 - 1e-16)
    theta = np.empty(t.shape)
    lo = np.empty(t.shape)
    hi = np.empty(t.shape)

    eig = t >= _EXIT_CROSS
    if eig.any():
        s_target = 1.0 - t[eig]
        guess = np.maximum(_CROSSOVER, -(1.0 / _LAM0) * np.log(_PI * s_target / 4.0))
        theta[eig] = guess
        lo[eig] = 0.45
        hi[eig] = guess + 2.0
    refl = ~eig
    if refl.any():
        # first-term inversion is accurate to <1% over the whole branch, so
        # a factor-4 bracket always contains the root
        guess = 1.0 / (2.0 * erfcinv(t[refl] / 2.0) ** 2)
        guess = np.clip(guess, 1e-300, _CROSSOVER)
        theta[refl] = guess
        lo[refl] = guess * 0.25
        hi[refl] = np.minimum(0.55, guess * 4.0)

    # Newton in log space on whichever function is small on that side:
    # exit on the reflection side, survival on the eigenfunction side.
    # Either way the step stays well-scaled down to underflow.
    log_t = np.log(t)
    s_target = 1.0 - t
    log_s = np.log(np.maximum(s_target, 1e-320))
    idx = np.arange(t.size)
    th = theta.reshape(-1).copy()
    lo_c, hi_c = lo.reshape(-1).copy(), hi.reshape(-1).copy()
    t_c, lt_c = t.reshape(-1), log_t.reshape(-1)
    st_c, ls_c = s_target.reshape(-1), log_s.reshape(-1)
    out = theta.reshape(-1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(200):
            refl_side = th < _CROSSOVER
            too_low = np.empty(th.shape, dtype=bool)  # theta below the root
            step = np.empty(th.shape)
            if refl_side.any():
                e = _exit_refl(th[refl_side])
                de = _exit_refl_deriv(th[refl_side])
                too_low[refl_side] = e < t_c[refl_side]
                step[refl_side] = (
                    (lt_c[refl_side] - np.log(np.maximum(e, 1e-320))) * e / de
                )
            eig_side = ~refl_side
            if eig_side.any():
                s = _survival_eig(th[eig_side])
                ds = _survival_eig_deriv(th[eig_side])
                too_low[eig_side] = s > st_c[eig_side]
                step[eig_side] = (
                    (np.log(np.maximum(s, 1e-320)) - ls_c[eig_side]) * s / -ds
                )
            lo_c = np.where(too_low, th, lo_c)
            hi_c = np.where(too_low, hi_c, th)
            nxt = th + step
            # converged points may sit on the freshly-updated bracket
            # boundary, so test convergence before rejecting the step
            done = np.isfinite(nxt) & (np.abs(step) <= 1e-14 * np.maximum(th, 1e-300))
            bad = ~done & (~np.isfinite(nxt) | (nxt <= lo_c) | (nxt >= hi_c))
            nxt = np.where(bad, 0.5 * (lo_c + hi_c), nxt)
            if done.any():
                out[idx[done]] = nxt[done]
                keep = ~done
                if not keep.any():
                    break
                th = nxt[keep]
                idx = idx[keep]
                lo_c, hi_c = lo_c[keep], hi_c[keep]
                t_c, lt_c = t_c[keep], lt_c[keep]
                st_c, ls_c = st_c[keep], ls_c[keep]
            else:
                th = nxt
    if idx.size:
        out[idx] = th  # unconverged leftovers: best bracketed estimate
    return out.reshape(theta.shape)


@dataclass(frozen=True)
class Cuboid:
    """Space-time box [0, a0] x prod_i [-a_i, a_i]; a_i may be +inf."""

    a0: float
    a: np.ndarray

    def __post_init__(self):
        if not self.a0 > 0.0:
            raise ParameterError(f"a0 must be positive, got {self.a0}")
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if np.any(a <= 0.0) or np.any(np.isnan(a)):
            raise ParameterError("all spatial half-widths must be positive")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def m(self):
        return self.a.shape[0]


@dataclass(frozen=True)
class CuboidExitSample:
    """First-exit sample: duration tau, Brownian values dW, and face hit.

    face is "time" (tau = a0, all |dW_i| < a_i) or "space" with coord/sign
    identifying which wall was reached (dW_coord = sign * a_coord).
    """

    tau: float
    dW: np.ndarray
    face: str
    coord: int = -1
    sign: int = 0

    @property
    def is_time_face(self):
        return self.face == "time"


@dataclass(frozen=True)
class RegionII:
    """Admissible (dt, dW) region of the double-integral step rule (m = 1).

    Membership: 0 <= dt <= min(h, remaining) and qnorm*|dW^2 - dt| <= alpha^2 h.
    """

    qnorm: float
    alpha: float
    h: float
    remaining: float

    def __post_init__(self):
        if self.qnorm < 0.0 or not np.isfinite(self.qnorm):
            raise ParameterError(f"qnorm must be finite and >= 0, got {self.qnorm}")
        if not self.alpha > 0.0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not self.h > 0.0:
            raise ParameterError(f"h must be positive, got {self.h}")

    def contains(self, dt, dw, ulps=4):
        budget = self.alpha**2 * self.h
        slack = ulps * np.spacing(budget)
        tmax = min(self.h, self.remaining)
        return (
            -ulps * np.spacing(tmax) <= dt <= tmax + ulps * np.spacing(tmax)
            and self.qnorm * abs(dw * dw - dt) <= budget + slack
        )


def survival_single(a, t):
    """P(sup_{s<=t} |W(s)| < a) to absolute accuracy 1e-10."""
    if not a > 0.0:
        raise ParameterError(f"half-width a must be positive, got {a}")
    if t < 0.0:
        raise ParameterError(f"t must be nonnegative, got {t}")
    if t == 0.0:
        return 1.0
    if np.isinf(a):
        return 1.0
    return float(_survival(np.asarray(t / (a * a))))


def _gather_uniforms(streams, idx):
    return np.fromiter((streams[i].uniform() for i in idx), dtype=float, count=len(idx))


def _gather_normals(streams, idx):
    return np.fromiter((streams[i].normal() for i in idx), dtype=float, count=len(idx))


def _conditional_position_batch(streams, idx, tau, a):
    """W(tau) given no exit from (-a, a), one value per element of idx.

    Elements must reference distinct streams (draw order is round-major).
    Uses the Gaussian shortcut below _GAUSS_THETA, otherwise rejection from
    the uniform envelope of height density(theta, 0).
    """
    tau = np.asarray(tau, dtype=float)
    a = np.asarray(a, dtype=float)
    out = np.empty(len(idx))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        theta = np.where(np.isfinite(a), tau / (a * a), 0.0)
    gauss = theta <= _GAUSS_THETA
    if gauss.any():
        which = np.nonzero(gauss)[0]
        z = _gather_normals(streams, [idx[i] for i in which])
        w = z * np.sqrt(tau[which])
        cap = np.nextafter(a[which], 0.0)
        finite = np.isfinite(cap)
        w[finite] = np.clip(w[finite], -cap[finite], cap[finite])
        out[which] = w
    pending = np.nonzero(~gauss)[0]
    if len(pending):
        p0 = _absorbed_density(theta[pending], 0.0)
        while len(pending):
            u_pos = _gather_uniforms(streams, [idx[i] for i in pending])
            u_acc = _gather_uniforms(streams, [idx[i] for i in pending])
            xi = 2.0 * u_pos - 1.0
            dens = _absorbed_density(theta[pending], xi)
            accept = u_acc * p0 < dens
            acc_idx = pending[accept]
            out[acc_idx] = xi[accept] * a[acc_idx]
            p0 = p0[~accept]
            pending = pending[~accept]
    return out


def _rect_exit_batch(streams, a0, a1, idx=None):
    """First exit of (t, W) from [0, a0] x [-a1, a1], one sample per stream.

    Returns (tau, w, space_mask). a1 may be +inf (never a space exit). Draw
    order per stream: face uniform (finite a1 only); then either the
    inverse-CDF uniform and the sign uniform (space face) or the position
    draws (time face).
    """
    a0 = np.asarray(a0, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    n = len(a0)
    if idx is None:
        idx = np.arange(n)
    tau = np.empty(n)
    w = np.empty(n)
    space = np.zeros(n, dtype=bool)

    finite = np.isfinite(a1)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta0 = np.where(finite, a0 / (a1 * a1), 0.0)
    p_space = np.zeros(n)
    if finite.any():
        p_space[finite] = _exit_prob(theta0[finite])
        u_face = np.full(n, np.inf)
        fin_pos = np.nonzero(finite)[0]
        u_face[fin_pos] = _gather_uniforms(streams, [idx[i] for i in fin_pos])
        space = u_face < p_space

    hit = np.nonzero(space)[0]
    if len(hit):
        u_tau = _gather_uniforms(streams, [idx[i] for i in hit])
        u_sign = _gather_uniforms(streams, [idx[i] for i in hit])
        theta = _invert_exit(u_tau * p_space[hit])
        tau[hit] = np.minimum(theta * a1[hit] * a1[hit], a0[hit])
        w[hit] = np.where(u_sign < 0.5, a1[hit], -a1[hit])

    live = np.nonzero(~space)[0]
    if len(live):
        tau[live] = a0[live]
        w[live] = _conditional_position_batch(
            streams, [idx[i] for i in live], a0[live], a1[live]
        )
    return tau, w, space


def sample_exit_single(stream, a0, a1):
    """Exact first-exit sample of (t, W) from [0, a0] x [-a1, a1] (m = 1).

    With probability 1 - S(a0; a1) the spatial wall is hit: tau comes from
    inverting the conditional exit-time law on (0, a0] and the sign is
    equiprobable. Otherwise tau = a0 and W(a0) is drawn from the absorbing
    conditional density.
    """
    if not a0 > 0.0:
        raise ParameterError(f"a0 must be positive, got {a0}")
    if not a1 > 0.0:
        raise ParameterError(f"a1 must be positive, got {a1}")
    tau, w, space = _rect_exit_batch(
        [stream], np.array([float(a0)]), np.array([float(a1)])
    )
    if space[0]:
        sign = 1 if w[0] > 0 else -1
        return CuboidExitSample(
            tau=float(tau[0]), dW=np.array([w[0]]), face="space", coord=0, sign=sign
        )
    return CuboidExitSample(tau=float(tau[0]), dW=np.array([w[0]]), face="time")


def _cuboid_exit_batch(streams, a0, a_mat, idx=None):
    """Batched cuboid exit for m coordinates.

    a0 has shape (B,), a_mat (B, m). Returns (tau, w, coord, sign) where
    coord = -1 marks the time face. Coordinates are resolved in index order
    so the per-stream draw sequence is reproducible.
    """
    a0 = np.asarray(a0, dtype=float)
    a_mat = np.asarray(a_mat, dtype=float)
    B, m = a_mat.shape
    if idx is None:
        idx = np.arange(B)

    tau_exit = np.full((B, m), np.inf)
    for j in range(m):
        aj = a_mat[:, j]
        finite = np.isfinite(aj)
        if finite.any():
            pos = np.nonzero(finite)[0]
            u = _gather_uniforms(streams, [idx[i] for i in pos])
            tau_exit[pos, j] = _invert_exit(u) * aj[pos] * aj[pos]

    tau_min = tau_exit.min(axis=1) if m else np.full(B, np.inf)
    tau = np.minimum(a0, tau_min)
    coord = np.where(tau_min < a0, tau_exit.argmin(axis=1) if m else -1, -1)
    sign = np.zeros(B, dtype=int)
    w = np.empty((B, m))

    space_pos = np.nonzero(coord >= 0)[0]
    if len(space_pos):
        u_sign = _gather_uniforms(streams, [idx[i] for i in space_pos])
        sign[space_pos] = np.where(u_sign < 0.5, 1, -1)
        w[space_pos, coord[space_pos]] = (
            sign[space_pos] * a_mat[space_pos, coord[space_pos]]
        )

    for j in range(m):
        survive = np.nonzero(coord != j)[0]
        if len(survive):
            w[survive, j] = _conditional_position_batch(
                streams, [idx[i] for i in survive], tau[survive], a_mat[survive, j]
            )
    return tau, w, coord, sign


def sample_exit_cuboid(stream, cuboid):
    """First exit of (t, W^1..W^m) from a cuboid.

    tau = min(a0, tau_1, ..., tau_m) over independent per-coordinate exit
    times; the argmin coordinate sets the face, every surviving coordinate
    is drawn from its absorbing conditional density at tau.
    """
    tau, w, coord, sign = _cuboid_exit_batch(
        [stream], np.array([cuboid.a0]), cuboid.a[None, :]
    )
    if coord[0] >= 0:
        return CuboidExitSample(
            tau=float(tau[0]),
            dW=w[0],
            face="space",
            coord=int(coord[0]),
            sign=int(sign[0]),
        )
    return CuboidExitSample(tau=float(tau[0]), dW=w[0], face="time")


def _region_rect(t0, x0, c, tmax):
    """Largest admissible segment then box at (t0, x0) inside the region.

    The region between the parabolas is {(t, x): x^2 <= t + c, t <= x^2 + c,
    0 <= t <= tmax}; for t > c it splits into two branches and the segment
    stays inside the branch containing x0. Results are shrunk by one ulp so
    containment is strict under tangency and ties.
    """
    t0 = np.asarray(t0, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    c = np.asarray(c, dtype=float)
    tmax = np.asarray(tmax, dtype=float)
    s = np.abs(x0)
    a1 = np.sqrt(t0 + c) - s
    split = t0 > c
    if split.any():
        inner = s - np.sqrt(np.maximum(t0 - c, 0.0))
        a1 = np.where(split, np.minimum(a1, inner), a1)
    a1 = np.maximum(a1, 0.0)
    m2 = np.where(a1 >= s, 0.0, (s - a1) ** 2)
    with np.errstate(invalid="ignore"):
        a0 = np.minimum(tmax - t0, m2 + c - t0)
    a0 = np.where(np.isnan(a0), tmax - t0, a0)  # m2 + c overflow for huge c
    a0 = np.maximum(a0, 0.0)
    return np.nextafter(a0, 0.0), np.nextafter(a1, 0.0)


def _region_ii_batch(streams, qnorm, alpha, h, remaining, beta, idx=None, trace=None):
    """Batched approximate sampler for the region-II step (m = 1).

    Walks inscribed boxes from (0, 0): at each sub-step take the largest
    admissible segment then box, sample its exit, accumulate, and stop once
    a sub-step lasts less than beta*h (or the geometry degenerates, which
    yields the zero sub-step). Each non-stopping sub-step advances time by
    at least beta*h, so at most ~1/beta iterations occur.
    """
    qnorm = np.asarray(qnorm, dtype=float)
    remaining = np.asarray(remaining, dtype=float)
    B = qnorm.shape[0]
    if idx is None:
        idx = np.arange(B)
    tmax = np.minimum(h, remaining)
    with np.errstate(divide="ignore"):
        c = np.where(qnorm > 0.0, alpha * alpha * h / np.where(qnorm > 0, qnorm, 1.0), np.inf)

    t_acc = np.zeros(B)
    x_acc = np.zeros(B)
    active = np.ones(B, dtype=bool)
    while active.any():
        pos = np.nonzero(active)[0]
        a0, a1 = _region_rect(t_acc[pos], x_acc[pos], c[pos], tmax[pos])
        degenerate = (a0 <= 0.0) | (a1 <= 0.0)
        if degenerate.any():
            active[pos[degenerate]] = False
            pos = pos[~degenerate]
            a0, a1 = a0[~degenerate], a1[~degenerate]
        if not len(pos):
            break
        if trace is not None:
            for k, p in enumerate(pos):
                trace.append((int(idx[p]), t_acc[p], x_acc[p], a0[k], a1[k]))
        tau, w, _ = _rect_exit_batch(streams, a0, a1, idx=[idx[i] for i in pos])
        t_acc[pos] += tau
        x_acc[pos] += w
        active[pos] = tau >= beta * h
    return t_acc, x_acc


def sample_region_ii(stream, region, beta, trace=None):
    """One (tau, dW) draw from the region-II rule via the inscribed-box walk.

    The returned point always lies in the region. With qnorm = 0 the region
    is the full strip and the step is min(h, remaining) with a Gaussian
    increment. General m is not supported.

    trace, if given, is a list collecting (sample, t, x, a0, a1) tuples for
    every inscribed box (geometry diagnostics).
    """
    if not beta > 0.0:
        raise ParameterError(f"beta must be positive, got {beta}")
    tmax = min(region.h, region.remaining)
    if tmax <= 1e-12 * region.h:
        raise ZeroStepError(f"no time budget left (remaining={region.remaining})")
    tau, w = _region_ii_batch(
        [stream],
        np.array([region.qnorm]),
        region.alpha,
        region.h,
        np.array([region.remaining]),
        beta,
        trace=trace,
    )
    return float(tau[0]), float(w[0])
