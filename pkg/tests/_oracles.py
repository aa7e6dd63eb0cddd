"""Independent brute-force oracles used to validate the samplers.

Kept deliberately separate from the package: a grid-walking Euler
simulation of the exit problem with Brownian-bridge crossing detection
(which removes the O(sqrt(dt)) barrier bias of naive discrete monitoring),
plus a straight-line Euler-Maruyama reimplementation for the
dual-implementation error check.
"""

import numpy as np


def exit_times_oracle(rng, n_paths, a0, a1, dt):
    """First exit of (t, W) from [0, a0] x [-a1, a1] by fine-grid simulation.

    Within-step crossings are detected with the exact Brownian-bridge
    one-barrier probability exp(-2(a - x0)(a - x1)/dt); detected exits are
    assigned to the middle of the step. Returns (tau, space_mask).
    """
    steps = int(round(a0 / dt))
    tau = np.full(n_paths, a0)
    space = np.zeros(n_paths, dtype=bool)
    alive = np.arange(n_paths)
    x = np.zeros(n_paths)
    sqdt = np.sqrt(dt)
    for k in range(steps):
        if not len(alive):
            break
        z = rng.standard_normal(len(alive))
        x1 = x + z * sqdt
        with np.errstate(over="ignore"):
            p_up = np.exp(-2.0 * (a1 - x) * (a1 - x1) / dt)
            p_dn = np.exp(-2.0 * (a1 + x) * (a1 + x1) / dt)
        hit = (rng.random(len(alive)) < p_up) | (rng.random(len(alive)) < p_dn)
        tau[alive[hit]] = (k + 0.5) * dt
        space[alive[hit]] = True
        alive = alive[~hit]
        x = x1[~hit]
    return tau, space


def survival_oracle(rng, n_paths, a, t, dt):
    """P(sup_{s<=t} |W(s)| < a) by the same bridge-corrected simulation."""
    _, space = exit_times_oracle(rng, n_paths, t, a, dt)
    p = 1.0 - np.mean(space)
    se = np.sqrt(p * (1.0 - p) / n_paths)
    return p, se


def cuboid_exit_mean_oracle(rng, n_paths, a0, widths, dt):
    """Mean of min(a0, tau_1, ..., tau_m) for independent coordinates."""
    tau = np.full(n_paths, a0)
    for a in widths:
        t_i, _ = exit_times_oracle(rng, n_paths, a0, a, dt)
        tau = np.minimum(tau, t_i)
    return tau.mean(), tau.std(ddof=1) / np.sqrt(n_paths)


def euler_maruyama_reference(mu, sigma, y0, T, n_steps, normals):
    """Straight-line explicit scheme for dy = mu y dt + sigma y dW on the
    uniform grid t_n = n h (final node pinned to T).

    normals are the standard draws, one per step; returns (times, y, w).
    """
    h = T / n_steps
    times = [min(k * h, T) for k in range(n_steps + 1)]
    times[-1] = T
    y = [y0]
    w = [0.0]
    for k in range(n_steps):
        dt = times[k + 1] - times[k]
        dw = normals[k] * np.sqrt(dt)
        y.append(y[-1] + mu * y[-1] * dt + sigma * y[-1] * dw)
        w.append(w[-1] + dw)
    return np.array(times), np.array(y), np.array(w)


def max_relative_error_reference(mu, sigma, y0, times, y, w):
    """max_n |y_n - y(tau_n)| / max_n |y(tau_n)| from first principles."""
    exact = y0 * np.exp((mu - 0.5 * sigma * sigma) * times + sigma * w)
    return np.max(np.abs(y - exact)) / np.max(np.abs(exact))
