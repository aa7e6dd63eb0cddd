"""SDE problem definitions: vector fields, curvature coefficients, test problems.

A problem is dy = g_0(y) dt + sum_j g_j(y) dW^j on [0, T] with autonomous
fields g_j: R^d -> R^d. Fields carry their first and second derivative
actions, either analytic or by central differences, because the adaptive
step controllers need the curvature coefficients

    q_ij(y) = Dg_j(y) g_i(y)                                   for i != 0,
    q_0j(y) = Dg_j(y) g_0(y) + (1/2) sum_k D^2 g_j(y)(g_k, g_k).

All field callables must accept arrays whose last axis is the state
dimension and broadcast over any leading axes; the batched Monte Carlo
driver relies on this.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteInputError, ParameterError

FD_STEP = 1e-5  # base central-difference step, scaled by max(1, |y|)


@dataclass(frozen=True)
class VectorField:
    """A field g: R^d -> R^d with derivative actions.

    jacobian_action(y, v)    = Dg(y) v
    hessian_action(y, v, w)  = D^2 g(y)(v, w)
    """

    dim: int
    eval: Callable
    jacobian_action: Callable
    hessian_action: Callable
    derivative_mode: str = "analytic"  # or "finite_difference"

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError(f"dim must be >= 1, got {self.dim}")
        if self.derivative_mode not in ("analytic", "finite_difference"):
            raise ParameterError(f"unknown derivative_mode {self.derivative_mode!r}")


def finite_difference_derivatives(g, dim, step=FD_STEP):
    """Wrap an eval-only field with central-difference derivative actions.

    The effective step is ``step * max(1, |y|)``; directions are normalized
    before differencing so the action stays linear in v (and bilinear in
    v, w). Exact for linear fields up to rounding.
    """
    if not step > 0.0:
        raise ParameterError(f"step must be positive, got {step}")

    def jac(y, v, _g=g, _s=step):
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.where(nv > 0.0, nv, 1.0)
        u = v / scale
        ynorm = np.linalg.norm(y, axis=-1, keepdims=True)
        h = _s * np.maximum(1.0, ynorm)
        out = (_g(y + h * u) - _g(y - h * u)) / (2.0 * h)
        return out * scale

    def hess(y, v, w, _g=g, _s=step):
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        nw = np.linalg.norm(w, axis=-1, keepdims=True)
        sv = np.where(nv > 0.0, nv, 1.0)
        sw = np.where(nw > 0.0, nw, 1.0)
        uv, uw = v / sv, w / sw
        ynorm = np.linalg.norm(y, axis=-1, keepdims=True)
        h = _s * np.maximum(1.0, ynorm)
        out = (
            _g(y + h * (uv + uw))
            - _g(y + h * (uv - uw))
            - _g(y - h * (uv - uw))
            + _g(y - h * (uv + uw))
        ) / (4.0 * h * h)
        return out * (sv * sw)

    return VectorField(
        dim=dim,
        eval=g,
        jacobian_action=jac,
        hessian_action=hess,
        derivative_mode="finite_difference",
    )


def linear_field(a, dim=None):
    """The field g(y) = A y for a scalar or (d, d) matrix A."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        if dim is None:
            dim = 1
        c = float(a)
        return VectorField(
            dim=dim,
            eval=lambda y: c * np.asarray(y, dtype=float),
            jacobian_action=lambda y, v: c * np.asarray(v, dtype=float),
            hessian_action=lambda y, v, w: np.zeros(np.broadcast_shapes(np.shape(v), np.shape(w))),
            derivative_mode="analytic",
        )
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError("a must be a scalar or a square matrix")
    d = a.shape[0]
    return VectorField(
        dim=d,
        eval=lambda y: np.asarray(y, dtype=float) @ a.T,
        jacobian_action=lambda y, v: np.asarray(v, dtype=float) @ a.T,
        hessian_action=lambda y, v, w: np.zeros(np.broadcast_shapes(np.shape(v), np.shape(w))),
        derivative_mode="analytic",
    )


def constant_field(value):
    """The field g(y) = value (all derivatives vanish)."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    d = value.shape[-1]

    def ev(y, _v=value):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(_v, y.shape).copy()

    return VectorField(
        dim=d,
        eval=ev,
        jacobian_action=lambda y, v: np.zeros_like(np.asarray(v, dtype=float)),
        hessian_action=lambda y, v, w: np.zeros(np.broadcast_shapes(np.shape(v), np.shape(w))),
        derivative_mode="analytic",
    )


@dataclass(frozen=True)
class SdeProblem:
    """An Ito SDE with d states and m driving Brownian motions.

    g lists the m+1 fields (g[0] is the drift). ``exact``, when present,
    maps (t, W(t)) to the pathwise solution started from y0; ``exact_flow``
    maps (z, dt, dW) to the solution started from state z after a step with
    Brownian increment dW on the same path. Both must broadcast over
    leading axes.
    """

    d: int
    m: int
    g: tuple
    T: float
    y0: np.ndarray
    exact: Optional[Callable] = None
    exact_flow: Optional[Callable] = None
    key: str = field(default="custom", compare=False)

    def __post_init__(self):
        if len(self.g) != self.m + 1:
            raise ParameterError(f"need m+1={self.m + 1} fields, got {len(self.g)}")
        for j, gj in enumerate(self.g):
            if gj.dim != self.d:
                raise ParameterError(f"field {j} has dim {gj.dim}, problem has d={self.d}")
        if not self.T > 0.0:
            raise ParameterError(f"T must be positive, got {self.T}")
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if y0.shape != (self.d,):
            raise ParameterError(f"y0 must have shape ({self.d},)")
        y0.setflags(write=False)
        object.__setattr__(self, "y0", y0)
        if self.exact is not None:
            at0 = np.atleast_1d(np.asarray(self.exact(0.0, np.zeros(self.m)), dtype=float))
            if not np.allclose(at0, y0, rtol=1e-12, atol=1e-12):
                raise ParameterError("exact(0, 0) must equal y0")

    @property
    def drift(self):
        return self.g[0]

    @property
    def diffusions(self):
        return self.g[1:]


@dataclass(frozen=True)
class QMatrix:
    """Curvature coefficients q_ij(y), i, j in {0..m}, each a d-vector.

    entries has shape (m+1, m+1, d).
    """

    entries: np.ndarray

    @property
    def m(self):
        return self.entries.shape[0] - 1

    def norm(self, i, j):
        """Euclidean norm |q_ij|."""
        return float(np.linalg.norm(self.entries[i, j]))

    def norms(self):
        return np.linalg.norm(self.entries, axis=-1)


def eval_q(problem, y):
    """Evaluate the full QMatrix at a single state y.

    q_ij = Dg_j g_i for i != 0 and
    q_0j = Dg_j g_0 + (1/2) sum_k D^2 g_j(g_k, g_k).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (problem.d,):
        raise ParameterError(f"state must have shape ({problem.d},)")
    if not np.isfinite(y).all():
        raise NonFiniteInputError(f"non-finite state {y}")
    m, d = problem.m, problem.d
    gvals = [np.asarray(gj.eval(y), dtype=float) for gj in problem.g]
    entries = np.empty((m + 1, m + 1, d))
    for j, gj in enumerate(problem.g):
        for i in range(m + 1):
            entries[i, j] = gj.jacobian_action(y, gvals[i])
        correction = np.zeros(d)
        for k in range(1, m + 1):
            correction = correction + gj.hessian_action(y, gvals[k], gvals[k])
        entries[0, j] = entries[0, j] + 0.5 * correction
    return QMatrix(entries=entries)


def diffusion_q_norms(problem, y):
    """Norms |q_ij(y)| for i, j in 1..m only, batched over leading axes.

    Returns an array of shape y.shape[:-1] + (m, m). Only these entries
    enter the adaptive step controllers, and they need no Hessians.
    """
    y = np.asarray(y, dtype=float)
    m = problem.m
    gvals = [np.asarray(problem.g[i].eval(y), dtype=float) for i in range(1, m + 1)]
    out = np.empty(y.shape[:-1] + (m, m))
    for j in range(1, m + 1):
        gj = problem.g[j]
        for i in range(1, m + 1):
            action = gj.jacobian_action(y, gvals[i - 1])
            out[..., i - 1, j - 1] = np.linalg.norm(
                np.asarray(action, dtype=float), axis=-1
            )
    return out


def gbm_exact(mu, sigma, y0, t, w):
    """Closed-form geometric Brownian motion: y0 exp((mu - sigma^2/2) t + sigma w)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ParameterError("t must be nonnegative")
    out = y0 * np.exp((mu - 0.5 * sigma * sigma) * t + sigma * np.asarray(w, dtype=float))
    return out if out.ndim else float(out)


def make_gbm_problem(mu, sigma, y0=1.0, T=1.0, key=None):
    """Scalar GBM problem dy = mu y dt + sigma y dW with exact solution."""
    mu, sigma, y0v = float(mu), float(sigma), float(y0)
    drift = linear_field(mu, dim=1)
    diffusion = linear_field(sigma, dim=1)

    def exact(t, w, _m=mu, _s=sigma, _y0=y0v):
        t = np.asarray(t, dtype=float)
        w = np.asarray(w, dtype=float)
        val = _y0 * np.exp((_m - 0.5 * _s * _s) * t + _s * w[..., 0])
        return val[..., None]

    def exact_flow(z, dt, dw, _m=mu, _s=sigma):
        z = np.asarray(z, dtype=float)
        dt = np.asarray(dt, dtype=float)
        dw = np.asarray(dw, dtype=float)
        growth = np.exp((_m - 0.5 * _s * _s) * dt + _s * dw[..., 0])
        return z * growth[..., None]

    return SdeProblem(
        d=1,
        m=1,
        g=(drift, diffusion),
        T=float(T),
        y0=np.array([y0v]),
        exact=exact,
        exact_flow=exact_flow,
        key=key or f"gbm-{mu:g}-{sigma:g}",
    )


# Built-in problems from the reference experiments: mild and violent GBM.
_REGISTRY = {
    "gbm-0.1-1.2": lambda: make_gbm_problem(0.1, 1.2, key="gbm-0.1-1.2"),
    "gbm-1.5-2.4": lambda: make_gbm_problem(1.5, 2.4, key="gbm-1.5-2.4"),
}


def get_problem(key):
    """Look up a problem by registry key.

    Besides the built-in keys, any "gbm-<mu>-<sigma>" string is accepted.
    """
    if key in _REGISTRY:
        return _REGISTRY[key]()
    if key.startswith("gbm-"):
        parts = key.split("-")
        # minus signs inside the numbers create empty fields when splitting
        nums = []
        i = 1
        while i < len(parts):
            tok = parts[i]
            if tok == "" and i + 1 < len(parts):
                nums.append("-" + parts[i + 1])
                i += 2
            else:
                nums.append(tok)
                i += 1
        if len(nums) == 2:
            try:
                mu, sigma = float(nums[0]), float(nums[1])
            except ValueError:
                raise ParameterError(f"cannot parse problem key {key!r}") from None
            return make_gbm_problem(mu, sigma, key=key)
    raise ParameterError(f"unknown problem key {key!r}; known: {sorted(_REGISTRY)}")


def problem_keys():
    return sorted(_REGISTRY)
