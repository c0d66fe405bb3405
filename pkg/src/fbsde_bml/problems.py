"""Problem definitions: coupled forward-backward SDE instances.

A problem is the tuple (n, m, d, x0, T, b, sigma, f, g) describing

    X_t = x0 + int_0^t b(s, X, Y, Z) ds + int_0^t sigma(s, X, Y, Z) dW_s,
    Y_t = g(X_T) + int_t^T f(s, X, Y, Z) ds - int_t^T Z_s dW_s,

with X in R^n, Y in R^m, Z in R^(m x d) and W a d-dimensional Brownian
motion. Coefficient maps are written against the autodiff primitives and
operate batch-first: x is (M, n), y is (M, m), z is (M, m, d); the time
argument is a plain float shared by the whole batch. They are pure and safe
to evaluate concurrently.

Five builtin instances are provided: two nonlinear coupled equations with
closed-form solutions (``fusincos``, ``longsin``), the first-order adjoint
system of a stochastic linear-quadratic control problem in 5 and 100
dimensions (``lq5``, ``lq100``), and ``linear_fixture``, a trivially
solvable equation used as an exact test oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class FBSDEProblem:
    """One equation instance plus optional reference data.

    ``reference_y0`` is the known value of Y at time zero (length m), used
    for relative-error reporting. ``analytic``, when present, is a pair of
    maps (t, x) -> Y and (t, x) -> Z giving the exact solution along any
    state value; `reference_y0` then equals the first map at (0, x0).
    """

    name: str
    n: int
    m: int
    d: int
    x0: np.ndarray
    T: float
    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    reference_y0: Optional[np.ndarray] = None
    analytic: Optional[Tuple[Callable, Callable]] = None


class AnalyticTrial:
    """Trial-solution provider that evaluates a problem's known solution maps.

    Exposes the same v/u interface as trained networks, so it can drive
    rollouts and losses directly.
    """

    def __init__(self, problem: FBSDEProblem):
        if problem.analytic is None:
            raise ValueError(f"problem {problem.name!r} has no analytic solution")
        self._v, self._u = problem.analytic

    def v(self, t: float, x):
        return self._v(t, x)

    def u(self, t: float, x):
        return self._u(t, x)


def _fusincos() -> FBSDEProblem:
    """1-d fully coupled equation with solution Y = sin(t + X), Z = cos^2(t + X).

    b(t,x,y,z)     = -1/2 sin(t+x) cos(t+x) (y^2 + z)
    sigma(t,x,y,z) =  1/2 cos(t+x) (y sin(t+x) + z + 1)
    f(t,x,y,z)     =  y z - cos(t+x)
    g(x)           =  sin(T + x)
    """
    T = 1.0

    def b(t, x, y, z):
        z1 = ad.reshape(z, (-1, 1))
        return -0.5 * ad.sin(x + t) * ad.cos(x + t) * (y * y + z1)

    def sigma(t, x, y, z):
        z1 = ad.reshape(z, (-1, 1))
        val = 0.5 * ad.cos(x + t) * (y * ad.sin(x + t) + z1 + 1.0)
        return ad.reshape(val, (-1, 1, 1))

    def f(t, x, y, z):
        z1 = ad.reshape(z, (-1, 1))
        return y * z1 - ad.cos(x + t)

    def g(x):
        return ad.sin(x + T)

    def exact_y(t, x):
        return ad.sin(x + t)

    def exact_z(t, x):
        return ad.reshape(ad.cos(x + t) ** 2, (-1, 1, 1))

    return FBSDEProblem(
        name="fusincos",
        n=1,
        m=1,
        d=1,
        x0=np.array([1.0]),
        T=T,
        b=b,
        sigma=sigma,
        f=f,
        g=g,
        reference_y0=np.array([math.sin(1.0)]),
        analytic=(exact_y, exact_z),
    )


def _longsin() -> FBSDEProblem:
    """4-d forward equation driven by Y only; Y_0 = 10 at x0 = (pi/2, ...).

    With scale = 10/d, r = 0 and sigma0 = 0.4:

    b = 0,  sigma(t,x,y,z) = sigma0 y I_d,
    f(t,x,y,z) = -r y + (sigma0^2 / 2) e^{-3r(T-t)} (scale * sum_j sin x_j)^3,
    g(x) = scale * sum_j sin x_j.

    Exact solution: Y = scale e^{-r(T-t)} sum_j sin x_j and
    Z_k = sigma0 scale^2 e^{-2r(T-t)} cos(x_k) sum_j sin x_j.
    """
    n = 4
    T = 1.0
    r = 0.0
    sigma0 = 0.4
    scale = 10.0 / n
    eye = np.eye(n)

    def b(t, x, y, z):
        return ad.as_tensor(np.zeros((x.shape[0], n)))

    def sigma(t, x, y, z):
        ycol = ad.reshape(y, (-1, 1, 1))
        return (sigma0 * ycol) * eye

    def f(t, x, y, z):
        total = ad.tensor_sum(ad.sin(x), axis=1, keepdims=True)
        decay = math.exp(-3.0 * r * (T - t))
        return (-r) * y + (0.5 * sigma0 * sigma0 * decay) * (scale * total) ** 3

    def g(x):
        return scale * ad.tensor_sum(ad.sin(x), axis=1, keepdims=True)

    def exact_y(t, x):
        total = ad.tensor_sum(ad.sin(x), axis=1, keepdims=True)
        return (scale * math.exp(-r * (T - t))) * total

    def exact_z(t, x):
        total = ad.tensor_sum(ad.sin(x), axis=1, keepdims=True)
        row = (sigma0 * scale**2 * math.exp(-2.0 * r * (T - t))) * ad.cos(x) * total
        return ad.reshape(row, (-1, 1, n))

    return FBSDEProblem(
        name="longsin",
        n=n,
        m=1,
        d=n,
        x0=np.full(n, math.pi / 2.0),
        T=T,
        b=b,
        sigma=sigma,
        f=f,
        g=g,
        reference_y0=np.array([10.0]),
        analytic=(exact_y, exact_z),
    )


# Per-component Y_0 of the LQ adjoint system obtained from the Riccati
# equation of the underlying control problem; dimension-independent because
# all coefficient matrices are scalar multiples of the identity.
_LQ_Y0_COMPONENT = -0.9586


def _lq(n: int, name: str) -> FBSDEProblem:
    """n-dimensional adjoint system of a stochastic LQ control problem (d = 1).

    b     = -1/4 x + 1/2 y + 1/2 z
    sigma =  1/5 x + 1/2 y + 1/2 z
    f     = -1/2 x - 1/4 y + 1/5 z
    g(x)  = -Q x with Q = I

    The optimal control of the original problem is (Y + Z) / 2.
    """
    T = 0.1

    def b(t, x, y, z):
        zf = ad.reshape(z, (-1, n))
        return -0.25 * x + 0.5 * y + 0.5 * zf

    def sigma(t, x, y, z):
        zf = ad.reshape(z, (-1, n))
        val = 0.2 * x + 0.5 * y + 0.5 * zf
        return ad.reshape(val, (-1, n, 1))

    def f(t, x, y, z):
        zf = ad.reshape(z, (-1, n))
        return -0.5 * x - 0.25 * y + 0.2 * zf

    def g(x):
        return -x

    return FBSDEProblem(
        name=name,
        n=n,
        m=n,
        d=1,
        x0=np.ones(n),
        T=T,
        b=b,
        sigma=sigma,
        f=f,
        g=g,
        reference_y0=np.full(n, _LQ_Y0_COMPONENT),
    )


def _linear_fixture() -> FBSDEProblem:
    """Exactly solvable fixture: X = W, zero generator, terminal value X_T.

    With b = 0, sigma = 1, f = 0, g(x) = x and x0 = 0, the solution is
    Y_t = W_t and Z = 1, and the discrete backward identity telescopes
    exactly. The terminal value is independent of the trial solution, so the
    loss estimators admit an independent closed-form cross-check here.
    """

    def b(t, x, y, z):
        return ad.as_tensor(np.zeros((x.shape[0], 1)))

    def sigma(t, x, y, z):
        return ad.as_tensor(np.ones((x.shape[0], 1, 1)))

    def f(t, x, y, z):
        return ad.as_tensor(np.zeros((x.shape[0], 1)))

    def g(x):
        return ad.as_tensor(x)

    def exact_y(t, x):
        return ad.as_tensor(x)

    def exact_z(t, x):
        return ad.as_tensor(np.ones((x.shape[0], 1, 1)))

    return FBSDEProblem(
        name="linear_fixture",
        n=1,
        m=1,
        d=1,
        x0=np.array([0.0]),
        T=1.0,
        b=b,
        sigma=sigma,
        f=f,
        g=g,
        reference_y0=np.array([0.0]),
        analytic=(exact_y, exact_z),
    )


_BUILDERS = {
    "fusincos": _fusincos,
    "longsin": _longsin,
    "lq5": lambda: _lq(5, "lq5"),
    "lq100": lambda: _lq(100, "lq100"),
    "linear_fixture": _linear_fixture,
}

BUILTIN_NAMES = tuple(_BUILDERS)


def builtin_problem(name: str) -> FBSDEProblem:
    """Return one of the builtin problem instances by name."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; available: {', '.join(BUILTIN_NAMES)}"
        ) from None
    return builder()


def _check_shape(label: str, arr, expected: tuple) -> None:
    if tuple(arr.shape) != expected:
        raise ValueError(f"{label} has shape {tuple(arr.shape)}, expected {expected}")


def eval_coefficients(problem: FBSDEProblem, t: float, x, y, z):
    """Evaluate (b, sigma, f) at one point or one batch, with shape checks.

    Accepts plain arrays, either unbatched (x: (n,), y: (m,), z: (m, d)) or
    batched (leading M axis), and returns numpy arrays of matching layout.
    Tensor inputs must be batched and yield tape-recorded tensors, so the
    results stay differentiable in (x, y, z).
    """
    tensor_in = any(isinstance(a, ad.Tensor) for a in (x, y, z))
    xv = x.value if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
    yv = y.value if isinstance(y, ad.Tensor) else np.asarray(y, dtype=np.float64)
    zv = z.value if isinstance(z, ad.Tensor) else np.asarray(z, dtype=np.float64)

    single = xv.ndim == 1
    if single:
        if tensor_in:
            raise ValueError("tensor inputs must be batched (leading path axis)")
        xv, yv, zv = xv[None], yv[None], zv[None]
    M = xv.shape[0]
    _check_shape("x", xv, (M, problem.n))
    _check_shape("y", yv, (M, problem.m))
    _check_shape("z", zv, (M, problem.m, problem.d))

    xt = x if isinstance(x, ad.Tensor) else ad.as_tensor(xv)
    yt = y if isinstance(y, ad.Tensor) else ad.as_tensor(yv)
    zt = z if isinstance(z, ad.Tensor) else ad.as_tensor(zv)
    b_val = problem.b(float(t), xt, yt, zt)
    s_val = problem.sigma(float(t), xt, yt, zt)
    f_val = problem.f(float(t), xt, yt, zt)
    _check_shape("b(t,x,y,z)", b_val.value, (M, problem.n))
    _check_shape("sigma(t,x,y,z)", s_val.value, (M, problem.n, problem.d))
    _check_shape("f(t,x,y,z)", f_val.value, (M, problem.m))

    if tensor_in:
        return b_val, s_val, f_val
    if single:
        return b_val.value[0], s_val.value[0], f_val.value[0]
    return b_val.value, s_val.value, f_val.value


def analytic_reference(problem: FBSDEProblem, t: float, x):
    """Exact (Y, Z) at (t, x) if the problem carries an analytic solution.

    Returns None otherwise. Accepts an (n,) point or an (M, n) batch of
    plain arrays and returns numpy arrays of matching layout.
    """
    if problem.analytic is None:
        return None
    xv = np.asarray(x, dtype=np.float64)
    single = xv.ndim == 1
    if single:
        xv = xv[None]
    _check_shape("x", xv, (xv.shape[0], problem.n))
    exact_y, exact_z = problem.analytic
    with ad.no_grad():
        yv = exact_y(float(t), ad.as_tensor(xv)).value
        zv = exact_z(float(t), ad.as_tensor(xv)).value
    if single:
        return yv[0], zv[0]
    return yv, zv
