"""Concrete estimating-function families with analytic Jacobians."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from estfun.core import (
    CompactBox,
    Dataset,
    DegenerateError,
    DomainError,
    EstimatingFunction,
    OpenMapped,
    ParameterSpace,
    ScalingMatrix,
)
from estfun.simulate import SdeModel

C_FLOOR = 1e-12


@dataclass(frozen=True)
class MomentKernel:
    """g(x_1, ..., x_r; theta) evaluated on windows of shape (k, r)."""

    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray, np.ndarray], np.ndarray]
    r: int
    p: int
    name: str = "moment"
    domain: Optional[ParameterSpace] = None


@dataclass(frozen=True)
class MartingaleKernel:
    """h(x, y; theta) on consecutive pairs of a subject, conditional mean zero under the model."""

    h: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dh: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    p: int
    delta: float
    name: str = "martingale"
    domain: Optional[ParameterSpace] = None
    meta: dict = field(default_factory=dict)


def _path_check(min_values: int, need_delta: bool = False):
    def check(data: Dataset) -> None:
        if data.longitudinal:
            raise ValueError("expected a single path, got longitudinal data")
        if data.values.size < min_values:
            raise ValueError(f"need at least {min_values} observations, got {data.values.size}")
        if need_delta and data.delta <= 0:
            raise ValueError("dataset must carry a positive sampling step delta")

    return check


# --------------------------------------------------------------------------
# discrete-time least squares
# --------------------------------------------------------------------------


def make_ar1_ls(domain: Optional[ParameterSpace] = None) -> EstimatingFunction:
    """n^{-1} sum_i X_{i-1} (X_i - theta X_{i-1})."""
    base = _path_check(2)

    def check(data):
        base(data)
        if not np.any(data.values[:-1]):
            raise DegenerateError("all-zero data: the Jacobian vanishes identically")

    def summands(theta, data):
        x = data.values
        return x[:-1] * (x[1:] - theta[0] * x[:-1])

    def jac(theta, data):
        x = data.values[:-1]
        return -np.dot(x, x)

    return EstimatingFunction(
        name="ar1_ls",
        dim_param=1,
        lag=2,
        summands=summands,
        normalizer=lambda data: 1.0 / data.n,
        domain=domain or CompactBox([-2.0], [2.0]),
        scaling=ScalingMatrix.sqrt_n(1),
        jac_sum=jac,
        check_data=check,
    )


def make_ou_euler_ls(delta: float, domain: Optional[ParameterSpace] = None) -> EstimatingFunction:
    """n^{-1} sum_i X_{(i-1)D} [X_{iD} - (1 - theta D) X_{(i-1)D}]."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    base = _path_check(2, need_delta=True)

    def check(data):
        base(data)
        if not math.isclose(data.delta, delta, rel_tol=1e-9):
            raise ValueError(f"dataset delta {data.delta} does not match estimator delta {delta}")
        if not np.any(data.values[:-1]):
            raise DegenerateError("all-zero data: the Jacobian vanishes identically")

    def summands(theta, data):
        x = data.values
        return x[:-1] * (x[1:] - (1.0 - theta[0] * delta) * x[:-1])

    def jac(theta, data):
        x = data.values[:-1]
        return delta * np.dot(x, x)

    bound = 2.0 / delta + 1.0
    return EstimatingFunction(
        name="ou_euler_ls",
        dim_param=1,
        lag=2,
        summands=summands,
        normalizer=lambda data: 1.0 / data.n,
        domain=domain or CompactBox([-bound], [bound]),
        scaling=ScalingMatrix.sqrt_n(1),
        jac_sum=jac,
        check_data=check,
        meta={"delta": delta},
    )


# --------------------------------------------------------------------------
# ergodic moment functions
# --------------------------------------------------------------------------


def make_ergodic_moment(kernel: MomentKernel, domain: Optional[ParameterSpace] = None) -> EstimatingFunction:
    """G_n(theta) = (1/n) sum_{i=r}^n g(X_{i-r+1}, ..., X_i; theta) over observations X_1..X_n."""
    r = kernel.r
    dom = domain or kernel.domain
    if dom is None:
        raise ValueError("moment kernel needs a parameter space")

    def check(data):
        if data.longitudinal:
            raise ValueError("expected a single path, got longitudinal data")
        if data.values.size < r:
            raise ValueError(f"need at least r={r} observations, got {data.values.size}")

    def windows(data):
        return sliding_window_view(data.values, r)

    return EstimatingFunction(
        name=kernel.name,
        dim_param=kernel.p,
        lag=r,
        summands=lambda theta, data: kernel.g(windows(data), theta),
        normalizer=lambda data: 1.0 / data.values.size,
        domain=dom,
        scaling=ScalingMatrix((lambda n, d, t: math.sqrt(n + 1),) * kernel.p, "sqrt_n"),
        jac_sum=lambda theta, data: _sum_jac(kernel.dg(windows(data), theta), kernel.p),
        check_data=check,
    )


def _sum_jac(per_term, p: int) -> np.ndarray:
    return np.asarray(per_term, dtype=float).reshape(-1, p, p).sum(axis=0)


def mean_kernel() -> MomentKernel:
    """g(x; theta) = x - theta."""
    return MomentKernel(
        g=lambda w, t: w[:, 0] - t[0],
        dg=lambda w, t: -np.ones(w.shape[0]),
        r=1,
        p=1,
        name="moment_mean",
        domain=CompactBox([-1e3], [1e3]),
    )


def lag_product_kernel() -> MomentKernel:
    """g(x1, x2; theta) = x1 x2 - theta."""
    return MomentKernel(
        g=lambda w, t: w[:, 0] * w[:, 1] - t[0],
        dg=lambda w, t: -np.ones(w.shape[0]),
        r=2,
        p=1,
        name="moment_lag1",
        domain=CompactBox([-1e3], [1e3]),
    )


def mean_var_kernel() -> MomentKernel:
    """g(x; theta) = (x - theta_1, x^2 - theta_1^2 - theta_2)."""

    def g(w, t):
        x = w[:, 0]
        return np.column_stack([x - t[0], x * x - t[0] ** 2 - t[1]])

    def dg(w, t):
        k = w.shape[0]
        out = np.zeros((k, 2, 2))
        out[:, 0, 0] = -1.0
        out[:, 1, 0] = -2.0 * t[0]
        out[:, 1, 1] = -1.0
        return out

    return MomentKernel(g, dg, r=1, p=2, name="moment_mean_var", domain=CompactBox([-100.0, 1e-6], [100.0, 1e4]))


def scale_kernel() -> MomentKernel:
    """g(x; sigma) = x^2 - sigma^2 with sigma bounded away from zero."""
    return MomentKernel(
        g=lambda w, t: w[:, 0] ** 2 - t[0] ** 2,
        dg=lambda w, t: np.full(w.shape[0], -2.0 * t[0]),
        r=1,
        p=1,
        name="moment_scale",
        domain=CompactBox([0.01], [100.0]),
    )


# --------------------------------------------------------------------------
# longitudinal martingale functions
# --------------------------------------------------------------------------


def ou_martingale_kernel(delta: float) -> MartingaleKernel:
    """h(x, y; theta) = x (y - exp(-theta delta) x), exact for OU transitions."""

    def h(x, y, t):
        return x * (y - math.exp(-t[0] * delta) * x)

    def dh(x, y, t):
        return delta * math.exp(-t[0] * delta) * x * x

    return MartingaleKernel(
        h=h,
        dh=dh,
        p=1,
        delta=delta,
        name="longitudinal_ou",
        domain=OpenMapped.coordinatewise(["log"], box=([0.05], [10.0])),
    )


def make_longitudinal(kernel: MartingaleKernel, domain: Optional[ParameterSpace] = None) -> EstimatingFunction:
    """G_n = (1/n) sum_i sum_j h(Y^i_{(j-1)D}, Y^i_{jD}; theta); summands are per-subject sums."""
    p = kernel.p
    dom = domain or kernel.domain
    if dom is None:
        raise ValueError("martingale kernel needs a parameter space")

    def check(data):
        if not data.longitudinal:
            raise ValueError("longitudinal estimator needs a subjects x (m+1) array (ragged data not allowed)")
        if data.values.shape[1] < 2:
            raise ValueError("each subject needs at least two observations")
        if not math.isclose(data.delta, kernel.delta, rel_tol=1e-9):
            raise ValueError(f"dataset delta {data.delta} does not match kernel delta {kernel.delta}")

    def summands(theta, data):
        y = data.values
        vals = np.asarray(kernel.h(y[:, :-1], y[:, 1:], theta), dtype=float)
        vals = vals.reshape(y.shape[0], y.shape[1] - 1, p)
        return vals.sum(axis=1)

    def jac(theta, data):
        y = data.values
        return _sum_jac(kernel.dh(y[:, :-1], y[:, 1:], theta), p)

    return EstimatingFunction(
        name=kernel.name,
        dim_param=p,
        lag=2,
        summands=summands,
        normalizer=lambda data: 1.0 / data.n,
        domain=dom,
        scaling=ScalingMatrix.sqrt_n(p),
        jac_sum=jac,
        check_data=check,
        meta={"delta": kernel.delta},
    )


def longitudinal_dataset(subjects, delta: float) -> Dataset:
    """Stack per-subject sequences into a Dataset, rejecting ragged input."""
    lengths = {len(s) for s in subjects}
    if len(lengths) != 1:
        raise ValueError(f"ragged subject lengths {sorted(lengths)}")
    return Dataset(np.asarray(subjects, dtype=float), delta=delta)


# --------------------------------------------------------------------------
# high-frequency diffusion functions
# --------------------------------------------------------------------------


def _c_terms(model: SdeModel, x, beta):
    c = model.c(x, beta)
    if np.any(c < C_FLOOR) or not np.all(np.isfinite(c)):
        raise DomainError(f"squared diffusion c(x; beta) < {C_FLOOR:g} at beta={beta}")
    return c, model.dc(x, beta), model.d2c(x, beta)


def _total(expr, k: int) -> float:
    """Sum over k summands of an expression that may have been broadcast down to a scalar."""
    expr = np.asarray(expr, dtype=float)
    return float(expr.sum()) if expr.ndim else k * float(expr)


def _diffusion_terms(model: SdeModel, beta, x, dx, delta):
    c, dc, _ = _c_terms(model, x, beta)
    return dc / (c * c) * (dx * dx - delta * c)


def _diffusion_jac(model: SdeModel, beta, x, dx, delta) -> float:
    c, dc, d2c = _c_terms(model, x, beta)
    f_prime = d2c / (c * c) - 2.0 * dc * dc / (c * c * c)
    return _total(f_prime * (dx * dx - delta * c), x.size) - delta * _total(dc * dc / (c * c), x.size)


def make_hf_fixed_T(model: SdeModel, domain: Optional[ParameterSpace] = None) -> EstimatingFunction:
    """Unaveraged sum over increments of dc/c^2 ((dX)^2 - D c) in beta."""
    check = _path_check(2, need_delta=True)

    def summands(theta, data):
        x = data.values[:-1]
        return _diffusion_terms(model, theta[0], x, np.diff(data.values), data.delta) + 0.0 * x

    def jac(theta, data):
        return _diffusion_jac(model, theta[0], data.values[:-1], np.diff(data.values), data.delta)

    return EstimatingFunction(
        name="hf_fixed_T",
        dim_param=1,
        lag=2,
        summands=summands,
        normalizer=lambda data: 1.0,
        domain=domain or CompactBox([0.05], [20.0]),
        scaling=ScalingMatrix.sqrt_n(1),
        jac_sum=jac,
        check_data=check,
        meta={"model": model.name},
    )


def make_hf_ergodic(model: SdeModel, domain: Optional[ParameterSpace] = None) -> EstimatingFunction:
    """(G^1, G^2) in theta = (alpha, beta), both normalized by 1/T_n."""
    check = _path_check(2, need_delta=True)

    def summands(theta, data):
        alpha, beta = theta
        x = data.values[:-1]
        dx = np.diff(data.values)
        c = _c_terms(model, x, beta)[0]
        g1 = model.drift_dalpha(x, alpha) / c * (dx - data.delta * model.drift(x, alpha))
        g2 = _diffusion_terms(model, beta, x, dx, data.delta)
        out = np.empty((x.size, 2))
        out[:, 0] = g1
        out[:, 1] = g2
        return out

    def jac(theta, data):
        alpha, beta = theta
        x = data.values[:-1]
        dx = np.diff(data.values)
        k = x.size
        c, dc, _ = _c_terms(model, x, beta)
        da = model.drift_dalpha(x, alpha)
        resid = dx - data.delta * model.drift(x, alpha)
        out = np.zeros((2, 2))
        out[0, 0] = _total(model.drift_dalpha2(x, alpha) / c * resid, k) - data.delta * _total(da * da / c, k)
        out[0, 1] = -_total(da * dc / (c * c) * resid, k)
        out[1, 1] = _diffusion_jac(model, beta, x, dx, data.delta)
        return out

    return EstimatingFunction(
        name="hf_ergodic",
        dim_param=2,
        lag=2,
        summands=summands,
        normalizer=lambda data: 1.0 / data.time_span,
        domain=domain or CompactBox([-10.0, 0.05], [10.0, 20.0]),
        scaling=ScalingMatrix.mixed(),
        jac_sum=jac,
        check_data=check,
        meta={"model": model.name},
    )


# --------------------------------------------------------------------------
# registry used by the CLI and the Monte Carlo engine
# --------------------------------------------------------------------------

MOMENT_KERNELS = {
    "moment_mean": mean_kernel,
    "moment_mean_var": mean_var_kernel,
    "moment_lag1": lag_product_kernel,
    "moment_scale": scale_kernel,
}

SDE_MODELS = {"ou": SdeModel.ou, "brownian": SdeModel.brownian}

ESTIMATOR_IDS = ("ar1_ls", "ou_euler_ls", "longitudinal_ou", "hf_fixed_T", "hf_ergodic", *MOMENT_KERNELS)


def build_estimator(estimator_id: str, delta: Optional[float] = None, model: str = "ou") -> EstimatingFunction:
    """Construct a catalog estimating function by id."""
    if estimator_id == "ar1_ls":
        return make_ar1_ls()
    if estimator_id in MOMENT_KERNELS:
        return make_ergodic_moment(MOMENT_KERNELS[estimator_id]())
    if estimator_id in ("ou_euler_ls", "longitudinal_ou"):
        if delta is None or delta <= 0:
            raise ValueError(f"estimator {estimator_id!r} needs a positive delta")
        if estimator_id == "ou_euler_ls":
            return make_ou_euler_ls(delta)
        return make_longitudinal(ou_martingale_kernel(delta))
    if estimator_id in ("hf_fixed_T", "hf_ergodic"):
        if model not in SDE_MODELS:
            raise ValueError(f"unknown SDE model {model!r}; choose from {sorted(SDE_MODELS)}")
        sde = SDE_MODELS[model]()
        return make_hf_fixed_T(sde) if estimator_id == "hf_fixed_T" else make_hf_ergodic(sde)
    raise KeyError(f"unknown estimator id {estimator_id!r}; choose from {', '.join(ESTIMATOR_IDS)}")
