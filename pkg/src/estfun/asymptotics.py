"""Inference after a root is found: sandwich covariances, studentized
statistics, confidence intervals, and the theoretical limit objects
(pseudo-true values, limiting Jacobians and noise variances)."""
from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate

from estfun.core import COND_LIMIT, Dataset, EstfunError, EstimatingFunction, _as_vec
from estfun.simulate import SdeModel, ou_stationary_var

EIG_FLOOR = 1e-12
QUAD_ABS_TOL = 1e-9
SUPPORT_SDS = 10.0


class NoninvertibleJacobianError(EstfunError, ValueError):
    """The estimated Jacobian at the root is singular."""


class QuadratureError(EstfunError, RuntimeError):
    pass


class VhatMode(str, enum.Enum):
    OUTER_PRODUCT = "outer_product"
    SUPPLIED = "supplied"


def normal_quantile(prob: float) -> float:
    return NormalDist().inv_cdf(prob)


def inv_sqrt_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root with eigenvalues clamped at EIG_FLOOR."""
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vals = np.maximum(vals, EIG_FLOOR)
    return (vecs / np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class AsymptoticReport:
    theta_hat: np.ndarray
    A_n: np.ndarray  # diagonal of the scaling matrix
    jacobian: np.ndarray  # plain dG_n at theta_hat
    W_hat: np.ndarray  # A_n dG_n A_n^{-1}
    V_hat: np.ndarray
    avar: np.ndarray  # estimated covariance of A_n (theta_hat - theta_bar)
    se: np.ndarray
    level: float
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    studentized: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "theta_hat": lst(self.theta_hat),
            "W_hat": lst(self.W_hat),
            "V_hat": lst(self.V_hat),
            "studentized": lst(self.studentized),
            "ci_lower": lst(self.ci_lower),
            "ci_upper": lst(self.ci_upper),
            "level": float(self.level),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def outer_product_vhat(g: EstimatingFunction, data: Dataset, theta) -> np.ndarray:
    """Estimate of Var(A_n G_n) from the summands: A s^2 (sum_i g_i g_i^T) A."""
    terms = g.terms(theta, data)
    a = g.scaling.diag(data)
    s = g.normalizer(data)
    v = (s * s) * (terms.T @ terms)
    v = a[:, None] * v * a[None, :]
    return 0.5 * (v + v.T)


def studentize(V_hat, A_n, jacobian, theta_hat, theta_ref) -> np.ndarray:
    """V^{-1/2} A_n dG_n(theta_hat) (theta_hat - theta_ref)."""
    diff = _as_vec(theta_hat) - _as_vec(theta_ref)
    return inv_sqrt_psd(np.asarray(V_hat)) @ (A_n * (np.asarray(jacobian) @ diff))


def sandwich(
    g: EstimatingFunction,
    data: Dataset,
    theta_hat,
    vhat_mode: VhatMode | str = VhatMode.OUTER_PRODUCT,
    V_supplied=None,
    theta_ref=None,
    level: float = 0.95,
) -> AsymptoticReport:
    theta_hat = _as_vec(theta_hat)
    mode = VhatMode(vhat_mode)
    jac = g.jacobian(theta_hat, data)
    if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) >= COND_LIMIT:
        raise NoninvertibleJacobianError(f"{g.name}: Jacobian at theta_hat is singular")
    a = g.scaling.diag(data)
    W = a[:, None] * jac / a[None, :]
    if mode is VhatMode.OUTER_PRODUCT:
        V = outer_product_vhat(g, data, theta_hat)
    else:
        if V_supplied is None:
            raise ValueError("vhat_mode='supplied' needs V_supplied")
        V = np.atleast_2d(np.asarray(V_supplied, dtype=float))
    Winv = np.linalg.inv(W)
    avar = Winv @ V @ Winv.T
    avar = 0.5 * (avar + avar.T)
    se = np.sqrt(np.clip(np.diag(avar), 0.0, None)) / a
    z = normal_quantile(0.5 + level / 2.0)
    stud = None if theta_ref is None else studentize(V, a, jac, theta_hat, theta_ref)
    return AsymptoticReport(
        theta_hat=theta_hat,
        A_n=a,
        jacobian=jac,
        W_hat=W,
        V_hat=V,
        avar=avar,
        se=se,
        level=level,
        ci_lower=theta_hat - z * se,
        ci_upper=theta_hat + z * se,
        studentized=stud,
    )


# --------------------------------------------------------------------------
# theoretical limits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitSpec:
    """Pseudo-true value with the limiting covariance of A_n (theta_hat - theta_bar).

    ``avar`` is None where the limit covariance is random or not available
    in closed form.
    """

    theta_bar: np.ndarray
    avar: Optional[np.ndarray]
    rates: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "theta_bar", _as_vec(self.theta_bar))
        if self.avar is not None:
            av = np.atleast_2d(np.asarray(self.avar, dtype=float))
            if not np.allclose(av, av.T) or np.min(np.linalg.eigvalsh(av)) < -1e-10:
                raise ValueError("avar must be symmetric positive semi-definite")
            object.__setattr__(self, "avar", av)


def _ar2_stationary(theta1: float, theta2: float) -> bool:
    return abs(theta2) < 1 and theta1 + theta2 < 1 and theta2 - theta1 < 1


def theta_bar_ar2_misspec(theta1: float, theta2: float) -> float:
    """Limit of the AR(1) least-squares root on AR(2) data: the lag-one autocorrelation."""
    if not _ar2_stationary(theta1, theta2):
        raise ValueError(f"AR(2) coefficients ({theta1}, {theta2}) are not stationary")
    # nu / sigma^2 is the lag-one autocorrelation, theta1 / (1 - theta2) by Yule-Walker
    rho1 = theta1 / (1.0 - theta2)
    return theta1 + theta2 * rho1


def theta_bar_ou(theta0: float, delta: float) -> float:
    """(1 - exp(-theta0 delta)) / delta: limit of the Euler least-squares root."""
    if theta0 <= 0 or delta <= 0:
        raise ValueError("theta0 and delta must be positive")
    return -math.expm1(-theta0 * delta) / delta


class FixedTLimit(NamedTuple):
    G: float
    W: float
    varZ: float


def _riemann(values, path: Dataset) -> float:
    vals = np.broadcast_to(np.asarray(values, dtype=float), path.values[:-1].shape)
    return float(vals.sum() * path.delta)


def limit_fixed_T(model: SdeModel, path: Dataset, beta: float, beta0: float) -> FixedTLimit:
    """Path-wise limits of the fixed-horizon diffusion estimating function.

    G(beta) and W(beta) are left-point Riemann sums along ``path``;
    ``varZ = -2 T W(beta0)``.
    """
    if path.delta <= 0:
        raise ValueError("path must carry a positive step")
    x = path.values[:-1]

    def g_and_w(b):
        c, dc, d2c = model.c(x, b), model.dc(x, b), model.d2c(x, b)
        c0 = model.c(x, beta0)
        f = dc / (c * c)
        f_prime = d2c / (c * c) - 2.0 * dc * dc / (c * c * c)
        return _riemann(f * (c0 - c), path), _riemann(f_prime * (c0 - c) - dc * dc / (c * c), path)

    G, W = g_and_w(beta)
    _, W0 = g_and_w(beta0)
    return FixedTLimit(G, W, -2.0 * path.time_span * W0)


@dataclass(frozen=True)
class QuadratureConfig:
    support: Optional[tuple[float, float]] = None
    abs_tol: float = QUAD_ABS_TOL
    limit: int = 200


class ErgodicLimit(NamedTuple):
    G: np.ndarray
    W: np.ndarray
    varZ: np.ndarray

    def limit_covariance(self) -> np.ndarray:
        """W^{-1} varZ W^{-T}: covariance of (sqrt(T_n)(alpha_hat - alpha0), sqrt(n)(beta_hat - beta0))."""
        Winv = np.linalg.inv(self.W)
        return Winv @ self.varZ @ Winv.T


def _quad(fn, lo, hi, cfg: QuadratureConfig) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, lo, hi, epsabs=cfg.abs_tol, epsrel=0.0, limit=cfg.limit)
        except integrate.IntegrationWarning as exc:
            val, err = integrate.quad(fn, lo, hi, epsabs=cfg.abs_tol, epsrel=0.0, limit=cfg.limit, full_output=1)[:2]
            raise QuadratureError(f"quadrature did not converge (achieved abs error {err:.3g}): {exc}") from None
    if err > 10 * cfg.abs_tol:
        raise QuadratureError(f"quadrature did not converge (achieved abs error {err:.3g})")
    return val


def _support(density, cfg: QuadratureConfig) -> tuple[float, float]:
    if cfg.support is not None:
        return cfg.support
    mean = integrate.quad(lambda x: x * density(x), -np.inf, np.inf)[0]
    second = integrate.quad(lambda x: x * x * density(x), -np.inf, np.inf)[0]
    sd = math.sqrt(max(second - mean * mean, 0.0))
    return mean - SUPPORT_SDS * sd, mean + SUPPORT_SDS * sd


def limit_ergodic(
    model: SdeModel,
    stationary_density: Callable[[float], float],
    theta,
    theta0,
    quadrature: QuadratureConfig = QuadratureConfig(),
) -> ErgodicLimit:
    """Limit functions of the (alpha, beta) high-frequency estimating function under mu_{theta0}."""
    alpha, beta = (float(v) for v in theta)
    alpha0, beta0 = (float(v) for v in theta0)
    lo, hi = _support(stationary_density, quadrature)
    mass = _quad(stationary_density, lo, hi, quadrature)
    if abs(mass - 1.0) > 1e-6:
        raise QuadratureError(f"stationary density integrates to {mass:.9f} on [{lo:.4g}, {hi:.4g}]")

    def integral(fn):
        return _quad(lambda x: float(fn(x)) * stationary_density(x), lo, hi, quadrature)

    def pieces(al, be):
        def g1(x):
            return model.drift_dalpha(x, al) / model.c(x, be) * (model.drift(x, alpha0) - model.drift(x, al))

        def g2(x):
            c = model.c(x, be)
            return model.dc(x, be) / (c * c) * (model.c(x, beta0) - c)

        def w11(x):
            c = model.c(x, be)
            da = model.drift_dalpha(x, al)
            return model.drift_dalpha2(x, al) / c * (model.drift(x, alpha0) - model.drift(x, al)) - da * da / c

        def w22(x):
            c, dc, d2c = model.c(x, be), model.dc(x, be), model.d2c(x, be)
            f_prime = d2c / (c * c) - 2.0 * dc * dc / (c * c * c)
            return f_prime * (model.c(x, beta0) - c) - dc * dc / (c * c)

        def w12(x):
            c = model.c(x, be)
            return -model.drift_dalpha(x, al) * model.dc(x, be) / (c * c) * (model.drift(x, alpha0) - model.drift(x, al))

        return g1, g2, w11, w22, w12

    g1, g2, w11, w22, w12 = pieces(alpha, beta)
    G = np.array([integral(g1), integral(g2)])
    W = np.array([[integral(w11), integral(w12)], [0.0, integral(w22)]])
    _, _, w11_0, w22_0, _ = pieces(alpha0, beta0)
    # Var(Z^2) carries the factor 2 that the fixed-horizon case has
    varZ = np.diag([-integral(w11_0), -2.0 * integral(w22_0)])
    return ErgodicLimit(G, W, varZ)


def ou_stationary_density(alpha0: float, beta0: float) -> Callable[[float], float]:
    var = ou_stationary_var(alpha0, beta0)
    norm = 1.0 / math.sqrt(2.0 * math.pi * var)
    return lambda x: norm * math.exp(-x * x / (2.0 * var))


# --------------------------------------------------------------------------
# limit specifications for the catalog families
# --------------------------------------------------------------------------


def limit_ar1(theta0: float) -> LimitSpec:
    return LimitSpec([theta0], [[1.0 - theta0 * theta0]], ("n",))


def limit_ar2_misspec(theta1: float, theta2: float) -> LimitSpec:
    # innovations of the misspecified fit are serially correlated; no closed-form avar
    return LimitSpec([theta_bar_ar2_misspec(theta1, theta2)], None, ("n",))


def limit_ou_euler(theta0: float, delta: float) -> LimitSpec:
    phi = math.exp(-theta0 * delta)
    return LimitSpec([theta_bar_ou(theta0, delta)], [[(1.0 - phi * phi) / (delta * delta)]], ("n",))


def limit_longitudinal_ou(theta0: float, delta: float, m: int) -> LimitSpec:
    phi = math.exp(-theta0 * delta)
    v = (1.0 - phi * phi) / (delta * delta * phi * phi)
    return LimitSpec([theta0], [[v / m]], ("n",))


def limit_fixed_T_constant(beta0: float) -> LimitSpec:
    """Constant diffusion coefficient: the mixed-normal limit is N(0, beta0^2 / 2)."""
    return LimitSpec([beta0], [[beta0 * beta0 / 2.0]], ("n",))


def limit_ergodic_quadrature(model: SdeModel, theta0, density=None, quadrature=QuadratureConfig()) -> LimitSpec:
    alpha0, beta0 = (float(v) for v in theta0)
    if density is None:
        if model.name != "ou":
            raise ValueError("a stationary density is required for non-OU models")
        density = ou_stationary_density(alpha0, beta0)
    lim = limit_ergodic(model, density, theta0, theta0, quadrature)
    return LimitSpec([alpha0, beta0], lim.limit_covariance(), ("T_n", "n"))
