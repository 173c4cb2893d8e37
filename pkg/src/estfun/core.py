"""Shared domain types: parameter spaces, datasets, estimating functions,
estimate outcomes and scaling matrices."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

COND_LIMIT = 1e12
# d(theta, delta) used when failures enter distance-based summaries
DELTA_DISTANCE = 1.0
FD_STEP = np.cbrt(np.finfo(float).eps)


class EstfunError(Exception):
    """Base class for errors raised by this package."""


class DomainError(EstfunError, ValueError):
    """A parameter or data value lies outside the admissible domain."""


class InvalidVersionError(EstfunError, ValueError):
    """A reweighting matrix is singular or badly conditioned."""


class DegenerateError(EstfunError, ValueError):
    """The data carry no information about the parameter."""


def _as_vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float)).ravel()


# --------------------------------------------------------------------------
# parameter spaces
# --------------------------------------------------------------------------


class ParameterSpace:
    dim: int

    def contains(self, theta) -> bool:
        raise NotImplementedError

    def psi(self, theta) -> np.ndarray:
        raise NotImplementedError

    def search_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounded box in theta coordinates used for multistart search."""
        raise NotImplementedError

    def anchor(self) -> np.ndarray:
        """Default rho: centre of the search box."""
        lo, hi = self.search_box()
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CompactBox(ParameterSpace):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _as_vec(self.lower), _as_vec(self.upper)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if not np.all(lo < hi):
            raise ValueError("CompactBox requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, theta) -> bool:
        t = _as_vec(theta)
        return t.size == self.dim and bool(np.all(np.isfinite(t)) and np.all(t >= self.lower) and np.all(t <= self.upper))

    def psi(self, theta) -> np.ndarray:
        return _as_vec(theta)

    def search_box(self):
        return self.lower.copy(), self.upper.copy()


_COORD_MAPS = {
    "identity": (lambda t: t, lambda u: u, lambda t: 1.0, lambda t: np.isfinite(t)),
    "log": (np.log, np.exp, lambda t: 1.0 / t, lambda t: np.isfinite(t) and t > 0),
}


@dataclass(frozen=True)
class OpenMapped(ParameterSpace):
    """Open parameter set carried onto R^p by a bijection ``psi``.

    ``psi``, ``psi_inv`` and ``psi_jac`` act on length-p vectors. ``box``
    gives the bounded search region (in theta coordinates) that multistart
    root search uses.
    """

    dim: int
    psi_fn: Callable[[np.ndarray], np.ndarray]
    psi_inv: Callable[[np.ndarray], np.ndarray]
    psi_jac: Callable[[np.ndarray], np.ndarray]
    member: Callable[[np.ndarray], bool]
    box: Optional[tuple[np.ndarray, np.ndarray]] = None

    @classmethod
    def coordinatewise(cls, maps: Sequence[str], box=None) -> "OpenMapped":
        """Product space built from per-coordinate maps ``identity`` or ``log``."""
        maps = list(maps)
        for m in maps:
            if m not in _COORD_MAPS:
                raise ValueError(f"unknown coordinate map {m!r}")
        fns = [_COORD_MAPS[m] for m in maps]

        def psi(t):
            t = _as_vec(t)
            return np.array([f[0](v) for f, v in zip(fns, t)])

        def psi_inv(u):
            u = _as_vec(u)
            return np.array([f[1](v) for f, v in zip(fns, u)])

        def psi_jac(t):
            t = _as_vec(t)
            return np.diag([f[2](v) for f, v in zip(fns, t)])

        def member(t):
            t = _as_vec(t)
            return t.size == len(fns) and all(bool(f[3](v)) for f, v in zip(fns, t))

        if box is not None:
            box = (_as_vec(box[0]), _as_vec(box[1]))
        return cls(len(maps), psi, psi_inv, psi_jac, member, box)

    def contains(self, theta) -> bool:
        return bool(self.member(_as_vec(theta)))

    def psi(self, theta) -> np.ndarray:
        return _as_vec(self.psi_fn(_as_vec(theta)))

    def anchor(self) -> np.ndarray:
        lo, hi = self.search_box()
        return _as_vec(self.psi_inv(0.5 * (self.psi(lo) + self.psi(hi))))

    def search_box(self):
        if self.box is None:
            raise DomainError("OpenMapped space needs a bounded search box for root search")
        return self.box[0].copy(), self.box[1].copy()


def distance(space: ParameterSpace, a, b) -> float:
    """Metric |psi(a) - psi(b)| on the parameter space."""
    if not space.contains(a) or not space.contains(b):
        raise DomainError("distance: point outside the parameter space")
    return float(np.linalg.norm(space.psi(a) - space.psi(b)))


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Observed values plus sampling metadata.

    ``values`` is a 1-d path ``X_0, ..., X_n`` or, for longitudinal data, an
    array of shape ``(subjects, m + 1)``. ``delta`` is the sampling step
    (0 for unit-indexed discrete time).
    """

    values: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (1, 2):
            raise ValueError("values must be 1-d (path) or 2-d (subjects x times)")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def longitudinal(self) -> bool:
        return self.values.ndim == 2

    @property
    def n(self) -> int:
        """Number of increments (subjects for longitudinal data)."""
        if self.longitudinal:
            return self.values.shape[0]
        return max(self.values.size - 1, 0)

    @property
    def time_span(self) -> float:
        return self.n * self.delta

    def times(self) -> np.ndarray:
        if self.longitudinal:
            raise ValueError("times() is defined for single paths only")
        step = self.delta if self.delta > 0 else 1.0
        return np.arange(self.values.size) * step


# --------------------------------------------------------------------------
# scaling matrices
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingMatrix:
    """Diagonal rate matrix A_n; each entry is a function of (n, delta, time_span)."""

    entries: tuple[Callable[[int, float, float], float], ...]
    name: str = "custom"

    def diag(self, data: Dataset) -> np.ndarray:
        return np.array([f(data.n, data.delta, data.time_span) for f in self.entries], dtype=float)

    def matrix(self, data: Dataset) -> np.ndarray:
        return np.diag(self.diag(data))

    @classmethod
    def sqrt_n(cls, p: int) -> "ScalingMatrix":
        return cls(tuple((lambda n, d, t: np.sqrt(n)) for _ in range(p)), "sqrt_n")

    @classmethod
    def mixed(cls) -> "ScalingMatrix":
        """diag(sqrt(T_n), sqrt(n)) for (drift, diffusion) parameters."""
        return cls((lambda n, d, t: np.sqrt(t), lambda n, d, t: np.sqrt(n)), "mixed")


# --------------------------------------------------------------------------
# estimating functions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatingFunction:
    """G_n(theta) = normalizer(data) * sum_i summand_i(theta).

    ``summands(theta, data)`` returns a ``(k, p)`` array. The optional
    ``jac_sum`` returns the ``(p, p)`` sum of the summand derivatives; when
    absent the Jacobian of G_n is taken by central differences.
    """

    name: str
    dim_param: int
    lag: int
    summands: Callable[[np.ndarray, Dataset], np.ndarray]
    normalizer: Callable[[Dataset], float]
    domain: ParameterSpace
    scaling: ScalingMatrix
    jac_sum: Optional[Callable[[np.ndarray, Dataset], np.ndarray]] = None
    check_data: Optional[Callable[[Dataset], None]] = None
    meta: dict = field(default_factory=dict, compare=False)

    def validate(self, data: Dataset) -> None:
        if self.check_data is not None:
            self.check_data(data)

    def _theta(self, theta) -> np.ndarray:
        t = _as_vec(theta)
        if t.size != self.dim_param:
            raise ValueError(f"{self.name}: expected {self.dim_param} parameters, got {t.size}")
        return t

    def terms(self, theta, data: Dataset) -> np.ndarray:
        return np.asarray(self.summands(self._theta(theta), data), dtype=float).reshape(-1, self.dim_param)

    def eval(self, theta, data: Dataset) -> np.ndarray:
        return self.normalizer(data) * self.terms(theta, data).sum(axis=0)

    def __call__(self, theta, data: Dataset) -> np.ndarray:
        return self.eval(theta, data)

    @property
    def has_jacobian(self) -> bool:
        return self.jac_sum is not None

    def jacobian(self, theta, data: Dataset) -> np.ndarray:
        if self.jac_sum is None:
            return fd_jacobian(self, theta, data)
        jac = np.asarray(self.jac_sum(self._theta(theta), data), dtype=float)
        return self.normalizer(data) * jac.reshape(self.dim_param, self.dim_param)


def fd_jacobian(g: EstimatingFunction, theta, data: Dataset) -> np.ndarray:
    """Central-difference Jacobian with step cbrt(eps) * max(1, |theta_j|)."""
    t = _as_vec(theta)
    p = t.size
    out = np.empty((p, p))
    for j in range(p):
        h = FD_STEP * max(1.0, abs(t[j]))
        up, dn = t.copy(), t.copy()
        up[j] += h
        dn[j] -= h
        out[:, j] = (g.eval(up, data) - g.eval(dn, data)) / (up[j] - dn[j])
    return out


def jacobian_rel_error(g: EstimatingFunction, theta, data: Dataset) -> float:
    """Relative discrepancy between the analytic and finite-difference Jacobian."""
    ana = g.jacobian(theta, data)
    num = fd_jacobian(g, theta, data)
    scale = max(np.max(np.abs(num)), np.finfo(float).tiny)
    return float(np.max(np.abs(ana - num)) / scale)


def reweight(g: EstimatingFunction, B) -> EstimatingFunction:
    """The version theta -> B G_n(theta) for a constant invertible matrix B."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    p = g.dim_param
    if B.shape != (p, p):
        raise InvalidVersionError(f"B must be {p}x{p}, got {B.shape}")
    if not np.all(np.isfinite(B)) or np.linalg.cond(B) >= COND_LIMIT:
        raise InvalidVersionError("reweighting matrix is singular or ill-conditioned")
    Bc = B.copy()

    def summands(theta, data):
        return g.terms(theta, data) @ Bc.T

    jac = None
    if g.jac_sum is not None:

        def jac(theta, data):
            return Bc @ np.asarray(g.jac_sum(theta, data), dtype=float).reshape(p, p)

    return EstimatingFunction(
        name=f"{g.name}[reweighted]",
        dim_param=p,
        lag=g.lag,
        summands=summands,
        normalizer=g.normalizer,
        domain=g.domain,
        scaling=g.scaling,
        jac_sum=jac,
        check_data=g.check_data,
        meta={**g.meta, "B": Bc},
    )


# --------------------------------------------------------------------------
# outcomes
# --------------------------------------------------------------------------


class DeltaReason(str, enum.Enum):
    NO_ROOT_FOUND = "NoRootFound"
    LEFT_DOMAIN = "LeftDomain"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class Solved:
    theta: np.ndarray
    residual_norm: float
    iterations: int

    def to_dict(self) -> dict:
        return {
            "outcome": "solved",
            "theta": [float(v) for v in self.theta],
            "residual_norm": float(self.residual_norm),
            "iterations": int(self.iterations),
        }


@dataclass(frozen=True)
class Delta:
    """The failure point outside the parameter space; carries no value."""

    reason: DeltaReason

    def to_dict(self) -> dict:
        return {"outcome": "delta", "reason": self.reason.value}


EstimateOutcome = Solved | Delta
