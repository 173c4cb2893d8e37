"""Synthetic observations from autoregressions, the Ornstein-Uhlenbeck
process and general scalar diffusions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from estfun import kernels
from estfun.core import Dataset, EstfunError

EULER_SUBSTEPS = 50
AR_BURN_IN = 1000
OVERFLOW_GUARD = 1e8


class SimulationError(EstfunError, RuntimeError):
    """The simulated path left the numerically stable range."""


@dataclass(frozen=True)
class Rng:
    """Reproducible random stream.

    The generator for ``(master_seed, stream_index)`` is Philox seeded with
    ``SeedSequence(master_seed, spawn_key=(stream_index,))``; distinct pairs
    give independent streams, equal pairs give identical output.
    """

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_index),))
        return np.random.Generator(np.random.Philox(ss))


def _zero(x, p):
    return 0.0


@dataclass(frozen=True)
class SdeModel:
    """Scalar diffusion dX = a(X; alpha) dt + b(X; beta) dW started at x0.

    All coefficient callables take ``(x, param)`` with ``x`` a float or an
    array; they may return a scalar when the value does not depend on x.
    The squared diffusion ``c = b**2`` and its beta-derivatives are derived
    from ``b`` and its derivatives. ``affine`` maps ``(alpha, beta)``
    to ``(p0, p1, q0, q1)`` when a = p0 + p1 x and b = q0 + q1 x, which lets
    the compiled Euler kernel run the simulation.
    """

    drift: Callable
    drift_dalpha: Callable
    diffusion: Callable
    diffusion_dbeta: Callable
    drift_dalpha2: Callable = _zero
    diffusion_dbeta2: Callable = _zero
    x0: float = 0.0
    affine: Optional[Callable[[float, float], tuple[float, float, float, float]]] = None
    name: str = "sde"

    def c(self, x, beta):
        b = self.diffusion(x, beta)
        return b * b

    def dc(self, x, beta):
        return 2.0 * self.diffusion(x, beta) * self.diffusion_dbeta(x, beta)

    def d2c(self, x, beta):
        db = self.diffusion_dbeta(x, beta)
        return 2.0 * db * db + 2.0 * self.diffusion(x, beta) * self.diffusion_dbeta2(x, beta)

    @classmethod
    def ou(cls, x0: float = 0.0) -> "SdeModel":
        """dX = -alpha X dt + beta dW."""
        return cls(
            drift=lambda x, a: -a * x,
            drift_dalpha=lambda x, a: -x,
            diffusion=lambda x, b: b,
            diffusion_dbeta=lambda x, b: 1.0,
            x0=x0,
            affine=lambda a, b: (0.0, -float(a), float(b), 0.0),
            name="ou",
        )

    @classmethod
    def brownian(cls, x0: float = 0.0) -> "SdeModel":
        """dX = beta dW (alpha is ignored)."""
        return cls(
            drift=_zero,
            drift_dalpha=_zero,
            diffusion=lambda x, b: b,
            diffusion_dbeta=lambda x, b: 1.0,
            x0=x0,
            affine=lambda a, b: (0.0, 0.0, float(b), 0.0),
            name="brownian",
        )


def _check_ar(coeffs: np.ndarray) -> None:
    q = coeffs.size
    comp = np.zeros((q, q))
    comp[0, :] = coeffs
    if q > 1:
        comp[1:, :-1] = np.eye(q - 1)
    radius = np.max(np.abs(np.linalg.eigvals(comp))) if q else 0.0
    if radius >= 1.0:
        raise ValueError(f"AR coefficients {coeffs.tolist()} are not stationary (spectral radius {radius:.4g})")


def simulate_ar(coeffs, noise_sd: float, n: int, rng: Rng, burn_in: int = AR_BURN_IN) -> Dataset:
    """X_0..X_n from X_t = sum_k coeffs[k] X_{t-1-k} + noise_sd * e_t."""
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    _check_ar(coeffs)
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    q = coeffs.size
    gen = rng.generator()
    innov = noise_sd * gen.standard_normal(burn_in + n + 1)
    path = kernels.ar_filter(np.ascontiguousarray(coeffs), innov, np.zeros(q))
    return Dataset(path[q + burn_in:], delta=0.0)


def ou_stationary_var(theta: float, sigma: float) -> float:
    return sigma * sigma / (2.0 * theta)


def simulate_ou_exact(theta: float, sigma: float, delta: float, n: int, rng: Rng, x0: Optional[float] = 0.0) -> Dataset:
    """Exact OU transitions; ``x0=None`` draws the start from the stationary law."""
    if theta <= 0 or delta <= 0 or sigma <= 0:
        raise ValueError("theta, sigma and delta must be positive")
    gen = rng.generator()
    if x0 is None:
        x0 = math.sqrt(ou_stationary_var(theta, sigma)) * gen.standard_normal()
    phi = math.exp(-theta * delta)
    scale = sigma * math.sqrt(-math.expm1(-2.0 * theta * delta) / (2.0 * theta))
    innov = scale * gen.standard_normal(n)
    path = kernels.ar_filter(np.array([phi]), innov, np.array([float(x0)]))
    return Dataset(path, delta=delta)


def simulate_sde_euler(
    model: SdeModel,
    theta,
    delta: float,
    n: int,
    rng: Rng,
    substeps: int = EULER_SUBSTEPS,
    x0: Optional[float] = None,
) -> Dataset:
    """Euler-Maruyama on a grid of delta/substeps, keeping every substeps-th point."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if delta <= 0:
        raise ValueError("delta must be positive")
    alpha, beta = (float(v) for v in theta)
    start = model.x0 if x0 is None else float(x0)
    h = delta / substeps
    sqrt_h = math.sqrt(h)
    noise = rng.generator().standard_normal(n * substeps)
    if model.affine is not None:
        p0, p1, q0, q1 = model.affine(alpha, beta)
        path, bad = kernels.euler_affine(start, p0, p1, q0, q1, h, sqrt_h, substeps, noise, OVERFLOW_GUARD)
    else:
        path, bad = _euler_generic(model, alpha, beta, start, h, sqrt_h, substeps, noise)
    if bad >= 0:
        raise SimulationError(
            f"path exceeded |x| > {OVERFLOW_GUARD:g} at observation {bad}; model is unstable for theta={theta}"
        )
    return Dataset(path, delta=delta)


def _euler_generic(model, alpha, beta, x0, h, sqrt_h, substeps, noise):
    z = noise.tolist()
    n = len(z) // substeps
    out = np.empty(n + 1)
    out[0] = x0
    x = x0
    idx = 0
    for i in range(n):
        for _ in range(substeps):
            x = x + float(model.drift(x, alpha)) * h + float(model.diffusion(x, beta)) * sqrt_h * z[idx]
            idx += 1
        if not math.isfinite(x) or abs(x) > OVERFLOW_GUARD:
            return out, i + 1
        out[i + 1] = x
    return out, -1


def simulate_ou_longitudinal(theta: float, sigma: float, delta: float, m: int, subjects: int, rng: Rng) -> Dataset:
    """``subjects`` independent stationary OU paths observed at 0, delta, ..., m*delta."""
    if theta <= 0 or delta <= 0 or sigma <= 0:
        raise ValueError("theta, sigma and delta must be positive")
    if m < 1:
        raise ValueError("m must be >= 1")
    gen = rng.generator()
    z = gen.standard_normal((subjects, m + 1))
    phi = math.exp(-theta * delta)
    scale = sigma * math.sqrt(-math.expm1(-2.0 * theta * delta) / (2.0 * theta))
    y = np.empty((subjects, m + 1))
    y[:, 0] = math.sqrt(ou_stationary_var(theta, sigma)) * z[:, 0]
    for j in range(1, m + 1):
        y[:, j] = phi * y[:, j - 1] + scale * z[:, j]
    return Dataset(y, delta=delta)


def write_path_csv(data: Dataset, path) -> None:
    """Dump a single path as CSV with header ``t,x``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x"])
        for t, x in zip(data.times(), data.values):
            w.writerow([repr(float(t)), repr(float(x))])


def read_path_csv(path, delta: Optional[float] = None) -> Dataset:
    """Read a CSV with header ``t,x`` or ``x``. Delta is inferred from ``t`` unless given."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty data file")
    header = [h.strip().lower() for h in rows[0]]
    if header not in (["t", "x"], ["x"]):
        raise ValueError(f"{path}: header must be 't,x' or 'x', got {','.join(rows[0])!r}")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    try:
        cols = np.array([[float(c) for c in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric value ({exc})") from None
    if cols.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    x = cols[:, -1]
    if delta is None:
        delta = 0.0
        if header[0] == "t" and x.size > 1:
            steps = np.diff(cols[:, 0])
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or steps[0] <= 0:
                raise ValueError(f"{path}: observation times must be equidistant and increasing")
            delta = float(steps[0])
    return Dataset(x, delta=delta)
