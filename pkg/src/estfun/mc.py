"""Monte Carlo replication engine and diagnostics for the limit theorems."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from estfun.asymptotics import LimitSpec, NoninvertibleJacobianError, normal_quantile, sandwich
from estfun.core import Dataset, EstfunError, EstimatingFunction, Solved
from estfun.simulate import Rng
from estfun.solver import SolverConfig, find_roots, rho_centered_select

UNRELIABLE_DELTA_FRACTION = 0.20
MIN_SOLVED_FOR_DIAGNOSTICS = 100


class DegenerateSummaryError(EstfunError, ValueError):
    """Estimates have no spread, so coverage and normality are undefined."""


LimitSource = Union[LimitSpec, Callable[[int, float], LimitSpec]]


@dataclass(frozen=True)
class Experiment:
    """A simulation study.

    ``simulate(n, delta, rng)`` draws one dataset; ``estimator(delta)``
    builds the estimating function for that step; ``limit`` is either a
    fixed LimitSpec or a callable of ``(n, delta)``.
    """

    name: str
    simulate: Callable[[int, float, Rng], Dataset]
    estimator: Callable[[float], EstimatingFunction]
    sizes: tuple[tuple[int, float], ...]
    replications: int
    master_seed: int
    limit: LimitSource
    solver: SolverConfig = SolverConfig()
    rho: Optional[Sequence[float]] = None
    level: float = 0.95
    threads: int = 1
    theta0: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("need at least 2 replications")
        if not self.sizes:
            raise ValueError("need at least one sample size")
        ns = [n for n, _ in self.sizes]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("sample sizes must be strictly increasing")

    def limit_for(self, n: int, delta: float) -> LimitSpec:
        return self.limit(n, delta) if callable(self.limit) else self.limit


@dataclass(frozen=True)
class Replication:
    rep: int
    n: int
    delta: float
    solved: bool
    reason: Optional[str]
    theta_hat: np.ndarray
    se: np.ndarray
    studentized: np.ndarray
    n_roots: int
    scaling: np.ndarray


@dataclass
class SizeSummary:
    n: int
    delta: float
    time_span: float
    theta_bar: np.ndarray
    level: float
    records: list[Replication]
    solved_count: int = 0
    delta_count: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.empty(0))
    sd: np.ndarray = field(default_factory=lambda: np.empty(0))
    scaled_sd: np.ndarray = field(default_factory=lambda: np.empty(0))
    coverage: Optional[np.ndarray] = None
    ks: Optional[np.ndarray] = None
    unique_root_fraction: float = float("nan")
    unreliable: bool = False

    @property
    def replications(self) -> int:
        return len(self.records)

    def estimates(self) -> np.ndarray:
        return np.array([r.theta_hat for r in self.records if r.solved])

    def scaled_residuals(self) -> np.ndarray:
        """A_n (theta_hat - theta_bar) for every solved replication."""
        rows = [r.scaling * (r.theta_hat - self.theta_bar) for r in self.records if r.solved]
        return np.array(rows)

    def studentized(self) -> np.ndarray:
        rows = [r.studentized for r in self.records if r.solved and np.all(np.isfinite(r.studentized))]
        return np.array(rows)

    def standard_errors(self) -> np.ndarray:
        return np.array([r.se for r in self.records if r.solved])

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else np.asarray(a, dtype=float).tolist()

        return {
            "n": self.n,
            "delta": self.delta,
            "time_span": self.time_span,
            "theta_bar": lst(self.theta_bar),
            "replications": self.replications,
            "solved_count": self.solved_count,
            "delta_count": self.delta_count,
            "mean": lst(self.mean),
            "sd": lst(self.sd),
            "scaled_sd": lst(self.scaled_sd),
            "coverage": lst(self.coverage),
            "ks": lst(self.ks),
            "unique_root_fraction": self.unique_root_fraction,
            "unreliable": self.unreliable,
        }


@dataclass
class McSummary:
    name: str
    master_seed: int
    level: float
    sizes: list[SizeSummary]
    theta0: Optional[np.ndarray] = None
    rate_slopes: dict = field(default_factory=dict)

    @property
    def unreliable(self) -> bool:
        return any(s.unreliable for s in self.sizes)

    @property
    def dim(self) -> int:
        return self.sizes[0].theta_bar.size

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "master_seed": self.master_seed,
            "level": self.level,
            "theta0": None if self.theta0 is None else np.asarray(self.theta0, dtype=float).tolist(),
            "unreliable": self.unreliable,
            "rate_slopes": self.rate_slopes,
            "sizes": [s.to_dict() for s in self.sizes],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        """One row per replication: rep,n,delta,solved,theta_hat_j,stud_j,ci_hit_j."""
        p = self.dim
        z = normal_quantile(0.5 + self.level / 2.0)
        header = ["rep", "n", "delta", "solved"]
        header += [f"theta_hat_{j + 1}" for j in range(p)]
        header += [f"stud_{j + 1}" for j in range(p)]
        header += [f"ci_hit_{j + 1}" for j in range(p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for s in self.sizes:
                for r in s.records:
                    row = [r.rep, r.n, repr(float(r.delta)), int(r.solved)]
                    if r.solved:
                        hits = np.abs(r.theta_hat - s.theta_bar) <= z * r.se
                        row += [repr(float(v)) for v in r.theta_hat]
                        row += [repr(float(v)) for v in r.studentized]
                        row += [int(h) for h in hits]
                    else:
                        row += [""] * (3 * p)
                    w.writerow(row)


def _replicate(exp: Experiment, n: int, delta: float, rep: int, lim: LimitSpec) -> Replication:
    data = exp.simulate(n, delta, Rng(exp.master_seed, rep))
    g = exp.estimator(delta)
    roots = find_roots(g, data, exp.solver)
    rho = exp.rho if exp.rho is not None else g.domain.anchor()
    out = rho_centered_select(roots, rho, g.domain)
    p = g.dim_param
    nan = np.full(p, np.nan)
    scaling = g.scaling.diag(data)
    if not isinstance(out, Solved):
        return Replication(rep, n, delta, False, out.reason.value, nan, nan, nan, len(roots), scaling)
    try:
        rep_ = sandwich(g, data, out.theta, theta_ref=lim.theta_bar, level=exp.level)
        se, stud = rep_.se, rep_.studentized
    except NoninvertibleJacobianError:
        se, stud = nan, nan
    return Replication(rep, n, delta, True, None, out.theta.copy(), se, stud, len(roots), scaling)


def _summarize(n, delta, lim: LimitSpec, level, records: list[Replication]) -> SizeSummary:
    s = SizeSummary(n, delta, n * delta, lim.theta_bar, level, records)
    s.solved_count = sum(r.solved for r in records)
    s.delta_count = len(records) - s.solved_count
    s.unreliable = s.delta_count > UNRELIABLE_DELTA_FRACTION * len(records)
    est = s.estimates()
    if est.size:
        s.mean = est.mean(axis=0)
        s.sd = est.std(axis=0, ddof=1) if len(est) > 1 else np.full(est.shape[1], np.nan)
        s.scaled_sd = s.scaled_residuals().std(axis=0, ddof=1) if len(est) > 1 else s.sd
        s.unique_root_fraction = float(np.mean([r.n_roots == 1 for r in records if r.solved]))
    if s.solved_count >= MIN_SOLVED_FOR_DIAGNOSTICS:
        try:
            s.coverage, s.ks = coverage_and_normality(s, level)
        except DegenerateSummaryError:
            s.coverage, s.ks = None, None
    return s


def run_replications(exp: Experiment) -> McSummary:
    """Simulate, solve and summarize M replications at every sample size.

    Replication i always uses stream (master_seed, i), so results do not
    depend on the number of threads or completion order.
    """
    sizes = []
    for n, delta in exp.sizes:
        lim = exp.limit_for(n, delta)

        def one(rep, n=n, delta=delta, lim=lim):
            return _replicate(exp, n, delta, rep, lim)

        if exp.threads > 1:
            with ThreadPoolExecutor(max_workers=exp.threads) as pool:
                records = list(pool.map(one, range(exp.replications)))
        else:
            records = [one(i) for i in range(exp.replications)]
        sizes.append(_summarize(n, delta, lim, exp.level, records))
    summary = McSummary(
        exp.name,
        exp.master_seed,
        exp.level,
        sizes,
        None if exp.theta0 is None else np.asarray(exp.theta0, dtype=float),
    )
    if len(sizes) >= 3:
        spans = [s.time_span for s in sizes]
        growing = all(s.delta > 0 for s in sizes) and all(b > a * (1 + 1e-9) for a, b in zip(spans, spans[1:]))
        scales = ("n", "T_n") if growing else ("n",)
        for scale in scales:
            try:
                summary.rate_slopes[scale] = [rate_slope(summary, scale, j) for j in range(summary.dim)]
            except ValueError:
                pass  # too many delta outcomes; the summary is already flagged
    return summary


def rate_slope(summary: McSummary, scale: str = "n", coord: int = 0) -> float:
    """Least-squares slope of log(empirical sd) against log(n) or log(T_n)."""
    if len(summary.sizes) < 3:
        raise ValueError("rate_slope needs at least 3 sample sizes")
    if scale == "n":
        x = [s.n for s in summary.sizes]
    elif scale == "T_n":
        x = [s.time_span for s in summary.sizes]
        if len(set(x)) < 2 or min(x) <= 0:
            raise ValueError("rate_slope vs T_n needs varying positive time spans")
    else:
        raise ValueError(f"unknown scale {scale!r}")
    y = [s.sd[coord] if s.sd.size else np.nan for s in summary.sizes]
    if not np.all(np.isfinite(y)) or min(y) <= 0:
        raise ValueError("rate_slope needs a positive empirical sd at every sample size")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


def ks_critical(m: int, alpha: float = 0.01) -> float:
    """Asymptotic Kolmogorov-Smirnov critical value sqrt(-log(alpha/2)/2)/sqrt(m)."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) / math.sqrt(m)


def coverage_and_normality(size: SizeSummary, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate CI coverage of theta_bar and KS distance of studentized values to N(0, 1)."""
    if size.solved_count < MIN_SOLVED_FOR_DIAGNOSTICS:
        raise ValueError(f"need at least {MIN_SOLVED_FOR_DIAGNOSTICS} solved replications, got {size.solved_count}")
    est = size.estimates()
    se = size.standard_errors()
    ok = np.all(np.isfinite(se), axis=1)
    est, se = est[ok], se[ok]
    if np.any(np.ptp(est, axis=0) == 0) or np.any(np.all(se == 0, axis=0)):
        raise DegenerateSummaryError("estimates have zero spread; coverage is undefined")
    z = normal_quantile(0.5 + level / 2.0)
    coverage = np.mean(np.abs(est - size.theta_bar) <= z * se, axis=0)
    stud = size.studentized()
    ks = np.array([stats.kstest(stud[:, j], "norm").statistic for j in range(stud.shape[1])])
    return coverage, ks


# --------------------------------------------------------------------------
# sampling schedules
# --------------------------------------------------------------------------


def ergodic_schedule(ns: Sequence[int]) -> tuple[tuple[int, float], ...]:
    """delta_n = n^{-2/3}: T_n = n^{1/3} grows while n delta_n^2 = n^{-1/3} vanishes."""
    return tuple((int(n), float(n) ** (-2.0 / 3.0)) for n in ns)


def fixed_horizon_schedule(ns: Sequence[int], horizon: float = 1.0) -> tuple[tuple[int, float], ...]:
    return tuple((int(n), horizon / n) for n in ns)
