"""Root finding for estimating equations G_n(theta) = 0."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from estfun.core import (
    COND_LIMIT,
    Dataset,
    Delta,
    DeltaReason,
    DomainError,
    EstimateOutcome,
    EstimatingFunction,
    ParameterSpace,
    Solved,
    distance,
    fd_jacobian,
)

DEDUP_RADIUS = 1e-6
MULTISTART_SEED = 20240611
# consecutive full Newton steps outside the domain before giving up
BOUNDARY_PUSHES = 3


@dataclass(frozen=True)
class SolverConfig:
    tol_residual: float = 1e-10
    tol_step: float = 1e-12
    max_iter: int = 100
    max_halvings: int = 30
    multistart_points: int = 32

    def __post_init__(self):
        if self.tol_residual <= 0 or self.tol_step <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iter < 1 or self.max_halvings < 0 or self.multistart_points < 1:
            raise ValueError("max_iter and multistart_points must be >= 1, max_halvings >= 0")


@dataclass
class RootSet:
    """Distinct roots found by multistart search, ordered by psi(theta)."""

    solutions: list[Solved] = field(default_factory=list)
    attempts: int = 0
    failures: int = 0

    @property
    def roots(self) -> list[np.ndarray]:
        return [s.theta for s in self.solutions]

    def __len__(self) -> int:
        return len(self.solutions)


def _safe_eval(g: EstimatingFunction, theta, data):
    """G_n(theta), or None when theta is outside the domain or G_n is not finite there."""
    if not g.domain.contains(theta):
        return None
    try:
        with np.errstate(all="ignore"):
            val = g.eval(theta, data)
    except DomainError:
        return None
    if not np.all(np.isfinite(val)):
        return None
    return val


def _invertible(mat: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(mat)) and np.linalg.cond(mat) < COND_LIMIT)


def newton_solve(g: EstimatingFunction, data: Dataset, start, cfg: SolverConfig = SolverConfig()) -> EstimateOutcome:
    """Damped Newton: full step, halved until |G_n| decreases inside the domain."""
    theta = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    if not g.domain.contains(theta):
        raise DomainError(f"start {theta.tolist()} is outside the parameter space")
    val = _safe_eval(g, theta, data)
    if val is None:
        return Delta(DeltaReason.LEFT_DOMAIN)
    res = float(np.linalg.norm(val))
    use_fd = not g.has_jacobian
    pushes = 0

    for it in range(cfg.max_iter):
        if res <= cfg.tol_residual:
            return Solved(theta, res, it)
        with np.errstate(all="ignore"):
            jac = fd_jacobian(g, theta, data) if use_fd else g.jacobian(theta, data)
        if not _invertible(jac):
            if use_fd:
                return Delta(DeltaReason.NO_ROOT_FOUND)
            use_fd = True
            with np.errstate(all="ignore"):
                jac = fd_jacobian(g, theta, data)
            if not _invertible(jac):
                return Delta(DeltaReason.NO_ROOT_FOUND)
        step = np.linalg.solve(jac, val)

        full_inside = g.domain.contains(theta - step)
        pushes = 0 if full_inside else pushes + 1
        if pushes >= BOUNDARY_PUSHES:
            return Delta(DeltaReason.LEFT_DOMAIN)
        lam = 1.0
        seen_inside = False
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            cand = theta - lam * step
            cval = _safe_eval(g, cand, data)
            if cval is not None:
                seen_inside = True
                cres = float(np.linalg.norm(cval))
                if cres < res:
                    accepted = (cand, cval, cres)
                    break
            lam *= 0.5
        if accepted is None:
            return Delta(DeltaReason.NO_ROOT_FOUND if seen_inside else DeltaReason.LEFT_DOMAIN)
        moved = float(np.linalg.norm(accepted[0] - theta))
        theta, val, res = accepted
        if res > cfg.tol_residual and moved <= cfg.tol_step * (1.0 + float(np.linalg.norm(theta))):
            return Delta(DeltaReason.NO_ROOT_FOUND)

    if res <= cfg.tol_residual:
        return Solved(theta, res, cfg.max_iter)
    return Delta(DeltaReason.MAX_ITERATIONS)


def _diameter(space: ParameterSpace) -> float:
    try:
        lo, hi = space.search_box()
    except DomainError:
        return np.inf
    return float(np.linalg.norm(hi - lo))


def contraction_solve(
    g: EstimatingFunction,
    data: Dataset,
    start,
    frozen_jacobian=None,
    cfg: SolverConfig = SolverConfig(),
    history: Optional[list] = None,
) -> EstimateOutcome:
    """Fixed-point iteration z <- z - J^{-1} G_n(z) with a frozen matrix J.

    J defaults to the Jacobian at ``start``. Iterates are appended to
    ``history`` when a list is passed.
    """
    z = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    if frozen_jacobian is None:
        frozen_jacobian = g.jacobian(z, data)
    jac = np.atleast_2d(np.asarray(frozen_jacobian, dtype=float))
    if not _invertible(jac):
        raise ValueError("frozen Jacobian is not invertible")
    jinv = np.linalg.inv(jac)
    guard = 10.0 * _diameter(g.domain)
    if history is not None:
        history.append(z.copy())

    for it in range(cfg.max_iter + 1):
        val = _safe_eval(g, z, data)
        if val is None:
            return Delta(DeltaReason.LEFT_DOMAIN)
        res = float(np.linalg.norm(val))
        if res <= cfg.tol_residual:
            return Solved(z, res, it)
        if it == cfg.max_iter:
            break
        z = z - jinv @ val
        if history is not None:
            history.append(z.copy())
        if not np.all(np.isfinite(z)) or np.linalg.norm(z - start) > guard:
            return Delta(DeltaReason.NO_ROOT_FOUND)
    return Delta(DeltaReason.MAX_ITERATIONS)


def multistart_points(space: ParameterSpace, count: int) -> np.ndarray:
    """Scrambled Sobol points in the search box (fixed seed, so deterministic)."""
    lo, hi = space.search_box()
    sampler = qmc.Sobol(d=lo.size, scramble=True, seed=MULTISTART_SEED)
    m = int(np.ceil(np.log2(max(count, 1))))
    pts = sampler.random_base2(m)[:count]
    return qmc.scale(pts, lo, hi)


def dedup_roots(solutions, space: ParameterSpace, radius: float = DEDUP_RADIUS) -> list[Solved]:
    kept: list[Solved] = []
    for s in solutions:
        pr = space.psi(s.theta)
        if all(np.linalg.norm(pr - space.psi(k.theta)) > radius for k in kept):
            kept.append(s)
    kept.sort(key=lambda s: tuple(space.psi(s.theta)))
    return kept


def find_roots(g: EstimatingFunction, data: Dataset, cfg: SolverConfig = SolverConfig()) -> RootSet:
    """Newton from every multistart point; distinct converged roots are collected."""
    g.validate(data)
    starts = multistart_points(g.domain, cfg.multistart_points)
    found = []
    failures = 0
    for s in starts:
        if not g.domain.contains(s):
            failures += 1
            continue
        out = newton_solve(g, data, s, cfg)
        if isinstance(out, Solved):
            found.append(out)
        else:
            failures += 1
    return RootSet(dedup_roots(found, g.domain), attempts=len(starts), failures=failures)


def rho_centered_select(roots: RootSet, rho, space: ParameterSpace) -> EstimateOutcome:
    """Root nearest to rho in the psi-metric; ties go to the lexicographically smallest psi."""
    if not roots.roots:
        return Delta(DeltaReason.NO_ROOT_FOUND)
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if not space.contains(rho):
        raise DomainError("rho must lie in the parameter space")
    dists = np.array([distance(space, s.theta, rho) for s in roots.solutions])
    best = dists.min()
    tied = [s for s, d in zip(roots.solutions, dists) if d <= best + 1e-12 * max(1.0, best)]
    return min(tied, key=lambda s: tuple(space.psi(s.theta)))


def estimate(g: EstimatingFunction, data: Dataset, cfg: SolverConfig = SolverConfig(), rho=None) -> EstimateOutcome:
    """find_roots followed by rho-centered selection.

    Without ``rho`` the anchor is the centre of the search box in psi-coordinates.
    """
    roots = find_roots(g, data, cfg)
    if rho is None:
        rho = g.domain.anchor()
    return rho_centered_select(roots, rho, g.domain)
