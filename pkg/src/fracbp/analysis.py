"""Lambda sweeps, derivatives of the fractional log-partition function, and lambda*.

Sign convention: the quantities tracked here are log Z^(lambda) = -F^(lambda)
and its derivatives.  log Z^(lambda) falls from the TRW value at lambda = 0
to the BP value at lambda = 1, with slope

    d log Z^(lambda) / d lambda = -sum_ab (1 - rho_ab) I_ab  <= 0

where I_ab is the mutual information of the converged edge belief.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from fracbp.fbp import BeliefSet, FbpOptions, FbpResult, MessageSet, run_fbp
from fracbp.model import IsingModel
from fracbp.trw import EdgeAppearance, rho_lambda

# damping levels tried in turn when a solve does not converge
DAMPING_LADDER = (0.5, 0.8, 0.95)


def mutual_informations(beliefs: BeliefSet, model: IsingModel) -> np.ndarray:
    """Per-edge mutual information, clamped at zero against rounding."""
    ends = model.graph.edge_array
    with np.errstate(divide="ignore", invalid="ignore"):
        def nlogn(p):
            return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)

        pair = nlogn(beliefs.edge).sum(axis=(1, 2))
        node = nlogn(beliefs.node).sum(axis=1)
    info = pair - node[ends[:, 0]] - node[ends[:, 1]]
    return np.where((info < 0) & (info > -1e-12), 0.0, info)


def mutual_information(beliefs: BeliefSet, model: IsingModel, edge: int) -> float:
    return float(mutual_informations(beliefs, model)[edge])


def dlogz_dlambda(beliefs: BeliefSet, model: IsingModel, rho: EdgeAppearance | np.ndarray) -> float:
    """-sum_ab (1 - rho_ab) I_ab, with the lambda = 0 weights rho."""
    base = rho.rho if isinstance(rho, EdgeAppearance) else np.asarray(rho, dtype=float)
    return float(-((1.0 - base) @ mutual_informations(beliefs, model)))


def solve(model: IsingModel, rho_lam: np.ndarray, options: FbpOptions | None = None,
          init: MessageSet | None = None) -> FbpResult:
    """run_fbp, retried with heavier damping if it fails to converge."""
    options = options or FbpOptions()
    result = None
    for damping in (options.damping,) + tuple(d for d in DAMPING_LADDER if d > options.damping):
        result = run_fbp(model, rho_lam, replace(options, damping=damping, init=init))
        if result.converged:
            return result
    return result


@dataclass(frozen=True)
class LambdaSweep:
    lambdas: np.ndarray
    results: list[FbpResult] = field(repr=False)
    log_z: np.ndarray
    mutual_info: np.ndarray  # (len(lambdas), E)
    dlogz: np.ndarray
    d2logz: np.ndarray
    converged: np.ndarray
    mode: Literal["warm", "cold"]
    lambda_star: float | None = None
    crossing_found: bool = False

    @property
    def free_energy(self) -> np.ndarray:
        return -self.log_z

    @property
    def all_converged(self) -> bool:
        return bool(self.converged.all())

    def lambda_bar(self) -> float:
        """Grid point after the largest jump in log Z^(lambda); descriptive only."""
        if len(self.lambdas) < 2:
            return float(self.lambdas[0])
        return float(self.lambdas[1 + int(np.argmax(np.abs(np.diff(self.log_z))))])

    def to_csv(self, path: str | Path) -> None:
        write_sweep_csv(self, path)


def lambda_grid(start: float = 0.0, stop: float = 1.0, step: float = 0.05) -> np.ndarray:
    if not (0.0 <= start <= stop <= 1.0) or step <= 0:
        raise ValueError("grid must satisfy 0 <= start <= stop <= 1 with a positive step")
    count = int(round((stop - start) / step)) + 1
    grid = np.round(start + step * np.arange(count), 12)
    return grid[grid <= stop + 1e-12]


def sweep(model: IsingModel, rho: EdgeAppearance, grid: Sequence[float], options: FbpOptions | None = None,
          warm_start: bool = True, log_z_exact: float | None = None) -> LambdaSweep:
    """Solve at every grid point, warm-starting from the previous point by default.

    If ``log_z_exact`` is given, lambda* is read off the grid by linear
    interpolation of log Z^(lambda) - log Z.
    """
    lambdas = np.asarray(grid, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0 or np.any(np.diff(lambdas) <= 0):
        raise ValueError("grid must be a non-empty strictly ascending sequence")
    if lambdas[0] < 0 or lambdas[-1] > 1:
        raise ValueError("grid must lie in [0, 1]")
    results = []
    init = None
    for lam in lambdas:
        res = solve(model, rho_lambda(rho, float(lam)), options, init if warm_start else None)
        results.append(res)
        init = res.messages
    log_z = np.array([r.log_z for r in results])
    info = np.array([mutual_informations(r.beliefs, model) for r in results])
    dlogz = -(info @ (1.0 - rho.rho))
    d2logz = np.gradient(dlogz, lambdas) if lambdas.size > 1 else np.zeros(1)
    lam_star, found = None, False
    if log_z_exact is not None:
        lam_star = _grid_crossing(lambdas, log_z - log_z_exact)
        found = lam_star is not None
    return LambdaSweep(
        lambdas=lambdas,
        results=results,
        log_z=log_z,
        mutual_info=info,
        dlogz=dlogz,
        d2logz=d2logz,
        converged=np.array([r.converged for r in results]),
        mode="warm" if warm_start else "cold",
        lambda_star=lam_star,
        crossing_found=found,
    )


def _grid_crossing(lambdas: np.ndarray, g: np.ndarray) -> float | None:
    if g[0] == 0:
        return float(lambdas[0])
    for i in range(len(g) - 1):
        if g[i] >= 0 >= g[i + 1] and g[i] != g[i + 1]:
            t = g[i] / (g[i] - g[i + 1])
            return float(lambdas[i] + t * (lambdas[i + 1] - lambdas[i]))
    return None


@dataclass(frozen=True)
class LambdaStar:
    """Outcome of the lambda* search.

    ``status`` is ``found``, ``no-crossing`` (log Z^(lambda) - log Z keeps
    one sign on [0, 1]) or ``not-converged`` (some probe failed to solve).
    """

    status: Literal["found", "no-crossing", "not-converged"]
    lambda_star: float | None
    gap: float | None  # log Z^(lambda*) - log Z
    gap_at_0: float
    gap_at_1: float
    interval: tuple[float, float] | None = None
    probes: int = 0

    @property
    def found(self) -> bool:
        return self.status == "found"


def find_lambda_star(model: IsingModel, rho: EdgeAppearance, log_z_exact: float, tol: float = 1e-7,
                     tol_lambda: float = 1e-10, options: FbpOptions | None = None) -> LambdaStar:
    """Bisection for the smallest lambda with |log Z^(lambda) - log Z| <= tol.

    Relies on log Z^(lambda) being non-increasing.  The returned ``interval``
    is the stretch of lambda over which the gap stays within ``tol``; on
    flat curves it can be wide and lambda* is its left end.
    """
    cache: dict[float, FbpResult] = {}

    def gap(lam: float) -> float:
        if lam not in cache:
            near = min(cache, key=lambda x: abs(x - lam)) if cache else None
            init = cache[near].messages if near is not None else None
            cache[lam] = solve(model, rho_lambda(rho, lam), options, init)
        return cache[lam].log_z - log_z_exact

    def failed() -> bool:
        return not all(r.converged for r in cache.values())

    g0, g1 = gap(0.0), gap(1.0)
    if failed():
        return LambdaStar("not-converged", None, None, g0, g1, probes=len(cache))
    if g0 < -tol or g1 > tol:
        return LambdaStar("no-crossing", None, None, g0, g1, probes=len(cache))

    def bisect(lo: float, hi: float, go_right) -> float:
        while hi - lo > tol_lambda:
            mid = 0.5 * (lo + hi)
            if go_right(gap(mid)):
                lo = mid
            else:
                hi = mid
        return lo, hi

    if g0 <= tol:
        left = 0.0
    else:
        _, left = bisect(0.0, 1.0, lambda g: g > tol)
    if g1 >= -tol:
        right = 1.0
    else:
        right, _ = bisect(left, 1.0, lambda g: g >= -tol)
    if failed():
        return LambdaStar("not-converged", None, None, g0, g1, probes=len(cache))
    g_star = gap(left)
    return LambdaStar("found", left, g_star, g0, g1, (left, max(left, right)), len(cache))


def finite_difference_slope(model: IsingModel, rho: EdgeAppearance, lam: float, step: float = 1e-3,
                            options: FbpOptions | None = None, init: MessageSet | None = None) -> float:
    """Central difference of log Z^(lambda); one-sided at the ends of [0, 1]."""
    lo, hi = max(0.0, lam - step), min(1.0, lam + step)
    r_lo = solve(model, rho_lambda(rho, lo), options, init)
    r_hi = solve(model, rho_lambda(rho, hi), options, r_lo.messages)
    if not (r_lo.converged and r_hi.converged):
        return math.nan
    return (r_hi.log_z - r_lo.log_z) / (hi - lo)


SWEEP_COLUMNS = ["lambda", "free_energy", "log_z", "dlogz_dlambda", "d2logz_dlambda2", "converged", "iterations"]


def write_sweep_csv(result: LambdaSweep, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# mode: {result.mode}\n")
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for i, lam in enumerate(result.lambdas):
            writer.writerow([
                repr(float(lam)), repr(float(-result.log_z[i])), repr(float(result.log_z[i])),
                repr(float(result.dlogz[i])), repr(float(result.d2logz[i])),
                int(result.converged[i]), result.results[i].iterations,
            ])
