"""The multiplicative correction linking Z^(lambda) to Z.

For any fractional fixed point with beliefs B,

    Z = Z^(lambda) * C^(lambda),
    C^(lambda) = sum_x prod_ab B_ab^rho_ab / prod_a B_a^(S_a - 1)
               = E_{x ~ prod_a B_a} [ prod_ab B_ab^rho_ab / prod_a B_a^S_a ],

with S_a the sum of rho^(lambda) over edges at a.  The sum form is computed
exactly on small graphs; the expectation form is estimated by sampling
each spin independently from its node belief.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fracbp.fbp import BeliefSet
from fracbp.model import IsingModel
from fracbp.oracle import ENUMERATION_CAP, log_sum_product
from fracbp.rng import make_rng


def _check_rho(model: IsingModel, rho_lam) -> np.ndarray:
    rho = np.asarray(rho_lam, dtype=float)
    if rho.shape != (model.edge_count,):
        raise ValueError(f"rho_lam must have shape ({model.edge_count},), got {rho.shape}")
    return rho


def node_strengths(model: IsingModel, rho_lam) -> np.ndarray:
    """S_a = sum of rho over the edges at each node."""
    ends = model.graph.edge_array
    rho = _check_rho(model, rho_lam)
    return np.bincount(ends.ravel(), weights=np.repeat(rho, 2), minlength=model.node_count)


def _log_beliefs(beliefs: BeliefSet) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        return np.log(beliefs.edge), np.log(beliefs.node)


def log_weights(model: IsingModel, rho_lam, beliefs: BeliefSet, bits: np.ndarray) -> np.ndarray:
    """Log of the sampling weight for a batch of states given as (M, N) 0/1 indices.

    Evaluated edge by edge as rho_ab * log(B_ab / (B_a B_b)), which sums to
    the same value because S_a collects exactly the rho at node a.  Raises
    ValueError if a state lands on a zero node belief.
    """
    rho = _check_rho(model, rho_lam)
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
    ends = model.graph.edge_array
    log_edge, log_node = _log_beliefs(beliefs)
    node_terms = log_node[np.arange(model.node_count), bits]
    if np.isneginf(node_terms).any():
        raise ValueError("state has zero probability under the node beliefs (degenerate marginal)")
    xa, xb = bits[:, ends[:, 0]], bits[:, ends[:, 1]]
    pointwise = log_edge[np.arange(model.edge_count), xa, xb] - node_terms[:, ends[:, 0]] - node_terms[:, ends[:, 1]]
    with np.errstate(invalid="ignore"):
        return np.where(np.isneginf(pointwise), -np.inf, pointwise * rho).sum(axis=1)


def log_weight(model: IsingModel, rho_lam, beliefs: BeliefSet, state) -> float:
    """Log weight of one state, given as spins in {-1, +1}."""
    x = np.asarray(state, dtype=float)
    if x.shape != (model.node_count,) or not np.all(np.isin(x, (-1.0, 1.0))):
        raise ValueError("state must be a vector of +-1 spins, one per node")
    return float(log_weights(model, rho_lam, beliefs, (x > 0).astype(np.int64)[None, :])[0])


def exact_correction(model: IsingModel, rho_lam, beliefs: BeliefSet, cap: int = ENUMERATION_CAP) -> float:
    """log C^(lambda) by exact summation.

    Enumerates up to ``cap`` nodes and uses variable elimination beyond it,
    which is exact as well but only tractable on narrow graphs.
    """
    rho = _check_rho(model, rho_lam)
    kappa = node_strengths(model, rho) - 1.0
    log_edge, log_node = _log_beliefs(beliefs)
    if np.isneginf(log_node[kappa != 0]).any():
        raise ValueError("zero node belief at a node with S_a != 1")
    with np.errstate(invalid="ignore"):
        edge_table = np.where(np.isneginf(log_edge), -np.inf, rho[:, None, None] * log_edge)
        node_table = np.where(kappa[:, None] == 0, 0.0, -kappa[:, None] * log_node)
    return log_sum_product(model.graph, edge_table, node_table, cap)


@dataclass(frozen=True)
class CorrectionEstimate:
    """Monte Carlo estimate of log C^(lambda).

    ``trace`` holds one ``(samples, running log mean, standard error)`` row
    per batch.  ``relative_variance`` is Var(w) / E[w]^2 of the weights,
    so roughly ``relative_variance / eps^2`` samples give a standard error
    of eps on the log scale.
    """

    log_mean: float
    std_error_log: float
    samples: int
    relative_variance: float
    trace: list[tuple[int, float, float]] = field(repr=False)
    diagnostic: str | None = None

    def within(self, reference: float, sigmas: float = 3.0) -> bool:
        return abs(self.log_mean - reference) <= sigmas * self.std_error_log

    def write_trace(self, path: str | Path) -> None:
        write_trace_csv(self.trace, path)


def write_trace_csv(trace, path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(["samples", "running_log_mean", "std_error"])
        for n, lm, se in trace:
            writer.writerow([n, repr(float(lm)), repr(float(se))])


@dataclass
class _Moments:
    """Count, shift, mean and centered sum of squares of exp(lw - shift)."""

    n: int = 0
    shift: float = -math.inf
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, lw: np.ndarray) -> "_Moments":
        top = float(lw.max())
        if top == -math.inf:
            return cls(n=lw.size)
        w = np.exp(lw - top)
        mean = float(w.mean())
        return cls(lw.size, top, mean, float(((w - mean) ** 2).sum()))

    def rescaled(self, shift: float) -> tuple[float, float]:
        if self.shift == -math.inf:
            return 0.0, 0.0
        s = math.exp(self.shift - shift)
        return self.mean * s, self.m2 * s * s

    def merge(self, other: "_Moments") -> "_Moments":
        shift = max(self.shift, other.shift)
        mean_a, m2_a = self.rescaled(shift)
        mean_b, m2_b = other.rescaled(shift)
        n = self.n + other.n
        delta = mean_b - mean_a
        mean = mean_a + delta * other.n / n
        m2 = m2_a + m2_b + delta * delta * self.n * other.n / n
        return _Moments(n, shift, mean, m2)

    def summary(self) -> tuple[float, float, float]:
        """(log mean, delta-method standard error of the log mean, relative variance)."""
        if self.mean <= 0:
            return -math.inf, math.inf, math.inf
        rel_var = (self.m2 / (self.n - 1)) / self.mean**2 if self.n > 1 else math.inf
        return self.shift + math.log(self.mean), math.sqrt(rel_var / self.n), rel_var


def _batch_moments(model, rho, beliefs, seed: int, index: int, size: int) -> _Moments:
    rng = make_rng(seed, index)
    up = beliefs.node[:, 1]
    bits = (rng.random((size, model.node_count)) < up).astype(np.int64)
    return _Moments.of(log_weights(model, rho, beliefs, bits))


def estimate_correction(model: IsingModel, rho_lam, beliefs: BeliefSet, num_samples: int, seed: int,
                        batch_size: int = 10_000, jobs: int = 1) -> CorrectionEstimate:
    """Sample-mean estimate of C^(lambda) under the product of node beliefs.

    Batch ``i`` draws from the stream ``make_rng(seed, i)`` and batches are
    merged in index order, so the result does not depend on ``jobs``.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be at least 1")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    rho = _check_rho(model, rho_lam)
    sizes = [batch_size] * (num_samples // batch_size)
    if num_samples % batch_size:
        sizes.append(num_samples % batch_size)

    def run(i):
        return _batch_moments(model, rho, beliefs, seed, i, sizes[i])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(run, range(len(sizes))))
    else:
        batches = [run(i) for i in range(len(sizes))]

    total = _Moments()
    trace = []
    for batch in batches:
        total = total.merge(batch)
        log_mean, se, _ = total.summary()
        trace.append((total.n, log_mean, se))
    log_mean, se, rel_var = total.summary()
    diagnostic = None
    if log_mean == -math.inf:
        diagnostic = "every sampled weight was zero; log of the mean is -inf"
    return CorrectionEstimate(log_mean, se, total.n, rel_var, trace, diagnostic)


def scaling_exponent(sizes, relative_variances) -> float:
    """Least-squares slope of log(relative variance) against log(node count)."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(relative_variances, dtype=float))
    if x.size < 2 or not np.all(np.isfinite(y)):
        return math.nan
    return float(np.polyfit(x, y, 1)[0])
