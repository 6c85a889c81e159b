"""Fractional belief propagation in the log domain.

Notation: for edge k = (a, b) and node a,

    rho_k       interpolated edge appearance probability
    S_a         sum of rho over edges at a
    kappa_a     S_a - 1

Messages are stored as ``log_mu[k, side, x]``: side 0 is the message from
b into a (a function of x_a), side 1 the message from a into b.  Beliefs
are

    B_a(x_a)       ~ prod_{b~a} mu_{b->a}(x_a)
    B_ab(x_a, x_b) ~ exp(-E_ab / rho) mu_{b->a}^(kappa_a/rho) mu_{a->b}^(kappa_b/rho)

and a fixed point makes every edge belief marginalize onto its node
beliefs.  Solving that consistency for mu_{b->a} gives the update

    m_ab(x_a)       = log sum_{x_b} exp(-E_ab/rho + kappa_b/rho * log mu_{a->b}(x_b))
    log mu_{b->a}   = rho_k / kappa_a * (sum_{c~a} rho_ac m_ac - m_ab)

A node with kappa_a = 0 is only accepted when it is a leaf (then rho = 1
and the incoming message is m_ab itself).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import logsumexp

from fracbp.model import IsingModel, factor_energy_tables

_DEGENERATE = 1e-12


class FixedPointWarning(RuntimeWarning):
    """Messages passed to a fixed-point-only formula are not at a fixed point."""


@dataclass(frozen=True)
class MessageSet:
    log_mu: np.ndarray  # (E, 2, 2)

    def __post_init__(self):
        arr = np.array(self.log_mu, dtype=float)
        if arr.ndim != 3 or arr.shape[1:] != (2, 2):
            raise ValueError(f"log_mu must have shape (E, 2, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("messages must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "log_mu", arr)

    @classmethod
    def uniform(cls, edge_count: int) -> "MessageSet":
        return cls(np.zeros((edge_count, 2, 2)))

    def normalized(self) -> "MessageSet":
        return MessageSet(self.log_mu - self.log_mu.max(axis=2, keepdims=True))


@dataclass(frozen=True)
class BeliefSet:
    node: np.ndarray  # (N, 2)
    edge: np.ndarray  # (E, 2, 2), edge[k, i, j] for x_a = SPINS[i], x_b = SPINS[j]

    def consistency_error(self, model: IsingModel) -> float:
        """Largest violation of marginalization, normalization or sign."""
        ends = model.graph.edge_array
        err = [
            np.abs(self.edge.sum(axis=2) - self.node[ends[:, 0]]).max(initial=0.0),
            np.abs(self.edge.sum(axis=1) - self.node[ends[:, 1]]).max(initial=0.0),
            np.abs(self.edge.sum(axis=(1, 2)) - 1.0).max(initial=0.0),
            np.abs(self.node.sum(axis=1) - 1.0).max(initial=0.0),
            max(-self.edge.min(initial=0.0), -self.node.min(initial=0.0), 0.0),
        ]
        return float(max(err))


@dataclass(frozen=True)
class FbpOptions:
    max_iters: int = 10_000
    tol: float = 1e-10
    damping: float = 0.5
    schedule: Literal["sequential", "parallel"] = "sequential"
    init: MessageSet | None = None
    consistency_tol: float = 1e-7

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.schedule not in ("sequential", "parallel"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class FbpResult:
    messages: MessageSet
    beliefs: BeliefSet
    free_energy: float
    log_z: float
    converged: bool
    iterations: int
    final_residual: float
    log_z_messages: float
    residual_trace: np.ndarray = field(repr=False)


class _Layout:
    """Index arrays shared by the update, belief and free-energy code."""

    def __init__(self, model: IsingModel, rho_lam: np.ndarray):
        graph = model.graph
        rho = np.asarray(rho_lam, dtype=float)
        if rho.shape != (graph.edge_count,):
            raise ValueError(f"expected {graph.edge_count} edge weights, got shape {rho.shape}")
        if np.any(~np.isfinite(rho)) or np.any(rho <= 0) or np.any(rho > 1):
            raise ValueError("interpolated edge weights must lie in (0, 1]")
        ends = graph.edge_array
        self.E = graph.edge_count
        self.N = graph.node_count
        self.rho = rho
        self.A, self.B = ends[:, 0], ends[:, 1]
        S = np.zeros(self.N)
        np.add.at(S, self.A, rho)
        np.add.at(S, self.B, rho)
        self.S = S
        self.kappa = S - 1.0
        degenerate = np.abs(self.kappa) < _DEGENERATE
        deg = graph.degrees()
        bad = np.flatnonzero(degenerate & (deg != 1))
        if bad.size:
            raise ValueError(
                f"nodes {bad.tolist()} have edge weights summing to 1 with degree > 1; "
                "the message form is undefined there"
            )
        self.degenerate = degenerate
        # arc (k, side): side 0 targets A[k], side 1 targets B[k]
        self.target = np.stack([self.A, self.B], axis=1)
        self.source = np.stack([self.B, self.A], axis=1)
        T = factor_energy_tables(model)
        self.tables = T
        # oriented tables [k, side, x_target, x_source], already divided by rho
        self.scaled = np.stack([T, np.swapaxes(T, 1, 2)], axis=1) / rho[:, None, None, None]
        # weight on the reverse message inside m: kappa_source / rho
        self.src_weight = self.kappa[self.source] / rho[:, None]
        self.tgt_kappa = self.kappa[self.target]
        self.tgt_degenerate = degenerate[self.target]
        self.classes = _color_classes(graph)

    def half_messages(self, nu: np.ndarray) -> np.ndarray:
        """m[k, side, x_target]."""
        rev = nu[:, ::-1, :] * self.src_weight[:, :, None]
        z = -self.scaled + rev[:, :, None, :]
        return np.logaddexp(z[..., 0], z[..., 1])

    def node_sums(self, per_arc: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        vals = per_arc if weights is None else per_arc * weights[:, None, None]
        out = np.zeros((self.N, 2))
        np.add.at(out, self.A, vals[:, 0, :])
        np.add.at(out, self.B, vals[:, 1, :])
        return out

    def update(self, nu: np.ndarray) -> np.ndarray:
        """Synchronous update of every message."""
        m = self.half_messages(nu)
        L = self.node_sums(m, self.rho)
        Lt = L[self.target]
        ratio = np.where(self.tgt_degenerate, 1.0, self.rho[:, None] / np.where(self.tgt_degenerate, 1.0, self.tgt_kappa))
        new = np.where(self.tgt_degenerate[:, :, None], Lt, ratio[:, :, None] * (Lt - m))
        return new - new.max(axis=2, keepdims=True)


def _color_classes(graph) -> list[np.ndarray]:
    """Greedy node coloring; returns per-class boolean masks over nodes."""
    color = [-1] * graph.node_count
    for a in range(graph.node_count):
        used = {color[b] for b in graph.neighbors(a)}
        c = 0
        while c in used:
            c += 1
        color[a] = c
    color = np.array(color)
    return [color == c for c in range(color.max() + 1)] if graph.node_count else []


def _mix(old: np.ndarray, new: np.ndarray, damping: float) -> np.ndarray:
    out = damping * old + (1.0 - damping) * new if damping else new
    return out - out.max(axis=2, keepdims=True)


def _sweep(layout: _Layout, nu: np.ndarray, options: FbpOptions) -> np.ndarray:
    if options.schedule == "parallel":
        return _mix(nu, layout.update(nu), options.damping)
    nu = nu.copy()
    for mask in layout.classes:
        arcs = mask[layout.target]
        fresh = layout.update(nu)
        nu[arcs] = _mix(nu, fresh, options.damping)[arcs]
    return nu


def run_fbp(model: IsingModel, rho_lam: np.ndarray, options: FbpOptions | None = None) -> FbpResult:
    """Iterate the fractional message update to a fixed point.

    Returns the converged iterate, or on hitting ``max_iters`` the iterate
    with the smallest residual seen, flagged ``converged=False``.
    """
    options = options or FbpOptions()
    layout = _Layout(model, rho_lam)
    if options.init is None:
        nu = np.zeros((layout.E, 2, 2))
    else:
        if options.init.log_mu.shape != (layout.E, 2, 2):
            raise ValueError("initial messages do not match the model's edges")
        nu = options.init.normalized().log_mu.copy()
    best_nu, best_res = nu, math.inf
    trace = []
    converged = False
    it = 0
    for it in range(1, options.max_iters + 1):
        new = _sweep(layout, nu, options)
        if not np.all(np.isfinite(new)):
            raise FloatingPointError("non-finite messages; edge weights produce overflowing exponents")
        res = float(np.abs(new - nu).max(initial=0.0))
        trace.append(res)
        nu = new
        if res < best_res:
            best_nu, best_res = nu, res
        if res <= options.tol:
            converged = True
            break
    if not converged:
        nu = best_nu
    messages = MessageSet(nu)
    beliefs = _beliefs(layout, nu)
    f = _free_energy(layout, beliefs)
    return FbpResult(
        messages=messages,
        beliefs=beliefs,
        free_energy=f,
        log_z=-f,
        converged=converged,
        iterations=it,
        final_residual=res if converged else best_res,
        log_z_messages=_log_z_messages(layout, nu),
        residual_trace=np.array(trace),
    )


def _beliefs(layout: _Layout, nu: np.ndarray) -> BeliefSet:
    node = layout.node_sums(nu)
    node = np.exp(node - logsumexp(node, axis=1, keepdims=True))
    edge = _edge_log_weights(layout, nu)
    edge = np.exp(edge - logsumexp(edge, axis=(1, 2), keepdims=True))
    return BeliefSet(node, edge)


def _edge_log_weights(layout: _Layout, nu: np.ndarray) -> np.ndarray:
    wa = layout.kappa[layout.A] / layout.rho
    wb = layout.kappa[layout.B] / layout.rho
    return (
        -layout.scaled[:, 0]
        + (wa[:, None] * nu[:, 0, :])[:, :, None]
        + (wb[:, None] * nu[:, 1, :])[:, None, :]
    )


def beliefs_from_messages(model: IsingModel, rho_lam: np.ndarray, messages: MessageSet) -> BeliefSet:
    return _beliefs(_Layout(model, rho_lam), messages.log_mu)


def _xlogx(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def _free_energy(layout: _Layout, beliefs: BeliefSet) -> float:
    energy = float(np.sum(layout.tables * beliefs.edge))
    edge_neg_entropy = _xlogx(beliefs.edge).sum(axis=(1, 2))
    node_neg_entropy = _xlogx(beliefs.node).sum(axis=1)
    return energy + float(layout.rho @ edge_neg_entropy) - float(layout.kappa @ node_neg_entropy)


def free_energy(model: IsingModel, rho_lam: np.ndarray, beliefs: BeliefSet, consistency_tol: float = 1e-7) -> float:
    """Fractional free energy: mean energy minus fractional entropy."""
    layout = _Layout(model, rho_lam)
    if beliefs.node.shape != (layout.N, 2) or beliefs.edge.shape != (layout.E, 2, 2):
        raise ValueError("belief shapes do not match the model")
    err = beliefs.consistency_error(model)
    if err > consistency_tol:
        raise ValueError(f"beliefs violate local consistency by {err:.3g} (> {consistency_tol:g})")
    return _free_energy(layout, beliefs)


def _log_z_messages(layout: _Layout, nu: np.ndarray) -> float:
    edge_part = logsumexp(_edge_log_weights(layout, nu), axis=(1, 2))
    node_part = logsumexp(layout.node_sums(nu), axis=1)
    return float(layout.rho @ edge_part - layout.kappa @ node_part)


def message_residual(model: IsingModel, rho_lam: np.ndarray, messages: MessageSet) -> float:
    """Sup-norm change of one undamped synchronous update."""
    layout = _Layout(model, rho_lam)
    nu = messages.normalized().log_mu
    return float(np.abs(layout.update(nu) - nu).max(initial=0.0))


def log_z_from_messages(model: IsingModel, rho_lam: np.ndarray, messages: MessageSet, tol: float = 1e-8) -> float:
    """log Z^(lambda) from the edge/node product formula at a fixed point.

    Emits ``FixedPointWarning`` when the messages move by more than ``tol``
    under one more update.
    """
    layout = _Layout(model, rho_lam)
    nu = messages.normalized().log_mu
    res = float(np.abs(layout.update(nu) - nu).max(initial=0.0))
    if res > tol:
        warnings.warn(f"messages are not at a fixed point (residual {res:.3g})", FixedPointWarning, stacklevel=2)
    return _log_z_messages(layout, nu)


def with_init(options: FbpOptions, messages: MessageSet | None) -> FbpOptions:
    return replace(options, init=messages)
