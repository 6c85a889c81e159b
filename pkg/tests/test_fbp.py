import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracbp.fbp import (
    BeliefSet,
    FbpOptions,
    FixedPointWarning,
    MessageSet,
    beliefs_from_messages,
    free_energy,
    log_z_from_messages,
    message_residual,
    run_fbp,
    with_init,
)
from fracbp.model import IsingModel, build_complete, build_cycle, build_path, uniform_model
from fracbp.oracle import brute_force
from fracbp.trw import rho_lambda

C3 = build_complete(3)


@pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
def test_free_triangle(lam):
    m = uniform_model(C3)
    rho = rho_lambda(np.full(3, 2 / 3), lam)
    res = run_fbp(m, rho)
    assert res.converged
    assert np.allclose(res.beliefs.node, 0.5, atol=1e-14)
    assert np.allclose(res.beliefs.edge, 0.25, atol=1e-14)
    assert res.log_z == pytest.approx(3 * math.log(2), abs=1e-13)
    assert res.log_z_messages == pytest.approx(3 * math.log(2), abs=1e-13)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_free_energy_of_uniform_beliefs(lam):
    m = uniform_model(C3)
    beliefs = beliefs_from_messages(m, rho_lambda(np.full(3, 2 / 3), lam), MessageSet.uniform(3))
    assert np.allclose(beliefs.edge, 0.25) and np.allclose(beliefs.node, 0.5)
    assert free_energy(m, rho_lambda(np.full(3, 2 / 3), lam), beliefs) == pytest.approx(-3 * math.log(2), abs=1e-14)


@pytest.mark.parametrize("J", [0.7, -1.3])
def test_two_spins_exact(J):
    m = IsingModel(build_path(2), [J], [0.0, 0.0])
    res = run_fbp(m, np.ones(1))
    assert res.log_z == pytest.approx(math.log(4 * math.cosh(J)), abs=1e-13)


def test_tree_is_exact():
    m = IsingModel(build_path(4), [0.5, -0.8, 1.1], [0.3, -0.2, 0.6, 0.1])
    ex = brute_force(m)
    res = run_fbp(m, np.ones(3))
    assert res.converged
    assert np.allclose(res.beliefs.node, ex.node_marginals, atol=1e-10)
    assert np.allclose(res.beliefs.edge, ex.edge_marginals, atol=1e-10)
    assert log_z_from_messages(m, np.ones(3), res.messages) == pytest.approx(ex.log_z, abs=1e-8)
    assert res.log_z == pytest.approx(ex.log_z, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 7), data=st.data())
def test_trees_are_exact_property(n, data):
    floats = st.floats(-1.5, 1.5, allow_nan=False)
    J = data.draw(st.lists(floats, min_size=n - 1, max_size=n - 1))
    h = data.draw(st.lists(floats, min_size=n, max_size=n))
    m = IsingModel(build_path(n), J, h)
    res = run_fbp(m, np.ones(n - 1))
    assert res.converged
    assert res.log_z_messages == pytest.approx(brute_force(m).log_z, abs=1e-8)


def test_sandwich_on_grid(grid3, grid3_rho, grid3_exact):
    upper = run_fbp(grid3, rho_lambda(grid3_rho, 0.0))
    lower = run_fbp(grid3, rho_lambda(grid3_rho, 1.0))
    assert upper.converged and lower.converged
    assert lower.log_z <= grid3_exact.log_z <= upper.log_z


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_converged_beliefs_are_consistent(grid3, grid3_rho, lam):
    res = run_fbp(grid3, rho_lambda(grid3_rho, lam))
    assert res.beliefs.consistency_error(grid3) < 1e-9
    assert np.allclose(res.beliefs.edge.sum(axis=(1, 2)), 1.0, atol=1e-15)
    assert np.all(res.beliefs.edge >= 0)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_two_free_energy_routes_agree(grid3, grid3_rho, lam):
    rho = rho_lambda(grid3_rho, lam)
    res = run_fbp(grid3, rho)
    assert -res.free_energy == pytest.approx(res.log_z_messages, abs=1e-8)
    assert log_z_from_messages(grid3, rho, res.messages) == pytest.approx(res.log_z_messages, abs=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.5])
def test_fixed_point_minimizes_free_energy_locally(grid3, grid3_rho, lam, rng):
    rho = rho_lambda(grid3_rho, lam)
    res = run_fbp(grid3, rho)
    base = res.free_energy
    twist = np.array([[1.0, -1.0], [-1.0, 1.0]])
    for _ in range(20):
        eps = rng.uniform(-1, 1, grid3.edge_count) * 0.2 * res.beliefs.edge.min(axis=(1, 2))
        edge = res.beliefs.edge + eps[:, None, None] * twist
        probe = BeliefSet(res.beliefs.node, edge)
        assert free_energy(grid3, rho, probe) >= base - 1e-12


def test_free_energy_rejects_inconsistent_beliefs(grid3, grid3_rho):
    res = run_fbp(grid3, rho_lambda(grid3_rho, 0.5))
    skewed = res.beliefs.edge.copy()
    skewed[0] = [[0.7, 0.1], [0.1, 0.1]]
    with pytest.raises(ValueError, match="consistency"):
        free_energy(grid3, rho_lambda(grid3_rho, 0.5), BeliefSet(res.beliefs.node, skewed))


def test_schedules_agree(grid3, grid3_rho):
    rho = rho_lambda(grid3_rho, 0.4)
    seq = run_fbp(grid3, rho, FbpOptions(schedule="sequential"))
    par = run_fbp(grid3, rho, FbpOptions(schedule="parallel"))
    assert seq.converged and par.converged
    assert seq.log_z_messages == pytest.approx(par.log_z_messages, abs=1e-9)


def test_warm_start_cuts_iterations(grid3, grid3_rho):
    cold = run_fbp(grid3, rho_lambda(grid3_rho, 0.55))
    prev = run_fbp(grid3, rho_lambda(grid3_rho, 0.5))
    warm = run_fbp(grid3, rho_lambda(grid3_rho, 0.55), with_init(FbpOptions(), prev.messages))
    assert warm.iterations < cold.iterations
    assert warm.log_z_messages == pytest.approx(cold.log_z_messages, abs=1e-9)


def test_message_gauge_does_not_change_log_z(grid3, grid3_rho, rng):
    rho = rho_lambda(grid3_rho, 0.3)
    res = run_fbp(grid3, rho)
    shifted = MessageSet(res.messages.log_mu + rng.normal(size=(grid3.edge_count, 2, 1)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert log_z_from_messages(grid3, rho, shifted) == pytest.approx(res.log_z_messages, abs=1e-12)


def test_warns_away_from_fixed_point(grid3, grid3_rho):
    with pytest.warns(FixedPointWarning):
        log_z_from_messages(grid3, rho_lambda(grid3_rho, 0.3), MessageSet.uniform(grid3.edge_count))
    assert message_residual(grid3, rho_lambda(grid3_rho, 0.3), MessageSet.uniform(grid3.edge_count)) > 0


def test_not_converged_is_flagged(grid3, grid3_rho):
    res = run_fbp(grid3, rho_lambda(grid3_rho, 0.5), FbpOptions(max_iters=3))
    assert not res.converged
    assert res.iterations == 3
    assert res.final_residual > 1e-10


def test_degenerate_interior_node_rejected():
    with pytest.raises(ValueError, match="summing to 1"):
        run_fbp(uniform_model(build_cycle(4), 0.5), np.full(4, 0.5))


@pytest.mark.parametrize("bad", [
    dict(max_iters=0), dict(tol=0.0), dict(damping=1.0), dict(schedule="random"),
])
def test_options_validation(bad):
    with pytest.raises(ValueError):
        FbpOptions(**bad)


def test_message_validation():
    with pytest.raises(ValueError):
        MessageSet(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        MessageSet(np.full((1, 2, 2), np.inf))


def test_rho_validation(grid3):
    with pytest.raises(ValueError):
        run_fbp(grid3, np.full(grid3.edge_count, 1.5))
    with pytest.raises(ValueError):
        run_fbp(grid3, np.ones(3))
