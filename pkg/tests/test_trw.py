from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracbp.model import Graph, build_complete, build_cycle, build_grid, build_path
from fracbp.trw import (
    EdgeAppearance,
    SpanningTreeSet,
    build_edge_uniform_certificate,
    dumps_certificate,
    edge_uniform_rho,
    loads_certificate,
    read_certificate,
    rho_lambda,
    validate_tree_set,
    write_certificate,
)

K4 = build_complete(4)
K4_MINUS = K4.without_edges([(0, 1)])
C4_FROM_K4 = K4.without_edges([(0, 1), (2, 3)])


@pytest.mark.parametrize("graph, value", [(K4, 0.5), (K4_MINUS, 0.6), (build_cycle(4), 0.75)])
def test_edge_uniform_values(graph, value):
    assert np.all(edge_uniform_rho(graph).rho == value)


def test_edge_uniform_sums_to_n_minus_1():
    g = build_grid(5)
    assert edge_uniform_rho(g).rho.sum() == pytest.approx(g.node_count - 1)


def test_edge_uniform_rejects_leaves_and_disconnected():
    with pytest.raises(ValueError, match="degree"):
        edge_uniform_rho(build_path(4))
    with pytest.raises(ValueError, match="disconnected"):
        edge_uniform_rho(Graph(6, ((0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5))))


@pytest.mark.parametrize("lam, expected", [(0.0, 0.5), (1.0, 1.0), (0.5, 0.75)])
def test_rho_lambda(lam, expected):
    assert rho_lambda(np.array([0.5]), lam)[0] == expected


def test_rho_lambda_domain():
    with pytest.raises(ValueError):
        rho_lambda(np.array([0.5]), 1.5)


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(0, 1), rho=st.floats(0.01, 1))
def test_rho_lambda_stays_between_rho_and_one(lam, rho):
    value = rho_lambda(np.array([rho]), lam)[0]
    assert rho - 1e-15 <= value <= 1.0


@pytest.mark.parametrize("graph, trees, count", [(K4, 6, 3), (K4_MINUS, 5, 3), (C4_FROM_K4, 4, 3)])
def test_small_certificates(graph, trees, count):
    order = None if graph is K4 else sorted(set(K4.edges) - set(graph.edges))
    cert = build_edge_uniform_certificate(graph, order)
    assert len(cert.trees) == trees
    assert set(cert.appearance_counts()) == {count}
    assert validate_tree_set(graph, cert) == []
    assert EdgeAppearance.from_certificate(cert).rho == pytest.approx(edge_uniform_rho(graph).rho, abs=0)


@pytest.mark.parametrize("n", range(3, 10))
def test_complete_graph_certificates(n):
    g = build_complete(n)
    cert = build_edge_uniform_certificate(g)
    assert len(cert.trees) == g.edge_count
    assert set(cert.appearance_counts()) == {n - 1}
    assert set(cert.induced_rho()) == {Fraction(n - 1, g.edge_count)}


@pytest.mark.parametrize("n", [2, 3])
def test_grid_certificates(n):
    g = build_grid(n)
    cert = build_edge_uniform_certificate(g)
    assert validate_tree_set(g, cert) == []
    assert set(cert.induced_rho()) == {Fraction(g.node_count - 1, g.edge_count)}


def test_elimination_order_must_reach_graph():
    with pytest.raises(ValueError):
        build_edge_uniform_certificate(K4_MINUS, [(2, 3)])


def test_unbalanced_target_is_rejected():
    # node 0 keeps one edge, which every spanning tree must use, so its
    # appearance probability is 1 rather than the uniform 4/7
    g = build_complete(5).without_edges([(0, 1), (0, 2), (0, 3)])
    with pytest.raises((ValueError, RuntimeError)):
        build_edge_uniform_certificate(g)


def test_validator_flags_non_spanning_tree():
    cert = build_edge_uniform_certificate(K4)
    broken = SpanningTreeSet(K4, (cert.trees[0][:-1],) + cert.trees[1:], cert.weights)
    assert any("not spanning" in p for p in validate_tree_set(K4, broken))


def test_validator_flags_weights():
    cert = build_edge_uniform_certificate(K4)
    light = SpanningTreeSet(K4, cert.trees, tuple(Fraction(3, 20) for _ in cert.trees))
    assert any("weights not normalized" in p for p in validate_tree_set(K4, light))


def test_edge_appearance_checks():
    with pytest.raises(ValueError):
        EdgeAppearance(np.array([0.0, 0.5]))
    with pytest.raises(ValueError):
        EdgeAppearance(np.array([1.2]))
    cert = build_edge_uniform_certificate(K4)
    with pytest.raises(ValueError):
        EdgeAppearance(np.full(6, 0.4), cert)


def test_certificate_round_trip(tmp_path):
    cert = build_edge_uniform_certificate(build_complete(6))
    assert loads_certificate(dumps_certificate(cert)) == cert
    path = tmp_path / "k6.cert"
    write_certificate(cert, path)
    assert read_certificate(path) == cert


def test_certificate_parse_errors():
    with pytest.raises(ValueError):
        loads_certificate("not a certificate")


def test_degree_two_is_not_sufficient_for_uniform_weights():
    # K5 plus a sixth node joined to two of its vertices: every spanning tree
    # uses at least one of node 5's two edges, so their rho must sum to at
    # least 1, but the uniform value gives 2 * 5/12 < 1
    edges = tuple(build_complete(5).edges) + ((0, 5), (1, 5))
    g = Graph(6, edges)
    assert g.degrees().min() == 2
    rho = edge_uniform_rho(g).rho
    assert rho[g.edge_id(0, 5)] + rho[g.edge_id(1, 5)] < 1
    with pytest.raises(ValueError):
        build_edge_uniform_certificate(g)
