import math

import numpy as np
import pytest

from secform.errors import DegenerateState
from secform.graph import (FormationGraph, FormationState, accumulate_commands,
                           control_law_exact, control_law_quantized, incidence,
                           is_infinitesimally_rigid, is_minimally_rigid, numerical_rank,
                           quantized_edge_terms, rigidity_matrix)
from secform.quantizer import MulqConfig, quantize
from secform.stability import lyapunov

Q4 = MulqConfig(4)


def triangle(positions=((0, 0), (1, 0), (0, 1))):
    g = FormationGraph(3, [(0, 1), (1, 2), (0, 2)], [1.0, np.sqrt(2), 1.0])
    return FormationState(np.array(positions, float), g)


def test_incidence_square(square):
    B = incidence(square.graph)
    expected = np.array([
        [1, 0, 1, 0, 1],
        [-1, 1, 0, 0, 0],
        [0, -1, -1, 1, 0],
        [0, 0, 0, -1, -1],
    ], dtype=float)
    assert np.array_equal(B, expected)
    assert np.array_equal(B.sum(axis=0), np.zeros(5))
    assert is_minimally_rigid(square.graph)


@pytest.mark.parametrize("edges,dist", [
    ([(0, 0)], [1.0]),
    ([(0, 1), (1, 0)], [1.0, 1.0]),
    ([(0, 1)], [0.0]),
    ([(0, 1)], [1.0, 2.0]),
    ([(0, 5)], [1.0]),
])
def test_invalid_graphs(edges, dist):
    with pytest.raises(ValueError):
        FormationGraph(2, edges, dist)


def test_disconnected_graph_rejected():
    with pytest.raises(ValueError, match="connected"):
        FormationGraph(4, [(0, 1), (2, 3)], [1, 1])


def test_state_quantities(square):
    st = FormationState(square.target_positions, square.graph)
    assert np.allclose(st.e, 0, atol=1e-15)
    assert st.z.shape == (5, 2)
    assert np.array_equal(st.z[2], [-1.0, -1.0])
    moved = st.moved(st.positions + 1.0)
    assert np.array_equal(moved.z, st.z)


def test_rigidity_matrix_equals_Dz_T_Bbar_T(square, rng):
    st = FormationState(square.target_positions + rng.normal(0, 0.1, (4, 2)), square.graph)
    z = st.z
    Dz = np.zeros((10, 5))
    for k in range(5):
        Dz[2 * k:2 * k + 2, k] = z[k]
    assert np.allclose(rigidity_matrix(st), Dz.T @ square.graph.incidence_bar.T)


def test_square_infinitesimally_rigid(square):
    st = FormationState(square.target_positions, square.graph)
    assert numerical_rank(rigidity_matrix(st)) == 5
    assert is_infinitesimally_rigid(st)


def test_collinear_not_rigid():
    assert not is_infinitesimally_rigid(triangle(((0, 0), (1, 0), (2, 0))))
    assert is_infinitesimally_rigid(triangle())


def test_coincident_positions_degenerate():
    with pytest.raises(DegenerateState):
        is_infinitesimally_rigid(triangle(((1, 1), (1, 1), (1, 1))))


def test_equilibrium_has_zero_control(square):
    st = FormationState(square.target_positions, square.graph)
    assert np.allclose(control_law_exact(st), 0, atol=1e-14)


def test_exact_law_is_negative_gradient(square, rng):
    for _ in range(5):
        p = square.target_positions + rng.uniform(-0.3, 0.3, (4, 2))
        st = FormationState(p, square.graph)
        R = rigidity_matrix(st)
        assert np.allclose(control_law_exact(st).ravel(), -R.T @ st.e)
        h = 1e-6
        grad = np.zeros(8)
        for i in range(8):
            dp = np.zeros(8)
            dp[i] = h
            grad[i] = (lyapunov(square.graph.edge_errors((p.ravel() + dp).reshape(4, 2)))
                       - lyapunov(square.graph.edge_errors((p.ravel() - dp).reshape(4, 2)))) / (2 * h)
        assert np.allclose(control_law_exact(st).ravel(), -grad, rtol=1e-6, atol=1e-9)


def test_controls_preserve_centroid(square, rng):
    st = FormationState(square.target_positions + rng.uniform(-0.3, 0.3, (4, 2)), square.graph)
    assert np.allclose(control_law_exact(st).sum(axis=0), 0, atol=1e-14)
    # quantized law is a signed sum of identical per-edge terms, so it cancels exactly
    assert np.allclose(control_law_quantized(st, Q4, Q4).sum(axis=0), 0, atol=1e-14)


def test_quantized_terms_elementwise(square, rng):
    st = FormationState(square.target_positions + rng.uniform(-0.3, 0.3, (4, 2)), square.graph)
    T = quantized_edge_terms(st, Q4, MulqConfig(3))
    z, e = st.z, st.e
    for k in range(5):
        for j in range(2):
            # exact product of two sigma-digit numbers rounded once
            assert T[k, j] == pytest.approx(quantize(z[k, j], Q4) * quantize(e[k], MulqConfig(3)), rel=1e-15)


def test_quantized_law_approaches_exact(square, rng):
    st = FormationState(square.target_positions + rng.uniform(-0.3, 0.3, (4, 2)), square.graph)
    ue = control_law_exact(st)
    errs = [np.max(np.abs(control_law_quantized(st, MulqConfig(s), MulqConfig(s)) - ue))
            for s in (2, 4, 8, 12)]
    assert errs == sorted(errs, reverse=True)
    assert errs[-1] < 1e-10


def test_accumulate_commands_order():
    g = FormationGraph(3, [(0, 1), (1, 2)], [1, 1])
    terms = np.array([[1.0, 2.0], [10.0, 20.0]])
    assert np.array_equal(accumulate_commands(g, terms), [[-1, -2], [-9, -18], [10, 20]])


def test_single_edge_examples():
    g = FormationGraph(2, [(0, 1)], [1.0])
    assert np.array_equal(g.incidence, [[1.0], [-1.0]])
    st = FormationState([[1, 0], [0, 0]], g)
    assert np.array_equal(rigidity_matrix(st), [[1.0, 0.0, -1.0, 0.0]])
    # agents sqrt(2) apart with d = 1: e = 1, and they attract
    st = FormationState([[math.sqrt(2), 0], [0, 0]], g)
    assert st.e[0] == pytest.approx(1.0)
    u = control_law_exact(st)
    assert u[0] == pytest.approx([-math.sqrt(2), 0]) and u[1] == pytest.approx([math.sqrt(2), 0])


def test_rigidity_matrix_annihilates_translations(square, rng):
    st = FormationState(rng.normal(size=(4, 2)), square.graph)
    for v in ([1.0, 0.0], [0.0, 1.0], [0.3, -2.0]):
        assert np.allclose(rigidity_matrix(st) @ np.tile(v, 4), 0, atol=1e-12)


def test_path_graph_not_minimally_rigid():
    g = FormationGraph(4, [(0, 1), (1, 2), (2, 3)], [1, 1, 1])
    assert not g.is_minimally_rigid()


def test_quantized_at_exact_zero_error():
    g = FormationGraph(3, [(0, 1), (1, 2), (0, 2)], [3.0, 5.0, 4.0])
    st = FormationState([[0, 0], [3, 0], [0, 4]], g)
    assert not np.any(st.e)
    assert not np.any(control_law_quantized(st, Q4, Q4))


def test_high_precision_matches_exact(square, rng):
    q15 = MulqConfig(15)
    for _ in range(5):
        st = FormationState(square.target_positions + rng.uniform(-0.3, 0.3, (4, 2)), square.graph)
        ue = control_law_exact(st)
        assert np.allclose(control_law_quantized(st, q15, q15), ue, rtol=0, atol=1e-14)
