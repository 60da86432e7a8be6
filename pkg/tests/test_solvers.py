import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_mpc import solvers
from adaptive_mpc.errors import DimensionError, NotPSDError, UnboundedPolytopeError
from adaptive_mpc.solvers import LinearProgram, QuadraticProgram, Status

from conftest import random_polytope


# ---------------------------------------------------------------- LP examples

def test_lp_single_active_bound():
    rep = solvers.solve_lp(LinearProgram([1.0], [[-1.0]], [-2.0]))
    assert rep.status is Status.OPTIMAL
    assert rep.solution == pytest.approx([2.0], abs=1e-12)
    assert rep.objective == pytest.approx(2.0, abs=1e-12)


def test_lp_box_maximum_at_corner():
    box = np.vstack([np.eye(2), -np.eye(2)])
    rep = solvers.solve_lp(LinearProgram([3.0, -1.0], box, np.ones(4), sense="maximize"))
    assert rep.optimal
    assert rep.objective == pytest.approx(4.0, abs=1e-12)
    assert rep.solution == pytest.approx([1.0, -1.0], abs=1e-12)


def test_lp_empty_interval_is_infeasible():
    rep = solvers.solve_lp(LinearProgram([0.0], [[1.0], [-1.0]], [1.0, -2.0]))
    assert rep.status is Status.INFEASIBLE
    y = rep.certificate[0]
    # Farkas: y >= 0, A^T y = 0, b^T y < 0
    assert np.all(y >= -1e-12)
    assert abs(y @ np.array([[1.0], [-1.0]])[:, 0]) < 1e-12
    assert y @ np.array([1.0, -2.0]) < 0


def test_lp_unbounded():
    rep = solvers.solve_lp(LinearProgram([-1.0, 0.0], [[0.0, 1.0]], [1.0]))
    assert rep.status is Status.UNBOUNDED


def test_lp_equality_constraints():
    # min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0
    rep = solvers.solve_lp(LinearProgram([1.0, 2.0], -np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0]))
    assert rep.optimal
    assert rep.solution == pytest.approx([1.0, 0.0], abs=1e-12)


def test_lp_dimension_mismatch():
    with pytest.raises(DimensionError):
        LinearProgram([1.0, 2.0], [[1.0]], [1.0])


def test_lp_zero_row_handling():
    with pytest.warns(UserWarning):
        rep = solvers.solve_lp(LinearProgram([1.0], [[0.0], [-1.0]], [1.0, -3.0]))
    assert rep.solution == pytest.approx([3.0])
    rep = solvers.solve_lp(LinearProgram([1.0], [[0.0], [-1.0]], [-1.0, -3.0]))
    assert rep.status is Status.INFEASIBLE


def _brute_lp_optimum(c, a, b):
    verts = solvers.enumerate_vertices(a, b)
    return min(float(c @ v) for v in verts)


def test_lp_matches_vertex_enumeration_100(rng):
    for _ in range(100):
        n = int(rng.integers(1, 5))
        a, b = random_polytope(rng, n)
        c = rng.normal(size=n)
        rep = solvers.solve_lp(LinearProgram(c, a, b))
        assert rep.optimal
        assert rep.objective == pytest.approx(_brute_lp_optimum(c, a, b), abs=1e-8)
        # strong duality: c^T x = -b^T lambda under c + A^T lambda = 0
        assert rep.objective == pytest.approx(-(b @ rep.dual_ineq), abs=2e-8)
        assert np.all(rep.dual_ineq >= -1e-8)


def test_lp_is_deterministic(rng):
    a, b = random_polytope(rng, 4)
    lp = LinearProgram(rng.normal(size=4), a, b)
    r1, r2 = solvers.solve_lp(lp), solvers.solve_lp(lp)
    assert np.array_equal(r1.solution, r2.solution)
    assert np.array_equal(r1.dual_ineq, r2.dual_ineq)
    assert r1.objective == r2.objective


def test_lp_degenerate_cycling_example():
    # Beale's classic cycling LP, written as min with x >= 0
    c = np.array([-0.75, 150.0, -0.02, 6.0])
    a = np.array([[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]])
    rep = solvers.solve_lp(LinearProgram(c, np.vstack([a, -np.eye(4)]), np.concatenate([[0, 0, 1], np.zeros(4)])))
    assert rep.optimal
    assert rep.objective == pytest.approx(-0.05, abs=1e-10)


# ---------------------------------------------------------------- QP examples

def test_qp_clipped_optimum():
    rep = solvers.solve_qp(QuadraticProgram([[2.0]], [-2.0], [[1.0]], [0.5], constant=1.0))
    assert rep.optimal
    assert rep.solution == pytest.approx([0.5], abs=1e-12)
    assert rep.objective == pytest.approx(0.25, abs=1e-12)


def test_qp_equality_symmetry():
    rep = solvers.solve_qp(QuadraticProgram(2 * np.eye(2), np.zeros(2), eq_matrix=[[1.0, 1.0]], eq_rhs=[2.0]))
    assert rep.solution == pytest.approx([1.0, 1.0], abs=1e-12)


def test_qp_rejects_indefinite():
    with pytest.raises(NotPSDError):
        QuadraticProgram([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])


def test_qp_infeasible():
    rep = solvers.solve_qp(QuadraticProgram(np.eye(1), [0.0], [[1.0], [-1.0]], [1.0, -2.0]))
    assert rep.status is Status.INFEASIBLE


def test_qp_semidefinite_unbounded():
    rep = solvers.solve_qp(QuadraticProgram([[1.0, 0.0], [0.0, 0.0]], [0.0, -1.0]))
    assert rep.status is Status.UNBOUNDED


def _projected_gradient(p, q, lo, hi, iters=200000):
    x = np.clip(np.zeros_like(q), lo, hi)
    step = 1.0 / np.linalg.eigvalsh(p)[-1]
    for _ in range(iters):
        nxt = np.clip(x - step * (p @ x + q), lo, hi)
        if np.abs(nxt - x).max() < 1e-15:
            break
        x = nxt
    return x


def test_qp_box_matches_projected_gradient_100(rng):
    for _ in range(100):
        n = 5
        m = rng.normal(size=(n, n))
        p = m @ m.T + 0.5 * np.eye(n)
        q = 3 * rng.normal(size=n)
        lo, hi = -rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, n)
        qp = QuadraticProgram(p, q, np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))
        rep = solvers.solve_qp(qp)
        assert rep.optimal
        oracle = _projected_gradient(p, q, lo, hi)
        assert rep.solution == pytest.approx(oracle, abs=1e-8)
        res = solvers.kkt_residuals(qp, rep)
        assert max(res.values()) <= 1e-8


def test_qp_general_polytope_kkt(rng):
    for _ in range(50):
        n = int(rng.integers(2, 7))
        a, b = random_polytope(rng, n)
        m = rng.normal(size=(n, n - 1))
        p = m @ m.T  # singular PSD, bounded by the polytope
        qp = QuadraticProgram(p, rng.normal(size=n), a, b, rng.normal(size=(1, n)) * 0.1, [0.0])
        rep = solvers.solve_qp(qp)
        assert rep.optimal
        assert max(solvers.kkt_residuals(qp, rep).values()) <= 1e-8


def test_qp_warm_start_same_answer(rng):
    n = 4
    a, b = random_polytope(rng, n)
    m = rng.normal(size=(n, n))
    qp = QuadraticProgram(m @ m.T + np.eye(n), rng.normal(size=n) * 4, a, b)
    cold = solvers.solve_qp(qp)
    warm = solvers.solve_qp(qp, x0=np.zeros(n))
    assert warm.solution == pytest.approx(cold.solution, abs=1e-10)


# ---------------------------------------------------------------- vertices / polytope max

def test_vertices_unit_box():
    box = np.vstack([np.eye(2), -np.eye(2)])
    verts = solvers.enumerate_vertices(box, np.ones(4))
    assert sorted(map(tuple, np.round(verts, 12))) == sorted(itertools.product([-1.0, 1.0], repeat=2))


def test_vertices_simplex():
    a = np.vstack([-np.eye(2), np.ones((1, 2))])
    verts = {tuple(np.round(v, 12)) for v in solvers.enumerate_vertices(a, [0, 0, 1])}
    assert verts == {(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)}


def test_vertices_interval():
    verts = solvers.enumerate_vertices([[-1.0], [1.0]], [-0.4, 0.6])
    assert [v[0] for v in verts] == pytest.approx([0.4, 0.6])


def test_vertices_unbounded_raises():
    with pytest.raises(UnboundedPolytopeError):
        solvers.enumerate_vertices([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0])


def test_polytope_max_multipliers_certify(rng):
    for _ in range(100):
        n = int(rng.integers(1, 5))
        a, b = random_polytope(rng, n)
        w = rng.normal(size=n)
        res = solvers.maximize_over_polytope(a, b, w)
        best = max(float(w @ v) for v in solvers.enumerate_vertices(a, b))
        assert res.value == pytest.approx(best, abs=1e-8)
        assert np.all(res.multipliers >= 0)
        assert a.T @ res.multipliers == pytest.approx(w, abs=1e-9)
        assert b @ res.multipliers == pytest.approx(res.value, abs=1e-9)


def test_polytope_max_warm_basis_after_perturbation(rng):
    for _ in range(100):
        n = int(rng.integers(2, 6))
        a, b = random_polytope(rng, n)
        w = rng.normal(size=n)
        first = solvers.maximize_over_polytope(a, b, w)
        a2 = np.vstack([a, rng.normal(size=(1, n))])
        b2 = np.append(b + rng.uniform(-0.05, 0.05, b.size), 0.3)
        w2 = w + 0.2 * rng.normal(size=n)
        warm = solvers.maximize_over_polytope(a2, b2, w2, basis=first.basis, start=np.zeros(n))
        cold = solvers.solve_lp(LinearProgram(w2, a2, b2, sense="maximize"))
        assert warm.value == pytest.approx(cold.objective, abs=1e-8)


def test_chebyshev_and_analytic_center():
    box = np.vstack([np.eye(2), -np.eye(2)])
    b = np.array([1.0, 1.0, 0.0, 0.0])
    center, radius = solvers.chebyshev_center(box, b)
    assert center == pytest.approx([0.5, 0.5], abs=1e-9)
    assert radius == pytest.approx(0.5, abs=1e-9)
    assert solvers.analytic_center(box, b, np.array([0.2, 0.7])) == pytest.approx([0.5, 0.5], abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=4))
def test_lp_min_below_every_vertex(seed, n):
    gen = np.random.default_rng(seed)
    a, b = random_polytope(gen, n)
    c = gen.normal(size=n)
    rep = solvers.solve_lp(LinearProgram(c, a, b))
    assert rep.optimal
    assert np.all(a @ rep.solution <= b + 1e-8)
    for v in solvers.enumerate_vertices(a, b):
        assert rep.objective <= c @ v + 1e-8
