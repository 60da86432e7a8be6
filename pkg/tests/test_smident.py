import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_mpc import solvers
from adaptive_mpc.errors import EmptyFeasibleSet
from adaptive_mpc.smident import (NoiseBounds, NominalModel, PriorSet, RateBoundSet, drift_bounds,
                                  emptiness_check, ingest_measurement, init_nominal, make_record,
                                  new_feasible_set, nominal_model, reset_to_prior, snapshot)


def interval_of(fps, j=0):
    """Bounds of a 1-D feasible set, by LP."""
    a, b = fps.polytope(j)
    start = solvers.chebyshev_center(a, b)[0]
    hi = solvers.maximize_over_polytope(a, b, np.array([1.0]), start=start).value
    lo = -solvers.maximize_over_polytope(a, b, np.array([-1.0]), start=start).value
    return lo, hi


@pytest.fixture
def scalar_setup():
    prior = PriorSet.box([0.0], [1.0], 1)
    noise = NoiseBounds([0.1], [0.1])
    rates = RateBoundSet.box([0.03], 1)
    return prior, noise, rates


# ---------------------------------------------------------------- drift bounds

def test_drift_bounds_zero_regressor():
    lo, hi = drift_bounds(np.zeros(3), RateBoundSet.box([0.1, 0.2, 0.3], 2))
    assert np.array_equal(lo, [0, 0]) and np.array_equal(hi, [0, 0])


def test_drift_bounds_box_vertices():
    lo, hi = drift_bounds([1.0, -2.0], RateBoundSet.box([0.01, 0.01], 1))
    assert lo[0] == pytest.approx(-0.03, abs=1e-15)
    assert hi[0] == pytest.approx(0.03, abs=1e-15)


def test_drift_bounds_singleton_rate_set():
    lo, hi = drift_bounds([1.0, 5.0], RateBoundSet.box([0.0, 0.0], 1))
    assert lo[0] == 0.0 and hi[0] == 0.0


def test_drift_bounds_general_polytope(rng):
    k = np.vstack([np.eye(2), -np.eye(2), [[1.0, 1.0]]])
    l = np.array([1.0, 1.0, 1.0, 1.0, 0.5])
    rates = RateBoundSet([k], [l])
    lo, hi = drift_bounds([1.0, 1.0], rates)
    assert hi[0] == pytest.approx(0.5) and lo[0] == pytest.approx(-2.0)


# ---------------------------------------------------------------- ingestion

def test_first_measurement_gives_slab(scalar_setup):
    prior, noise, rates = scalar_setup
    fps = ingest_measurement(new_feasible_set(prior, noise, 10), make_record([2.0], [1.0], 0, rates))
    assert interval_of(fps) == pytest.approx((0.4, 0.6), abs=1e-12)
    assert fps.row_counts == [4]


@pytest.mark.filterwarnings("ignore:dropping .* all-zero")
def test_slab_widens_by_drift(scalar_setup):
    prior, noise, rates = scalar_setup
    fps = ingest_measurement(new_feasible_set(prior, noise, 10), make_record([2.0], [1.0], 0, rates))
    fps = ingest_measurement(fps, make_record([0.0], [0.0], 1, rates))
    assert interval_of(fps) == pytest.approx((0.37, 0.63), abs=1e-12)
    # prior rows untouched
    assert np.array_equal(fps.b_vector(0)[:2], prior.b0_vectors[0])


def test_cap_evicts_oldest_pair(scalar_setup):
    prior, noise, rates = scalar_setup
    fps = new_feasible_set(prior, noise, 4)
    for t, phi in enumerate([1.0, 2.0, 3.0]):
        fps = ingest_measurement(fps, make_record([phi], [0.5 * phi], t, rates))
    assert fps.row_counts == [2 + 4]
    assert [rec.step for rec in fps.window] == [1, 2]
    fps2 = new_feasible_set(prior, noise, 2)
    for t in range(3):
        fps2 = ingest_measurement(fps2, make_record([1.0], [0.5], t, rates))
        assert fps2.row_counts == [2 + 2]


def test_ingest_requires_consecutive_steps(scalar_setup):
    prior, noise, rates = scalar_setup
    fps = ingest_measurement(new_feasible_set(prior, noise, 4), make_record([1.0], [0.5], 0, rates))
    with pytest.raises(ValueError):
        ingest_measurement(fps, make_record([1.0], [0.5], 2, rates))


def test_rows_match_cumulative_drift_form(rng):
    """Each retained record contributes its slab widened by (t - s) times its own drift bounds."""
    m, n_y, cap = 3, 2, 8
    prior = PriorSet.box(-np.ones(m), np.ones(m), n_y)
    noise = NoiseBounds([0.05, 0.07], [0.02, 0.01])
    rates = RateBoundSet.box([0.01, 0.02, 0.005], n_y)
    fps = new_feasible_set(prior, noise, cap)
    records = []
    for t in range(9):
        rec = make_record(rng.normal(size=m), rng.normal(size=n_y), t, rates)
        records.append(rec)
        fps = ingest_measurement(fps, rec)
    t = 8
    kept = records[-cap // 2:]
    for j in range(n_y):
        a, b = fps.polytope(j)
        for idx, rec in enumerate(kept):
            age = t - rec.step
            r0 = 2 * m
            row_lo, row_hi = a[r0 + 2 * idx], a[r0 + 2 * idx + 1]
            assert np.array_equal(row_lo, -rec.phi) and np.array_equal(row_hi, rec.phi)
            eps = noise.eps_d[j] + noise.eps_v[j]
            assert b[r0 + 2 * idx] == pytest.approx(-rec.y_meas[j] + eps - age * rec.theta_lo[j], abs=1e-12)
            assert b[r0 + 2 * idx + 1] == pytest.approx(rec.y_meas[j] + eps + age * rec.theta_hi[j], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inflation_never_shrinks(seed):
    gen = np.random.default_rng(seed)
    m = 2
    prior = PriorSet.box(-np.ones(m), np.ones(m), 1)
    noise = NoiseBounds([0.2], [0.1])
    rates = RateBoundSet.box([0.02, 0.01], 1)
    fps = new_feasible_set(prior, noise, 6)
    for t in range(3):
        fps = ingest_measurement(fps, make_record(gen.normal(size=m), gen.normal(size=1) * 0.3, t, rates))
    before = fps
    after = ingest_measurement(fps, make_record(np.zeros(m), [0.0], 3, rates))
    samples = gen.uniform(-1, 1, size=(400, 1, m))
    for h in samples:
        if before.violation(h) <= 0:
            assert after.violation(h) <= 0


def _containment(outer, inner):
    worst = -np.inf
    a_in, b_in = inner
    for row, rhs in zip(*outer):
        worst = max(worst, solvers.maximize_over_polytope(a_in, b_in, row).value - rhs)
    return worst


def test_smaller_cap_is_more_conservative(rng):
    m = 2
    prior = PriorSet.box(-np.ones(m), np.ones(m), 1)
    noise = NoiseBounds([0.05], [0.05])
    rates = RateBoundSet.box([0.01, 0.01], 1)
    truth = np.array([0.3, -0.2])
    small, large = new_feasible_set(prior, noise, 2), new_feasible_set(prior, noise, 8)
    for t in range(12):
        phi = rng.normal(size=m)
        y = truth @ phi + rng.uniform(-0.1, 0.1)
        rec = make_record(phi, [y], t, rates)
        small, large = ingest_measurement(small, rec), ingest_measurement(large, rec)
        assert _containment(small.polytope(0), large.polytope(0)) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_membership_under_bounded_drift_and_noise(seed):
    gen = np.random.default_rng(seed)
    m, n_y = 3, 2
    rate = np.array([0.01, 0.02, 0.01])
    prior = PriorSet.box(-np.ones(m), np.ones(m), n_y)
    noise = NoiseBounds([0.05, 0.05], [0.05, 0.05])
    rates = RateBoundSet.box(rate, n_y)
    h = gen.uniform(-0.5, 0.5, size=(n_y, m))
    fps = new_feasible_set(prior, noise, 6)
    for t in range(30):
        phi = gen.normal(size=m)
        y = h @ phi + gen.uniform(-0.05, 0.05, n_y) + gen.uniform(-0.05, 0.05, n_y)
        fps = ingest_measurement(fps, make_record(phi, y, t, rates))
        assert fps.violation(h) <= 1e-9
        assert all(r <= r0 + 6 for r, r0 in zip(fps.row_counts, prior.row_counts))
        h = np.clip(h + gen.uniform(-rate, rate, size=(n_y, m)), -0.99, 0.99)


# ---------------------------------------------------------------- emptiness / reset

def test_emptiness_examples(scalar_setup):
    prior, noise, rates = scalar_setup
    fresh = new_feasible_set(prior, noise, 4)
    assert emptiness_check(fresh).nonempty
    fps = ingest_measurement(fresh, make_record([2.0], [1.0], 0, rates))
    res = emptiness_check(fps)
    assert res.nonempty and 0.4 - 1e-9 <= res.witness[0, 0] <= 0.6 + 1e-9


def test_contradictory_slabs_are_empty():
    prior = PriorSet.box([-2.0], [2.0], 1)
    noise = NoiseBounds([0.05], [0.05])
    rates = RateBoundSet.box([0.0], 1)
    fps = new_feasible_set(prior, noise, 4)
    fps = ingest_measurement(fps, make_record([1.0], [0.0], 0, rates))
    fps = ingest_measurement(fps, make_record([1.0], [1.0], 1, rates))
    res = emptiness_check(fps)
    assert not res.nonempty and res.empty_output == 0
    with pytest.raises(EmptyFeasibleSet) as info:
        nominal_model(fps, NominalModel([[0.5]]))
    assert info.value.output == 0
    again = reset_to_prior(fps)
    assert again.row_counts == [2]
    assert emptiness_check(again).nonempty
    assert reset_to_prior(again).row_counts == again.row_counts


# ---------------------------------------------------------------- nominal model

def test_nominal_projection_examples(scalar_setup):
    prior, noise, rates = scalar_setup
    fps = ingest_measurement(new_feasible_set(prior, noise, 4), make_record([2.0], [1.0], 0, rates))
    assert nominal_model(fps, NominalModel([[0.9]])).h_c[0, 0] == pytest.approx(0.6, abs=1e-10)
    inside = NominalModel([[0.5]])
    assert nominal_model(fps, inside).h_c[0, 0] == 0.5


def test_nominal_is_l1_closest(rng):
    m = 3
    prior = PriorSet.box(-np.ones(m), np.ones(m), 1)
    a = rng.normal(size=(5, m))
    b = rng.uniform(0.1, 0.5, 5)
    fps = new_feasible_set(PriorSet([np.vstack([prior.a0_matrices[0], a])],
                                    [np.concatenate([prior.b0_vectors[0], b])]), NoiseBounds([0.1], [0.1]), 2)
    prev = rng.uniform(-3, 3, size=(1, m))
    got = nominal_model(fps, NominalModel(prev)).h_c[0]
    assert fps.violation(got[None]) <= 1e-9
    dist = np.abs(got - prev[0]).sum()
    # no sampled point of the set is closer in L1
    for _ in range(2000):
        pt = rng.uniform(-1, 1, m)
        if fps.violation(pt[None]) <= 0:
            assert np.abs(pt - prev[0]).sum() >= dist - 1e-9


def test_init_nominal_examples():
    assert init_nominal(PriorSet.box(np.zeros(4), np.ones(4), 2)).h_c == pytest.approx(np.full((2, 4), 0.5))
    assert init_nominal(PriorSet.box([2.0], [4.0], 1)).h_c[0, 0] == pytest.approx(3.0)
    assert init_nominal(PriorSet.box([1.5], [1.5], 1)).h_c[0, 0] == pytest.approx(1.5)
    centered = init_nominal(PriorSet.box([-1.0, -1.0], [1.0, 1.0], 1)).h_c
    assert np.any(centered != 0)


# ---------------------------------------------------------------- snapshot

def test_json_snapshot(scalar_setup):
    prior, noise, rates = scalar_setup
    fps = ingest_measurement(new_feasible_set(prior, noise, 4), make_record([2.0], [1.0], 0, rates))
    data = json.loads(fps.to_json())
    assert data == json.loads(json.dumps(snapshot(fps)))
    assert data["step"] == 0 and data["m_cap"] == 4
    out = data["outputs"][0]
    assert np.array_equal(np.array(out["a"]), fps.a_matrix(0))
    assert np.array_equal(np.array(out["b"]), fps.b_vector(0))
    assert out["r0"] == 2
    assert data["window"][0]["phi"] == [2.0]
