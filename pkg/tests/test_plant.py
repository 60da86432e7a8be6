import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_mpc.errors import ConfigError, ScheduleExhausted, SingularStructureError
from adaptive_mpc.model import ParameterMatrix, build_fir_structure, output_of
from adaptive_mpc.plant import (TankParams, ThreeTankPlant, TruthConfig, ValveSchedule, design_bounds,
                                discretize, linearize, make_rng, simulate_nonlinear, simulate_step,
                                steady_inflows, tank_derivative, true_impulse_response, truth_parameters)

P = TankParams()
H_STAR = (8.0, 7.0, 6.0)


def test_derivative_empty_tanks():
    assert tank_derivative([0, 0, 0], 0.0, 0.0, (0.4, 0.3), P) == pytest.approx([0, 0, 0])


def test_derivative_operating_point():
    rates = tank_derivative(H_STAR, 0.0, 0.0, (0.4, 0.3), P)
    root1 = np.sqrt(2 * 981.0)
    assert rates[0] == pytest.approx(-0.4 * 3.42 * root1 / 375.0, rel=1e-12)
    assert rates[0] == pytest.approx(-0.16157, abs=5e-5)
    assert rates[1] == pytest.approx((0.4 - 0.5) * 3.42 * root1 / 375.0, rel=1e-12)
    expect3 = (0.5 * 3.42 * root1 - 0.3 * 3.42 * np.sqrt(2 * 981.0 * 6.0)) / 375.0
    assert rates[2] == pytest.approx(expect3, rel=1e-12)


def test_derivative_equal_levels():
    rates = tank_derivative([5.0, 5.0, 5.0], 0.0, 0.0, (0.4, 0.3), P)
    assert rates[0] == 0.0 and rates[1] == 0.0
    assert rates[2] == pytest.approx(-0.3 * 3.42 * np.sqrt(2 * 981.0 * 5.0) / 375.0)


def test_derivative_rejects_negative_levels():
    with pytest.raises(ValueError):
        tank_derivative([1.0, -0.1, 1.0], 0.0, 0.0, (0.4, 0.3), P)


@pytest.mark.parametrize("gammas", [(0.4, 0.3), (0.25, 0.45), (0.5, 0.2)])
def test_steady_inflows_plug_back(gammas):
    q1, q2 = steady_inflows(H_STAR, gammas, P)
    rates = tank_derivative(H_STAR, q1, q2, gammas, P)
    assert abs(rates[0]) < 1e-10 and abs(rates[2]) < 1e-10
    if gammas[0] != P.gamma2:
        with pytest.raises(ConfigError):
            steady_inflows(H_STAR, gammas, P, strict=True)


def test_steady_inflows_equilibrium_when_valves_match():
    q1, q2 = steady_inflows(H_STAR, (0.5, 0.3), P, strict=True)
    assert np.abs(tank_derivative(H_STAR, q1, q2, (0.5, 0.3), P)).max() < 1e-10


def test_steady_inflow_zero_when_valve_closed():
    # gamma1 -> 0 limit: no flow out of tank 1 needs no inflow
    q1, _ = steady_inflows(H_STAR, (1e-300, 0.3), P)
    assert q1 == pytest.approx(0.0, abs=1e-290)


def _fd_jacobian(levels, gammas, q, h=1e-6):
    base = np.asarray(levels, dtype=float)
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        cols.append((tank_derivative(base + e, *q, gammas, P) - tank_derivative(base - e, *q, gammas, P)) / (2 * h))
    a = np.array(cols).T
    b = np.array([(tank_derivative(base, q[0] + h, q[1], gammas, P) - tank_derivative(base, q[0] - h, q[1], gammas, P)),
                  (tank_derivative(base, q[0], q[1] + h, gammas, P) - tank_derivative(base, q[0], q[1] - h, gammas, P))]).T
    return a, b / (2 * h)


def test_linearization_matches_finite_differences(rng):
    for _ in range(10):
        levels = np.array(H_STAR) + rng.uniform(-0.3, 0.3, 3)
        gammas = tuple(rng.uniform(0.2, 0.6, 2))
        a, b = linearize(levels, gammas, P)
        a_fd, b_fd = _fd_jacobian(levels, gammas, (10.0, 5.0))
        assert np.abs(a - a_fd).max() <= 1e-5 * np.abs(a).max()
        assert b == pytest.approx(b_fd, rel=1e-5)


def test_input_matrix_and_singular_point():
    _, b = linearize(H_STAR, (0.4, 0.3), P)
    assert np.array_equal(b, np.array([[1, 0], [0, 0], [0, 1]]) / 375.0)
    with pytest.raises(SingularStructureError):
        linearize((7.0, 7.0, 6.0), (0.4, 0.3), P)


def test_discretize_zero_dynamics():
    a_d, b_d = discretize(np.zeros((3, 3)), np.eye(3)[:, :2], 0.5)
    assert np.array_equal(a_d, np.eye(3))
    assert b_d == pytest.approx(0.5 * np.eye(3)[:, :2], abs=1e-15)


def test_discretize_small_dt_limit():
    a, b = linearize(H_STAR, (0.4, 0.3), P)
    a_d, _ = discretize(a, b, 1e-9)
    assert a_d == pytest.approx(np.eye(3), abs=1e-9)


@pytest.mark.parametrize("dt", [0.16, 5.0, 40.0])
def test_discretize_decoupled_closed_form(dt):
    rates = np.array([-0.02, -0.5, -3.0])
    a_d, b_d = discretize(np.diag(rates), np.eye(3), dt)
    decay = np.exp(rates * dt)
    assert a_d == pytest.approx(np.diag(decay), abs=1e-14)
    assert np.diag(b_d) == pytest.approx((decay - 1.0) / rates, rel=1e-12)
    assert np.abs(b_d - np.diag(np.diag(b_d))).max() <= 1e-15


def test_discretize_block_layout():
    a, b = linearize(H_STAR, (0.4, 0.3), P)
    a_d, b_d = discretize(a, b, 5.0)
    half_a, half_b = discretize(a, b, 2.5)
    # two half steps compose into one full step
    assert a_d == pytest.approx(half_a @ half_a, abs=1e-13)
    assert b_d == pytest.approx(half_a @ half_b + half_b, abs=1e-13)


def _euler(a, b, dt, n):
    x, bu = np.eye(3), np.zeros((3, 2))
    h = dt / n
    for _ in range(n):
        bu = bu + h * (a @ bu + b)
        x = x + h * a @ x
    return x, bu


def test_discretize_matches_fine_euler():
    a, b = linearize(H_STAR, (0.4, 0.3), P)
    dt = 0.16
    # plain Euler at 2000 substeps is only first order (~3e-7 here); extrapolating
    # against 4000 substeps cancels the leading error term
    x1, b1 = _euler(a, b, dt, 2000)
    x2, b2 = _euler(a, b, dt, 4000)
    a_d, b_d = discretize(a, b, dt)
    assert a_d == pytest.approx(2 * x2 - x1, abs=1e-8)
    assert b_d == pytest.approx(2 * b2 - b1, abs=1e-8)
    assert a_d == pytest.approx(x1, abs=1e-6)


def test_impulse_response_layout_round_trip(rng):
    a, b = linearize(H_STAR, (0.4, 0.3), P)
    a_d, b_d = discretize(a, b, 5.0)
    n_taps = 12
    h = true_impulse_response(a_d, b_d, n_taps)
    first = true_impulse_response(a_d, b_d, 1).h
    assert first == pytest.approx(b_d, abs=0)
    s = build_fir_structure(2, 3, n_taps)
    us = rng.normal(size=(n_taps, 2))
    x = np.zeros(3)
    phi = s.zero_regressor()
    for u in us:
        x = a_d @ x + b_d @ u
        phi = s.f_matrix @ phi + s.g_matrix @ u
        assert output_of(h, phi) == pytest.approx(x, abs=1e-13)
    assert not np.any(true_impulse_response(a_d, np.zeros((3, 2)), 4).h)


def test_schedule_validation_and_exhaustion():
    with pytest.raises(ConfigError):
        ValveSchedule((), (), ())
    with pytest.raises(ConfigError):
        ValveSchedule((0.0, 1.0), (0.4, 1.2), (0.3, 0.3))
    sched = ValveSchedule.linear(10.0)
    assert sched.at(5.0) == pytest.approx((0.325, 0.375))
    with pytest.raises(ScheduleExhausted):
        sched.at(10.5)


def _truth(eps=0.1, mode="fir", dt=5.0):
    return TruthConfig(TankParams(dt=dt), ValveSchedule.linear(1000.0), H_STAR, 6, (eps,) * 3, (eps,) * 3, mode)


def test_zero_input_zero_noise_stays_at_rest():
    plant = ThreeTankPlant(_truth(eps=0.0), seed=3)
    state = plant.reset()
    for _ in range(10):
        y, state = simulate_step(plant, state, np.zeros(2))
        assert np.array_equal(y, np.zeros(3))


def test_noise_within_bounds():
    gen = make_rng(11)
    d = gen.uniform(-1.0, 1.0, size=(100000, 3)) * 0.1
    assert np.abs(d).max() <= 0.1
    plant = ThreeTankPlant(_truth(eps=0.1), seed=5)
    state = plant.reset()
    for _ in range(100):
        state = plant.step(state, np.array([1.0, -1.0]))
        noise_free = state.h_true @ state.phi
        assert np.abs(state.y_true - noise_free).max() <= 0.1
        assert np.abs(state.y_meas - state.y_true).max() <= 0.1


def test_seeded_plant_is_reproducible():
    runs = []
    for _ in range(2):
        plant = ThreeTankPlant(_truth(), seed=2**63 + 17)
        state = plant.reset()
        out = []
        for k in range(20):
            state = plant.step(state, np.array([np.sin(k), np.cos(k)]))
            out.append(state.y_meas)
        runs.append(np.array(out))
    assert np.array_equal(runs[0], runs[1])


def test_fir_truth_matches_state_space_under_constant_valves():
    cfg_fir = TruthConfig(TankParams(dt=5.0), ValveSchedule.linear(1000.0, (0.4, 0.4), (0.3, 0.3)), H_STAR, 60,
                          (0.0,) * 3, (0.0,) * 3, "fir")
    cfg_ss = TruthConfig(cfg_fir.params, cfg_fir.schedule, H_STAR, 60, (0.0,) * 3, (0.0,) * 3, "state_space")
    p1, p2 = ThreeTankPlant(cfg_fir, 1), ThreeTankPlant(cfg_ss, 1)
    s1, s2 = p1.reset(), p2.reset()
    for k in range(40):
        u = np.array([1.0, 0.5 * (k % 3)])
        s1, s2 = p1.step(s1, u), p2.step(s2, u)
        assert s1.y_true == pytest.approx(s2.y_true, abs=1e-12)


def test_linearization_tracks_nonlinear_model():
    gammas = (0.5, 0.3)
    q = steady_inflows(H_STAR, gammas, P, strict=True)
    a, b = linearize(H_STAR, gammas, P)
    dq = np.array([2.0, -1.0])
    dt = 5.0
    a_d, b_d = discretize(a, b, dt)
    x = np.zeros(3)
    h = np.array(H_STAR)
    for _ in range(10):
        x = a_d @ x + b_d @ dq
        h = simulate_nonlinear(h, (q[0] + dq[0], q[1] + dq[1]), gammas, TankParams(dt=dt), dt)
    assert h - np.array(H_STAR) == pytest.approx(x, abs=0.05 * np.abs(x).max())


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.5, 20.0), min_size=3, max_size=3), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_total_volume_never_increases_without_inflow(levels, g1, g3):
    params = TankParams(dt=0.5)
    h = np.array(levels)
    total = h.sum()
    for _ in range(20):
        h = simulate_nonlinear(h, (0.0, 0.0), (g1, g3), params, params.dt)
        assert h.sum() <= total + 1e-9
        total = h.sum()


def test_design_bounds_cover_truth():
    cfg = TruthConfig(TankParams(dt=40.0, input_scale=10.0), ValveSchedule.linear(4000.0), H_STAR, 6)
    omega, rate = design_bounds(cfg, 100)
    hs = np.array([truth_parameters(cfg, t) for t in range(101)]).reshape(101, 3, 2, 6)
    assert np.all(hs <= omega + 1e-15) and np.all(hs >= 0)
    assert np.all(np.abs(np.diff(hs, axis=0)) <= rate)
    assert np.all(np.diff(omega) <= 1e-15)
