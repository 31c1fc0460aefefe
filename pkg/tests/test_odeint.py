import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import euler, radial_closed_form
from symctrl.odeint import (BlowUpError, Disturbance, SamplingConfig, flow, flow_batch,
                            growth_radius, rk4, simulate_perturbed)
from symctrl.plants import AIRCRAFT, VEHICLE, affine_plant


def test_config_validation():
    with pytest.raises(ValueError):
        SamplingConfig(0.0)
    with pytest.raises(ValueError):
        SamplingConfig(0.3, 0)
    with pytest.raises(ValueError):
        Disturbance([-1.0])


def test_zero_field_is_identity():
    p = affine_plant(np.zeros((2, 2)), np.zeros((2, 1)))
    x = np.array([1.5, -2.0])
    assert np.array_equal(flow(p.vf, x, [0.0], SamplingConfig(0.7)), x)


def test_constant_field_is_exact():
    p = affine_plant(np.zeros((2, 2)), np.eye(2))
    out = flow(p.vf, [1.0, 2.0], [0.5, -1.0], SamplingConfig(2.0, 1))
    assert np.allclose(out, [2.0, 0.0], atol=1e-15)


def test_vehicle_straight_line():
    out = flow(VEHICLE.vf, [0.4, 0.4, 0.0], [0.9, 0.0], SamplingConfig(0.3))
    assert np.allclose(out, [0.67, 0.4, 0.0], atol=1e-12)


def _vehicle_euler(x, y, th, u1, u2, tau, steps):
    alpha = math.atan(math.tan(u2) / 2)
    c = u1 / math.cos(alpha)
    om = u1 * math.tan(u2)
    h = tau / steps
    for _ in range(steps):
        x, y, th = x + h * c * math.cos(th + alpha), y + h * c * math.sin(th + alpha), th + h * om
    return np.array([x, y, th])


@pytest.mark.parametrize("u", [(0.9, 0.0), (0.6, 0.7), (-0.8, -0.5)])
def test_vehicle_flow_matches_fine_euler(u):
    x0 = (0.4, 0.4, 0.3)
    ref = _vehicle_euler(*x0, *u, 0.3, 10 ** 6)
    out = flow(VEHICLE.vf, x0, u, SamplingConfig(0.3))
    assert np.max(np.abs(out - ref)) < 1e-6


def test_aircraft_flow_matches_euler():
    x0 = np.array([80.0, np.deg2rad(-1.5), 55.0])
    u = np.array([20000.0, np.deg2rad(4.0)])
    ref = euler(AIRCRAFT.vf, x0, u, 0.25, 20000)
    assert np.allclose(flow(AIRCRAFT.vf, x0, u, SamplingConfig(0.25)), ref, rtol=0, atol=1e-5)


def test_flow_batch_matches_single():
    rng = np.random.default_rng(0)
    X = rng.uniform([0, 0, -3], [10, 10, 3], size=(20, 3))
    cfg = SamplingConfig(0.3)
    u = np.array([0.5, 0.4])
    B = flow_batch(VEHICLE.vf, X, u, cfg)
    for i in range(20):
        assert np.allclose(B[i], flow(VEHICLE.vf, X[i], u, cfg), atol=1e-14)


def test_blow_up_raises():
    p = affine_plant(np.array([[800.0]]), np.zeros((1, 1)))
    with pytest.raises(BlowUpError):
        flow(p.vf, [1e300], [0.0], SamplingConfig(1.0, 1))
    with pytest.raises(BlowUpError):
        growth_radius(lambda u: np.array([[800.0]]), [0.0], [1e300], [0.0], SamplingConfig(1.0, 1))


def test_growth_zero_lipschitz():
    L = lambda u: np.zeros((2, 2))
    cfg = SamplingConfig(0.4)
    r = np.array([0.1, 0.2])
    assert np.array_equal(growth_radius(L, [0, 0], r, [0.0], cfg), r)
    assert np.allclose(growth_radius(L, [0.5, 1.0], r, [0.0], cfg), r + 0.4 * np.array([0.5, 1.0]))


def test_growth_vehicle_value():
    r = np.array([0.1, 0.1, np.pi / 35])
    out = growth_radius(VEHICLE.lipschitz, np.zeros(3), r, [0.9, 0.9], SamplingConfig(0.3))
    # frozen: r + 0.3 * r3 * 0.9 sqrt(tan(0.9)^2/4 + 1) in the first two components
    assert np.allclose(out, [0.1286446597, 0.1286446597, 0.0897597901], atol=1e-9)
    # the radial equation is nilpotent, so RK4 is exact on it
    L = VEHICLE.lipschitz(np.array([0.9, 0.9]))
    assert np.max(np.abs(out - radial_closed_form(L, np.zeros(3), r, 0.3))) <= 1e-9


def test_growth_batch_matches_single():
    rng = np.random.default_rng(1)
    R = rng.uniform(0, 0.5, size=(10, 3))
    cfg = SamplingConfig(0.25)
    u = np.array([20000.0, 0.05])
    w = [0.108, 0.002, 0.0]
    B = growth_radius(AIRCRAFT.lipschitz, w, R, u, cfg)
    for i in range(10):
        assert np.allclose(B[i], growth_radius(AIRCRAFT.lipschitz, w, R[i], u, cfg))


def test_growth_negative_radius_rejected():
    with pytest.raises(ValueError):
        growth_radius(lambda u: np.zeros((1, 1)), [0.0], [-0.1], [0.0], SamplingConfig(1.0))


def _metzler(rng, n):
    L = np.abs(rng.normal(size=(n, n)))
    np.fill_diagonal(L, rng.normal(size=n))
    return L


def test_growth_monotone_in_radius():
    rng = np.random.default_rng(2)
    cfg = SamplingConfig(0.5)
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        L = _metzler(rng, n)
        w = rng.uniform(0, 1, n)
        r = rng.uniform(0, 1, n)
        r2 = r + rng.uniform(0, 1, n) * (rng.random(n) < 0.7)
        a = growth_radius(lambda u: L, w, r, [0.0], cfg)
        b = growth_radius(lambda u: L, w, r2, [0.0], cfg)
        assert np.all(a <= b + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_growth_matches_closed_form(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    L = _metzler(rng, n)
    w, r = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    # enough steps that RK4 truncation is far below the tolerance
    out = growth_radius(lambda u: L, w, r, [0.0], SamplingConfig(0.3, 200))
    ref = radial_closed_form(L, w, r, 0.3)
    assert np.allclose(out, ref, rtol=1e-9, atol=1e-12)


def test_rk4_fourth_order():
    L = np.array([[-1.0, 2.0, 0.5], [0.3, 0.2, 1.0], [1.5, 0.1, -0.4]])
    w = np.array([0.2, 0.1, 0.0])
    r = np.array([1.0, 0.5, 0.25])
    ref = radial_closed_form(L, w, r, 1.0)
    errs = [np.max(np.abs(growth_radius(lambda u: L, w, r, [0.0], SamplingConfig(1.0, s)) - ref))
            for s in (4, 8, 16)]
    assert errs[0] / errs[1] >= 8 and errs[1] / errs[2] >= 8


def test_rk4_passes_nonfinite_through():
    out = rk4(lambda x, u: x * 0 + np.array([np.inf, 1.0]), np.zeros((3, 2)), None, 1.0, 2)
    assert not np.any(np.isfinite(out[:, 0])) and np.all(np.isfinite(out[:, 1]))


def test_perturbed_ends_within_growth_bound_vehicle():
    rng = np.random.default_rng(3)
    cfg = SamplingConfig(0.3)
    eta = np.array([0.2, 0.2, 2 * np.pi / 35])
    for _ in range(20):
        p = rng.uniform([1, 1, -3], [9, 9, 3])
        u = rng.uniform(-1, 1, 2)
        x0 = p + rng.uniform(-eta / 2, eta / 2, size=(500, 3))
        ends = simulate_perturbed(VEHICLE.vf, x0, u, 0.3, rng)
        beta = growth_radius(VEHICLE.lipschitz, np.zeros(3), np.abs(x0 - p), u, cfg)
        assert np.all(np.abs(ends - flow(VEHICLE.vf, p, u, cfg)) <= beta + 1e-9)


def test_perturbed_input_disturbance_stays_in_bounds():
    rng = np.random.default_rng(4)
    x0 = np.tile([70.0, -0.02, 30.0], (200, 1))
    u = np.array([100.0, 0.0])
    seen = []

    def vf(x, uu):
        seen.append(np.array(uu))
        return AIRCRAFT.vf(x, uu)

    simulate_perturbed(vf, x0, u, 0.25, rng, input_radius=[5000, 0.01],
                       input_bounds=(np.zeros(2), np.array([32000, 0.14])))
    U = np.concatenate([s.reshape(-1, 2) for s in seen])
    assert U.min() >= 0.0 and U[:, 0].max() <= 5100


def test_disturbance_reaches_vertices():
    rng = np.random.default_rng(5)
    p = affine_plant(np.zeros((1, 1)), np.zeros((1, 1)))
    ends = simulate_perturbed(p.vf, np.zeros((4000, 1)), [0.0], 1.0, rng, w=[1.0],
                              segments=1, bang_fraction=1.0)
    assert np.allclose(np.abs(ends), 1.0)
