import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tortoise_nls.geometry import (GeometryError, Grid, SchwarzschildParams, horizon_offset,
                                   inverse_tortoise, potential, potential_derivative, tortoise,
                                   tortoise_from_offset)

P1 = SchwarzschildParams()


def test_tortoise_known_values():
    assert tortoise(3.0, P1) == pytest.approx(3.0, abs=1e-15)
    assert tortoise(4.0, P1) == pytest.approx(4 + 2 * math.log(2), rel=1e-15)
    eps = 1e-8
    assert tortoise(2 + eps, P1) == pytest.approx(2 + eps + 2 * math.log(eps), rel=1e-7)


def test_tortoise_rejects_inside_horizon():
    with pytest.raises(GeometryError):
        tortoise(2.0, P1)
    with pytest.raises(GeometryError):
        tortoise(np.array([3.0, 1.5]), P1)


def test_params_validation_and_alpha():
    with pytest.raises((GeometryError, ValueError)):
        SchwarzschildParams(0.0)
    for M in (0.5, 1.0, 3.0):
        p = SchwarzschildParams(M)
        assert p.horizon == 2 * M
        assert p.alpha == pytest.approx(8 * M / 3 + 2 * M * math.log(2 * M / 3), rel=1e-15, abs=1e-15)
        assert tortoise(8 * M / 3, p) == pytest.approx(p.alpha, rel=1e-14, abs=1e-14)


def test_inverse_simple_and_near_horizon():
    assert inverse_tortoise(3.0, P1) == pytest.approx(3.0, rel=1e-14)
    # r ~ 2M + exp(-1 + r_star/2M) far down the horizon channel
    d = horizon_offset(-40.0, P1)
    assert abs(d / math.exp(-1 - 20) - 1) < 1e-8


@pytest.mark.parametrize("r", [2.001, 2.5, 10.0, 1000.0])
def test_inverse_round_trip_from_radius(r):
    assert inverse_tortoise(tortoise(r, P1), P1) == pytest.approx(r, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(st.floats(-200, 200), st.sampled_from([0.5, 1.0, 2.5]))
def test_round_trip_from_tortoise(rs, M):
    p = SchwarzschildParams(M)
    d = horizon_offset(rs, p)
    assert d > 0
    back = tortoise_from_offset(d, p)
    assert abs(back - rs) < 1e-12 * max(1.0, abs(rs))


def test_inverse_is_increasing():
    rs = np.linspace(-200, 200, 40001)
    d = horizon_offset(rs, P1)
    assert np.all(np.diff(d) > 0)


def test_potential_values_and_sign_pattern():
    a = P1.alpha
    assert potential(a, P1) == pytest.approx(27 / 1024, rel=1e-14)
    assert abs(potential_derivative(a, P1)) < 1e-14
    assert potential_derivative(tortoise(2.2, P1), P1) > 0
    rs = np.linspace(-60, 60, 4001)
    dv = potential_derivative(rs, P1)
    assert np.all(-(rs - a) * dv >= 0)
    s = np.sign(dv[np.abs(rs - a) > 1e-9])
    assert np.count_nonzero(np.diff(s)) == 1


def test_potential_tails():
    # horizon side: exponential decay at rate 1/(2M)
    v1, v2 = potential(-40.0, P1), potential(-50.0, P1)
    assert math.log(v1 / v2) == pytest.approx(10 / 2, rel=1e-3)
    # far side: ~ 2M / r_star^3
    big = 1e6
    assert potential(big, P1) * big**3 / 2 == pytest.approx(1.0, rel=1e-4)


@pytest.mark.parametrize("x", [-5.0, 0.0, 5.0])
def test_potential_derivative_central_difference(x):
    errs = []
    for h in (1e-2, 5e-3):
        fd = (potential(x + h, P1) - potential(x - h, P1)) / (2 * h)
        errs.append(abs(fd - potential_derivative(x, P1)))
    assert errs[0] < 1e-6
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_virial_potential_decay_is_bounded():
    g = Grid(4096, -400, 400)
    W = g.V + g.r_star * g.dV
    scaled = np.abs(W) * (1 + g.r_star**2) ** 1.5
    i = int(np.argmax(scaled))
    assert np.isfinite(scaled).all()
    assert abs(g.r_star[i]) < 50


def test_grid_invariants():
    g = Grid(1024, -80, 120)
    assert g.spacing == pytest.approx(200 / 1024)
    # r itself rounds to 2M far down the horizon channel; the offset r - 2M does not
    assert np.all(np.diff(g.delta) > 0)
    assert np.all(g.delta > 0)
    assert np.all(np.diff(g.r) >= 0) and np.all(g.r >= 2.0)
    back = tortoise_from_offset(g.delta, g.params)
    assert np.all(np.abs(back - g.r_star) < 1e-12 * np.maximum(1, np.abs(g.r_star)))
    assert np.all(g.V > 0)
    assert g.V[0] < 1e-15 and g.V[-1] < 1e-5
    with pytest.raises(ValueError):
        g.r[0] = 0.0


def test_grid_rejects_bad_sizes():
    with pytest.raises((GeometryError, ValueError)):
        Grid(1000, -10, 10)
    with pytest.raises((GeometryError, ValueError)):
        Grid(64, 10, -10)


def test_spectral_derivative_of_periodic_function():
    g = Grid.with_profile(128, 0.0, 2 * np.pi)
    x = g.r_star
    f = np.sin(3 * x) + np.cos(5 * x)
    d = g.derivative(f)
    assert np.isrealobj(d)
    assert np.max(np.abs(d - (3 * np.cos(3 * x) - 5 * np.sin(5 * x)))) < 1e-12
