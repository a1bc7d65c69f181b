import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import free_gaussian_peak
from tortoise_nls import scattering as sc
from tortoise_nls.geometry import Grid
from tortoise_nls.state import ModelParams, gaussian, l2_norm

THR = (3 + math.sqrt(17)) / 2
G = Grid(1024, -250.0, 350.0)
A = G.params.alpha


def _diff(a, b):
    return l2_norm(a.copy(a.values - b.values))


def test_exponents_at_p5():
    ex = sc.strichartz_exponents(5.0)
    assert (ex.q, ex.kappa, ex.k) == (6.0, 3.0, 6.0)
    assert ex.q_prime == pytest.approx(1.2)
    assert ex.eta == pytest.approx(1.2)
    assert ex.admissible_wave_op and ex.admissible_completeness


def test_threshold_flags_are_strict():
    assert not sc.strichartz_exponents(THR).admissible_wave_op
    assert sc.strichartz_exponents(np.nextafter(THR, 10)).admissible_wave_op
    assert not sc.strichartz_exponents(4.0).admissible_completeness
    assert sc.strichartz_exponents(np.nextafter(4.0, 10)).admissible_completeness
    assert sc.WAVE_OP_THRESHOLD == pytest.approx(3.5615528128, rel=1e-10)


@pytest.mark.parametrize("p", [3.6, 4.0, 5.0, 7.0])
def test_exponent_identities_listed(p):
    assert max(sc.strichartz_exponents(p).identity_residuals()) < 1e-12


@given(st.floats(1.01, 50.0))
def test_exponent_identities_hold_for_all_p(p):
    ex = sc.strichartz_exponents(p)
    assert max(ex.identity_residuals()) < 1e-12
    # the dual exponent coincides with 1 + 1/p
    assert ex.q_prime == pytest.approx(1 + 1 / p, rel=1e-14)


def test_exponents_reject_p_at_most_one():
    with pytest.raises(ValueError):
        sc.strichartz_exponents(1.0)


def test_dispersive_ratio_q2_is_unitarity():
    phi = gaussian(G, A, 2.0, 0.5)
    r = sc.dispersive_ratio(phi, 2.0, [1, 5, 20])
    assert np.max(np.abs(r - 1)) < 1e-10


def test_free_dispersive_ratio_matches_exact_kernel():
    w = 1.0
    # a node sits at the centre so the sampled max is the true peak
    g = Grid(2048, -300.0, 300.0)
    phi = gaussian(g, 0.0, w)
    ts = [1.0, 3.0, 10.0, 30.0]
    r = sc.dispersive_ratio(phi, math.inf, ts, "free")
    l1 = (math.pi * w * w) ** -0.25 * w * math.sqrt(2 * math.pi)
    exact = np.sqrt(ts) * free_gaussian_peak(np.array(ts), w) / l1
    assert np.max(np.abs(r / exact - 1)) < 1e-9


def test_domain_guard():
    small = Grid(256, -20.0, 20.0)
    phi = gaussian(small, 0.0, 1.0, 1.0)
    with pytest.raises(sc.DomainGuardError):
        sc.dispersive_ratio(phi, math.inf, [1, 50])
    with pytest.warns(RuntimeWarning):
        sc.check_domain(phi, 50.0, override=True)


def test_extraction_is_identity_without_interaction():
    psi0 = gaussian(G, A, 2.0, 1.0)
    res = sc.extract_asymptotic_state(psi0, ModelParams(0.0), [5, 10, 20, 40])
    assert max(r for _, r in res.residual_history) < 1e-10
    assert _diff(res.psi_plus, psi0) < 1e-10
    assert [T for T, _ in res.residual_history] == [5, 10, 20]


def test_extraction_of_outgoing_nonlinear_data():
    psi0 = gaussian(G, A, 2.0, 1.0)
    res = sc.extract_asymptotic_state(psi0, ModelParams(1.0, 5.0), [5, 10, 20, 40])
    assert np.all(res.residual_ratios() >= 2)
    # each decrement is bounded by the brute-force interaction integral
    for (_, r), (_, b) in zip(res.residual_history, res.interaction_bounds):
        assert r <= 1.01 * b
    assert abs(l2_norm(res.psi_plus) - l2_norm(psi0)) <= res.residual_history[-1][1] + 1e-10


def test_extraction_warns_outside_completeness_regime():
    psi0 = gaussian(G, A, 2.0, 1.0)
    with pytest.warns(RuntimeWarning):
        sc.extract_asymptotic_state(psi0, ModelParams(1.0, 3.5), [2, 4])


def test_free_channel_is_identity_without_potential():
    g = Grid.with_profile(1024, -300.0, 300.0, r=3.0)
    psi = gaussian(g, 0.0, 2.0, 0.5)
    res = sc.free_channel_comparison(psi, [5, 10, 20])
    assert _diff(res.phi_plus, psi) < 1e-12


def test_free_channel_is_unitary_and_trivial_on_horizon_channel():
    psi = gaussian(G, A, 2.0, 1.0)
    res = sc.free_channel_comparison(psi, [5, 10, 20, 40])
    assert abs(l2_norm(res.phi_plus) - l2_norm(psi)) < 1e-10
    g = Grid(1024, -300.0, 100.0)
    far = gaussian(g, -150.0, 3.0, -0.5)
    res = sc.free_channel_comparison(far, [5, 10, 20])
    assert _diff(res.phi_plus, far) < 1e-12


def test_wave_operator_without_interaction_is_identity():
    psi_plus = gaussian(G, A, 2.0, 1.0)
    w = sc.construct_wave_operator(psi_plus, ModelParams(0.0), 20.0, 60.0)
    assert _diff(w.psi0, psi_plus) < 1e-10


def test_wave_operator_round_trip_and_contraction():
    psi_plus = gaussian(G, A, 2.0, 1.0)
    model = ModelParams(0.5, 5.0)
    w = sc.construct_wave_operator(psi_plus, model, 20.0, 60.0)
    assert w.iterations >= 2 and w.contraction_ratio < 1
    assert _diff(w.psi0, psi_plus) > 1e-5          # the interaction did something
    back = sc.extract_asymptotic_state(w.psi0, model, [5, 10, 20, 40, 60])
    assert _diff(back.psi_plus, psi_plus) < 1e-3


def test_wave_operator_rejects_large_tail():
    # data parked on the horizon side decay only like 1/s there
    psi_plus = gaussian(G, A, 2.0, 0.0)
    with pytest.raises(sc.ScatteringError):
        sc.construct_wave_operator(psi_plus, ModelParams(0.5), 20.0, 60.0)


def test_wave_operator_detects_non_contraction():
    g = Grid(512, -150.0, 150.0)
    psi_plus = gaussian(g, A, 1.0, 0.5, amplitude=6.0)
    with pytest.raises(sc.ScatteringError):
        sc.construct_wave_operator(psi_plus, ModelParams(50.0), 0.0, 10.0, max_iters=15,
                                   override_domain_guard=True)
