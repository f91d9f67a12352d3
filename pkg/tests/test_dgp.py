from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stresspath.dgp import (DgpConfig, PolicyPath, SimulationOverflow, build_state, confounder_posterior,
                            linear_impulse_response, make_stress_path, panel_states, replication_rng,
                            simulate, simulate_confounder, simulate_macro, simulate_panel, true_tau_do,
                            true_tau_obs)

from conftest import hand_panel


def test_confounder_degenerate_noise():
    cfg = DgpConfig(sigma_U=0.0, phi_U=0.3)
    assert np.all(simulate_confounder(cfg, replication_rng(0)) == 0)


def test_confounder_stationary_variance():
    # sigma_U^2 / (1 - phi_U^2) = 0.25 / 0.2775 = 0.9009
    cfg = DgpConfig(n_periods=10**6, t0=10, phi_U=0.85, sigma_U=0.5)
    u = simulate_confounder(cfg, replication_rng(1))
    target = 0.25 / (1 - 0.85**2)
    assert abs(u.var() / target - 1) < 0.02


def test_confounder_deterministic():
    cfg = DgpConfig()
    a = simulate_confounder(cfg, replication_rng(5, 1))
    b = simulate_confounder(cfg, replication_rng(5, 1))
    assert np.array_equal(a, b)


def test_macro_noiseless_decay():
    cfg = DgpConfig(sigma_A=0.0, gamma_A=0.0, n_periods=10, t0=5, horizon=5)
    a = simulate_macro(cfg, np.zeros(11), replication_rng(0), a0=2.0)
    assert np.allclose(a, 2.0 * 0.9 ** np.arange(11), rtol=0, atol=1e-15)


def test_macro_autocorrelation():
    cfg = DgpConfig(n_periods=200_000, t0=10)
    a = simulate_macro(cfg, np.zeros(200_001), replication_rng(2))
    r = np.corrcoef(a[1:], a[:-1])[0, 1]
    assert abs(r - 0.9) < 0.9 * 0.02


def test_macro_is_filter_of_confounder():
    cfg = DgpConfig(sigma_A=0.0, gamma_A=0.5, n_periods=5, t0=2, horizon=3)
    u = np.array([0.3, -1.0, 0.7, 0.2, -0.4, 0.9])
    a = simulate_macro(cfg, u, replication_rng(0), a0=0.0)
    # hand-unrolled A[t] = sum_k 0.9^(t-1-k) * 0.5 * U[k]
    expected = [0.0]
    for t in range(1, 6):
        expected.append(sum(0.9 ** (t - 1 - k) * 0.5 * u[k] for k in range(t)))
    assert np.allclose(a, expected, atol=1e-14)


def test_memoryless_noiseless_panel():
    cfg = DgpConfig(n_units=20, sigma_xi=0.0, gamma_Y=0.0, beta=(1.0, 0.0, 0.5, 0.5, 0.5))
    p = simulate(cfg, replication_rng(3))
    a, x = p.macro, p.covariates
    expect = 1.0 + 0.5 * a[None, 1:] + 0.5 * x[:, None]
    assert np.allclose(p.outcomes[:, 1:], expect, atol=1e-12)


def test_ridge_recovers_beta1():
    from stresspath.learner import assemble_training, fit_ridge
    cfg = DgpConfig(n_units=5000)
    p = simulate(cfg, replication_rng(4))
    m = fit_ridge(assemble_training(p, 60))
    assert abs(m.params[1] - 0.5) < 0.02


def test_inactive_barrier_matches_linear():
    # nonlinear outcome with beta3 = 0 (no quadratic) and y_bar far above the
    # panel equals the linear outcome whose beta3 slot holds the covariate slope
    lin = DgpConfig(n_units=50, beta=(1.0, 0.5, 0.5, 0.5, 0.0))
    non = DgpConfig(n_units=50, beta=(1.0, 0.5, 0.5, 0.0, 0.5), nonlinear=True, y_bar=1e6)
    a = simulate(lin, replication_rng(9))
    b = simulate(non, replication_rng(9))
    assert np.array_equal(a.outcomes, b.outcomes)


def test_overflow_raises():
    cfg = DgpConfig(n_units=5, beta=(1.0, 3.0, 0.5, 0.5, 0.5), n_periods=72)
    with pytest.raises(SimulationOverflow):
        simulate(cfg, replication_rng(0))


def test_build_state_constant_panel():
    p = hand_panel(n_units=2, y=np.full((2, 4), 3.0), x=np.array([0.5, 0.5]), a=np.ones(4))
    assert build_state(p, 0, 2).as_array().tolist() == [3, 3, 0.5, 1, 1]


def test_build_state_indexing_and_errors():
    p = hand_panel()
    s = build_state(p, 0, 2)
    assert (s.y_t, s.y_tm1, s.x, s.a_t, s.a_tm1) == (2.0, 1.0, 0.1, 1.0, 0.5)
    with pytest.raises(IndexError):
        build_state(p, 5, 2)
    assert np.array_equal(panel_states(p, 2)[1], build_state(p, 1, 2).as_array())


def test_stress_path_examples():
    h = [0.0, 0.5, 0.8]
    assert make_stress_path(h, 0, 4, phi=0.9, sigma=0.3).values == \
        make_stress_path(h, 0.0, 4, phi=0.9, sigma=0.3).values
    assert make_stress_path([0.0], 0, 3, phi=0.9, sigma=0.3).values == (0.0, 0.0, 0.0)
    s = make_stress_path(h, 2, 5, phi=0.9, sigma=0.3).as_array()
    b = make_stress_path(h, 0, 5, phi=0.9, sigma=0.3).as_array()
    assert np.allclose(s - b, 1.3764944032233706)  # 0.6 / sqrt(0.19)


@settings(max_examples=30, deadline=None)
@given(k=st.floats(0, 5), a=st.floats(-3, 3), phi=st.floats(-0.95, 0.95))
def test_stress_path_offset_property(k, a, phi):
    s = make_stress_path([a], k, 6, phi=phi, sigma=0.3).as_array()
    b = make_stress_path([a], 0, 6, phi=phi, sigma=0.3).as_array()
    assert np.allclose(s - b, k * 0.3 / np.sqrt(1 - phi**2))


def test_policy_path_validation():
    with pytest.raises(ValueError):
        PolicyPath(())
    with pytest.raises(ValueError):
        PolicyPath((1.0, float("nan")))


def test_tau_do_linear_impulse():
    cfg = DgpConfig(n_units=200, gamma_Y=0.0)
    rng = replication_rng(11)
    p = simulate(cfg, rng)
    s = np.linspace(0.5, 1.0, 6)
    b = np.zeros(6)
    est = true_tau_do(cfg, s, b, 6, 400, rng, panel=p)
    exact = linear_impulse_response(cfg, s, b, 6)
    assert abs(est.value - exact) <= max(3 * est.se, 1e-10)


def test_tau_do_identical_paths():
    cfg = DgpConfig(n_units=100, gamma_A=0.5, gamma_Y=0.5)
    rng = replication_rng(12)
    p = simulate(cfg, rng)
    path = np.ones(4)
    est = true_tau_do(cfg, path, path, 4, 200, rng, panel=p)
    assert abs(est.value) <= max(3 * est.se, 1e-12)


def test_tau_obs_equals_do_without_confounding():
    cfg = DgpConfig(n_units=100)
    rng = replication_rng(13)
    p = simulate(cfg, rng)
    s, b = np.full(5, 1.0), np.zeros(5)
    a = true_tau_do(cfg, s, b, 5, 100, replication_rng(1), panel=p).value
    o = true_tau_obs(cfg, s, b, 5, 100, replication_rng(1), panel=p).value
    assert a == pytest.approx(o, abs=1e-12)


def test_posterior_without_path_is_prior_propagation():
    cfg = DgpConfig(gamma_A=0.0)
    mean, cov = confounder_posterior(cfg, np.zeros(73), 60, 3)
    assert np.allclose(mean, 0)
    assert cov[0, 0] == pytest.approx(0.25 / (1 - 0.85**2))


def test_determinism_bit_identical():
    cfg = DgpConfig(n_units=50, gamma_A=0.3, gamma_Y=0.3)
    a = simulate(cfg, replication_rng(42, 3))
    b = simulate(cfg, replication_rng(42, 3))
    assert np.array_equal(a.outcomes, b.outcomes) and np.array_equal(a.macro, b.macro)


def test_config_round_trip(tmp_path):
    cfg = DgpConfig(n_units=10, nonlinear=True, beta=(0.2, 0.85, 0.5, 0.5, 0.5))
    cfg.to_json(tmp_path / "c.json")
    assert DgpConfig.from_json(tmp_path / "c.json") == cfg
    with pytest.raises(ValueError):
        DgpConfig.from_dict({"bogus": 1})


def test_config_validation():
    with pytest.raises(ValueError):
        DgpConfig(t0=72)
    with pytest.raises(ValueError):
        DgpConfig(phi_A=1.0)
    with pytest.raises(ValueError):
        DgpConfig(beta=(1, 2))


def test_simulate_panel_shapes():
    cfg = DgpConfig(n_units=7)
    u = simulate_confounder(cfg, replication_rng(0))
    a = simulate_macro(cfg, u, replication_rng(0))
    p = simulate_panel(cfg, a, u, replication_rng(0))
    assert p.outcomes.shape == (7, 73) and p.n_periods == 72
