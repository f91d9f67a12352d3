from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stresspath.dgp import DgpConfig, linear_impulse_response, path_means, replication_rng, simulate
from stresspath.learner import FittedModel, LearnerSpec, assemble_training, estimate_eps_trajectory
from stresspath.rollout import (InsufficientOrigins, classify_regime, crossover_horizon, direct_estimator,
                                gamma_factor, mean_state_bias, oracle_bound, oracle_rollout,
                                path_contrast, recursive_rollout)


@pytest.fixture(scope="module")
def noiseless():
    cfg = DgpConfig(n_units=40, sigma_xi=0.0)
    return cfg, simulate(cfg, replication_rng(31))


def test_noiseless_oracle_reproduces_panel(noiseless):
    cfg, p = noiseless
    ro = recursive_rollout(cfg, p, 60, p.macro[61:73], 12)
    assert np.allclose(ro.per_unit, p.outcomes[:, 61:73], atol=1e-10)


def test_h1_is_mean_of_one_step(noiseless):
    cfg, p = noiseless
    m = FittedModel("ridge", np.array([0.1, 0.4, 0.2, 0.3, 0.0, 0.0, 0.7]))
    ro = recursive_rollout(m, p, 60, [1.3], 1)
    f = np.column_stack([p.outcomes[:, 60], p.outcomes[:, 59], p.covariates,
                         np.full(40, p.macro[60]), np.full(40, p.macro[59]), np.full(40, 1.3)])
    assert ro.mu_hat[0] == pytest.approx(m(f).mean())


def test_oracle_is_recursive_with_true_m(noiseless):
    cfg, p = noiseless
    a = recursive_rollout(cfg, p, 60, np.ones(5), 5)
    b = oracle_rollout(cfg, p, 60, np.ones(5), 5)
    assert np.array_equal(a.per_unit, b.per_unit)


def test_linear_oracle_matches_gformula():
    cfg = DgpConfig(n_units=200)
    rng = replication_rng(32)
    p = simulate(cfg, rng)
    path = np.linspace(0, 1, 8)
    mc = path_means(cfg, p, {"S": path}, 8, 400, rng, laws=("do",))[("S", "do")]
    det = oracle_rollout(cfg, p, 60, path, 8).mu_hat
    assert np.all(np.abs(mc.mean - det) <= 4 * mc.se + 1e-12)


def _perturbed(cfg, e, w):
    def m(f):
        return cfg(f) + e * np.tanh(np.asarray(f) @ w)
    return m


@settings(max_examples=25, deadline=None)
@given(b1=st.sampled_from([0.3, 0.5, 0.85, 1.05]), e=st.floats(0.01, 1.0),
       seed=st.integers(0, 10**6))
def test_per_unit_bound_property(b1, e, seed):
    cfg = DgpConfig(n_units=30, beta=(1.0, b1, 0.5, 0.5, 0.5))
    p = simulate(cfg, replication_rng(seed))
    w = np.random.default_rng(seed).normal(size=6)
    m = _perturbed(cfg, e, w)
    path = p.macro[61:73]
    ro, orc = recursive_rollout(m, p, 60, path, 12), oracle_rollout(cfg, p, 60, path, 12)
    eps = estimate_eps_trajectory(m, cfg, ro.states_visited).eps_n
    bound = oracle_bound(eps, cfg.rho, 12).bound
    assert np.all(np.abs(ro.per_unit - orc.per_unit) <= bound * (1 + 1e-9) + 1e-12)


def test_direct_h1_matches_recursive_ridge():
    cfg = DgpConfig(n_units=200)
    p = simulate(cfg, replication_rng(33))
    spec = LearnerSpec(kind="ridge", ridge_lambda=0.0)
    path = np.full(3, 0.4)
    d = direct_estimator(p, 60, path, 3, spec)
    r = recursive_rollout(spec.fit(assemble_training(p, 60)), p, 60, path, 3)
    assert d.mu_hat[0] == pytest.approx(r.mu_hat[0], abs=1e-9)


def test_direct_exact_on_noiseless_linear(noiseless):
    cfg, p = noiseless
    path = np.linspace(0.2, -0.3, 6)
    # noiseless outcomes make the lagged outcome collinear with the state, so a tiny penalty
    d = direct_estimator(p, 60, path, 6, LearnerSpec(kind="ridge", ridge_lambda=1e-9))
    truth = oracle_rollout(cfg, p, 60, path, 6)
    assert np.allclose(d.per_unit, truth.per_unit, atol=1e-5)


def test_direct_insufficient_origins(noiseless):
    _, p = noiseless
    with pytest.raises(InsufficientOrigins):
        direct_estimator(p, 60, np.zeros(12), 12, LearnerSpec(kind="ridge"), min_origins=55)


def test_gamma_factor_examples():
    assert gamma_factor(1.0, 5) == 5
    assert gamma_factor(0.5, 12) == pytest.approx(1.99951171875, abs=1e-12)
    assert round(gamma_factor(1.05, 12), 2) == 15.92
    assert gamma_factor(0.0, 7) == 1.0


@settings(max_examples=200, deadline=None)
@given(rho=st.floats(0, 1.2), h=st.integers(1, 24))
def test_gamma_closed_form_property(rho, h):
    closed = h if rho == 1 else (1 - rho**h) / (1 - rho)
    assert gamma_factor(rho, h) == pytest.approx(closed, rel=1e-12, abs=1e-12)


def test_oracle_bound_examples():
    assert np.all(oracle_bound(0.0, 0.85, 12).bound == 0)
    far = oracle_bound(0.3, 0.5, 200).bound[-1]
    assert far == pytest.approx(0.3 / (1 - 0.5))
    with pytest.raises(ValueError):
        oracle_bound(-1.0, 0.5, 3)


def test_crossover_examples():
    assert crossover_horizon([0.1, 0.2], [1.0, 1.0]) is None
    assert crossover_horizon([2.0, 3.0], [1.0, 1.0]) == 1
    assert crossover_horizon([0.1, 0.5, 1.5], [1.0, 1.0, 1.0]) == 3
    assert crossover_horizon([1.0], [1.0]) is None  # strict inequality
    with pytest.raises(ValueError):
        crossover_horizon([1.0], [1.0, 2.0])


def test_classify_regime():
    assert classify_regime(0.5) == "contracting"
    assert classify_regime(1.01) == "critical"
    assert classify_regime(1.05) == "expanding"


def test_mean_state_bias_linear_and_noiseless():
    cfg = DgpConfig(n_units=300)
    rng = replication_rng(34)
    b = mean_state_bias(cfg, np.ones(12), 12, 100, rng).b_h
    assert np.all(np.abs(b) < 1e-3)
    non = DgpConfig(n_units=300, nonlinear=True, sigma_xi=0.0, beta=(8.0, 0.85, 0.5, 0.5, 0.5))
    b0 = mean_state_bias(non, np.ones(12), 12, 10, rng).b_h
    assert np.all(np.abs(b0) < 1e-10)  # zero up to summation order


def test_mean_state_bias_nonlinear_positive():
    cfg = DgpConfig(n_units=300, nonlinear=True, sigma_xi=2.0, beta=(2.1, 0.85, 0.5, 0.0, 0.5))
    b = mean_state_bias(cfg, np.zeros(12), 12, 200, replication_rng(35)).b_h
    assert b[-1] > 0 and np.all(np.diff(b[2:]) > -0.01)


def test_path_contrast(noiseless):
    cfg, p = noiseless
    s, b = np.full(6, 1.0), np.zeros(6)
    rs, rb = oracle_rollout(cfg, p, 60, s, 6), oracle_rollout(cfg, p, 60, b, 6)
    tau = path_contrast(rs, rb)
    assert tau[-1] == pytest.approx(linear_impulse_response(cfg, s, b, 6))
    assert np.all(path_contrast(rs, rs) == 0)


def test_rollout_deterministic_and_blowup(noiseless):
    cfg, p = noiseless
    m = FittedModel("ridge", np.array([0.0, 50.0, 0, 0, 0, 0, 0]))
    a = recursive_rollout(m, p, 60, np.zeros(12), 12)
    b = recursive_rollout(m, p, 60, np.zeros(12), 12)
    assert np.array_equal(a.per_unit, b.per_unit)
    assert a.blowup_h is not None and np.all(np.isfinite(a.per_unit))
