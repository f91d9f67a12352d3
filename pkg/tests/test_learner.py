from __future__ import annotations

import numpy as np
import pytest

from stresspath.dgp import DgpConfig, replication_rng, simulate
from stresspath.learner import (FittedModel, InsufficientHistory, LearnerSpec, SingularSystem, TrainingSet,
                                assemble_training, estimate_eps_trajectory, fit_extra_trees, fit_ridge,
                                heldout_split)
from stresspath.rollout import recursive_rollout

from conftest import hand_panel


def test_training_rows_counting_and_alignment():
    p = hand_panel(n_units=2, n_periods=3, t0=3)
    ts = assemble_training(p, 3)
    assert len(ts) == 4
    for feat, target, (i, t) in zip(ts.features, ts.targets, ts.origins):
        assert target == p.outcomes[i, t + 1]
        assert feat[5] == p.macro[t + 1] and feat[3] == p.macro[t]


def test_training_errors():
    p = hand_panel(n_periods=3, t0=2)
    with pytest.raises(InsufficientHistory):
        assemble_training(p, 1)


def test_constant_target():
    ts = TrainingSet(np.random.default_rng(0).normal(size=(50, 6)), np.full(50, 2.5), np.zeros((50, 2)))
    m = fit_extra_trees(ts, n_estimators=5, rng=0)
    assert np.all(m(np.random.default_rng(1).normal(size=(10, 6))) == 2.5)


@pytest.fixture(scope="module")
def linear_panel():
    cfg = DgpConfig(n_units=5000)
    return cfg, simulate(cfg, replication_rng(21))


def test_extra_trees_noise_floor(linear_panel):
    cfg, p = linear_panel
    train, test = heldout_split(assemble_training(p, 60, t_start=40), 0.2)
    m = fit_extra_trees(train, n_estimators=30, rng=0)
    rmse = np.sqrt(np.mean((m(test.features) - test.targets) ** 2))
    assert abs(rmse / cfg.sigma_xi - 1) < 0.2


def test_ensemble_variance_shrinks(linear_panel):
    _, p = linear_panel
    ts = assemble_training(p, 60, t_start=50)
    probe = ts.features[:200]
    one = np.array([fit_extra_trees(ts, 1, rng=s)(probe) for s in range(3)])
    many = np.array([fit_extra_trees(ts, 100, rng=s)(probe) for s in range(3)])
    ratio = many.std(axis=0).mean() / one.std(axis=0).mean()
    assert ratio < 0.3


def test_ridge_exact_and_shrinkage():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 6))
    coef = np.array([0.3, 1.0, -2.0, 0.5, 0.0, 4.0, -1.0])
    y = coef[0] + x @ coef[1:]
    ts = TrainingSet(x, y, np.zeros((7, 2)))
    assert np.allclose(fit_ridge(ts, 0.0).params, coef, atol=1e-9)
    big = fit_ridge(ts, 1e12)
    assert np.allclose(big.params[1:], 0, atol=1e-9)
    assert np.allclose(big(x), y.mean(), atol=1e-8)


def test_ridge_singular():
    x = np.ones((10, 6))
    with pytest.raises(SingularSystem):
        fit_ridge(TrainingSet(x, np.arange(10.0), np.zeros((10, 2))), 0.0)


def test_ridge_consistency(linear_panel):
    _, p = linear_panel
    m = fit_ridge(assemble_training(p, 60))
    assert abs(m.params[1] - 0.5) < 0.02


def test_perfect_learner_eps_zero(linear_panel):
    cfg, p = linear_panel
    ro = recursive_rollout(cfg, p, 60, np.zeros(12), 12)
    rep = estimate_eps_trajectory(cfg, cfg, ro.states_visited)
    assert rep.eps_n == 0 and rep.mode == "oracle_trajectory" and rep.mean_abs == 0


def test_eps_modes():
    ts = TrainingSet(np.zeros((4, 6)), np.array([1.0, -1.0, 2.0, 0.0]), np.zeros((4, 2)))
    zero = FittedModel("constant", 0.0)
    rep = estimate_eps_trajectory(zero, heldout=ts)
    assert rep.mode == "heldout" and rep.eps_n == 2.0 and rep.mean_abs == 1.0
    with pytest.raises(ValueError):
        estimate_eps_trajectory(zero)


def test_model_round_trip(tmp_path, linear_panel):
    _, p = linear_panel
    ts = assemble_training(p, 60, t_start=55)
    for m in (fit_extra_trees(ts, 3, rng=0), fit_ridge(ts, 0.1), FittedModel("constant", 1.5)):
        m.save(tmp_path / "m.bin")
        back = FittedModel.load(tmp_path / "m.bin")
        assert back.kind == m.kind
        assert np.array_equal(back(ts.features[:20]), m(ts.features[:20]))
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        FittedModel.load(tmp_path / "bad.bin")


def test_predict_accepts_leading_dims():
    m = FittedModel("ridge", np.arange(7, dtype=float))
    f = np.ones((3, 4, 6))
    assert m(f).shape == (3, 4)


def test_learner_spec_seeded(linear_panel):
    _, p = linear_panel
    ts = assemble_training(p, 60, t_start=57)
    a = LearnerSpec(n_estimators=5, seed=3).fit(ts)(ts.features[:50])
    b = LearnerSpec(n_estimators=5, seed=3).fit(ts)(ts.features[:50])
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        LearnerSpec(kind="svm").fit(ts)
