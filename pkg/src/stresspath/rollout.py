"""Recursive and direct multi-horizon estimators, amplification bound, bias."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dgp import OVERFLOW_LIMIT, DgpConfig, Panel, PolicyPath, panel_states, replication_rng, simulate
from .learner import LearnerSpec, TrainingSet

REGIME_TOL = 0.02


class InsufficientOrigins(ValueError):
    pass


def _as_path(path) -> np.ndarray:
    return path.as_array() if isinstance(path, PolicyPath) else np.asarray(path, dtype=float)


@dataclass
class RolloutResult:
    """Deterministic rollout from the month-``t0`` states.

    ``per_unit[i, h-1]`` is the prediction at ``t0 + h``; ``states_visited``
    has shape ``(H, N, 6)`` and holds the ``(state, a_next)`` rows fed to the
    model.  ``blowup_h`` is the first horizon whose prediction was non-finite
    or beyond the overflow limit (values were capped from there on).
    """

    per_unit: np.ndarray
    mu_hat: np.ndarray
    states_visited: np.ndarray = field(repr=False)
    path: np.ndarray
    blowup_h: int | None = None

    @property
    def horizon(self) -> int:
        return self.mu_hat.shape[0]

    def to_dict(self) -> dict:
        return {"mu_hat": self.mu_hat.tolist(), "path": self.path.tolist(), "blowup_h": self.blowup_h}


def recursive_rollout(model: Callable, panel: Panel, t0: int, path, horizon: int) -> RolloutResult:
    """Iterate ``Y_hat[t+1] = m_hat(I_hat[t], a[t+1])`` with the lag-shift update."""
    a = _as_path(path)
    if a.size < horizon:
        raise ValueError(f"path has {a.size} values, horizon is {horizon}")
    n = panel.n_units
    st = panel_states(panel, t0)
    y, y_lag, x = st[:, 0].copy(), st[:, 1].copy(), st[:, 2]
    a_t, a_lag = panel.macro[t0], panel.macro[t0 - 1]
    per_unit = np.empty((n, horizon))
    visited = np.empty((horizon, n, 6))
    blowup = None
    for k in range(horizon):
        feats = visited[k]
        feats[:, 0], feats[:, 1], feats[:, 2] = y, y_lag, x
        feats[:, 3], feats[:, 4], feats[:, 5] = a_t, a_lag, a[k]
        with np.errstate(over="ignore", invalid="ignore"):
            y_new = np.asarray(model(feats), dtype=float)
        bad = ~(np.abs(y_new) <= OVERFLOW_LIMIT)
        if bad.any():
            if blowup is None:
                blowup = k + 1
            y_new = np.where(np.isnan(y_new), OVERFLOW_LIMIT, y_new)
            y_new = np.clip(y_new, -OVERFLOW_LIMIT, OVERFLOW_LIMIT)
        per_unit[:, k] = y_new
        y_lag, y = y, y_new
        a_lag, a_t = a_t, a[k]
    return RolloutResult(per_unit, per_unit.mean(axis=0), visited, a[:horizon].copy(), blowup)


def oracle_rollout(true_m: Callable, panel: Panel, t0: int, path, horizon: int) -> RolloutResult:
    """Mean-state rollout of the true one-step mean (simulation only)."""
    return recursive_rollout(true_m, panel, t0, path, horizon)


def path_contrast(rollout_s: RolloutResult, rollout_b: RolloutResult) -> np.ndarray:
    if rollout_s.horizon != rollout_b.horizon:
        raise ValueError("rollouts have different horizons")
    return rollout_s.mu_hat - rollout_b.mu_hat


# --- direct estimator -----------------------------------------------------


def direct_training(panel: Panel, t0: int, h: int) -> TrainingSet:
    """Rows ``(state_s, A[s+1..s+h]) -> Y[s+h]`` pooled over origins ``s = 1..t0-h``."""
    n = panel.n_units
    blocks, targets, origins = [], [], []
    for s in range(1, t0 - h + 1):
        st = panel_states(panel, s)
        fut = np.broadcast_to(panel.macro[s + 1:s + h + 1], (n, h))
        blocks.append(np.hstack([st, fut]))
        targets.append(panel.outcomes[:, s + h])
        origins.append(np.column_stack([np.arange(n), np.full(n, s)]))
    return TrainingSet(np.vstack(blocks), np.concatenate(targets), np.vstack(origins))


@dataclass
class DirectResult:
    per_unit: np.ndarray
    mu_hat: np.ndarray
    models: list = field(default_factory=list, repr=False)


def direct_estimator(panel: Panel, t0: int, path, horizon: int, learner: LearnerSpec,
                     min_origins: int = 10, keep_models: bool = False) -> DirectResult:
    """One model per horizon, evaluated at ``(I[t0], path[:h])``."""
    a = _as_path(path)
    n = panel.n_units
    st = panel_states(panel, t0)
    per_unit = np.empty((n, horizon))
    models = []
    for h in range(1, horizon + 1):
        n_orig = t0 - h
        if n_orig < min_origins:
            raise InsufficientOrigins(f"h={h}: {n_orig} rolling origins < {min_origins}")
        model = learner.fit(direct_training(panel, t0, h))
        feats = np.hstack([st, np.broadcast_to(a[:h], (n, h))])
        per_unit[:, h - 1] = model(feats)
        if keep_models:
            models.append(model)
    return DirectResult(per_unit, per_unit.mean(axis=0), models)


# --- amplification --------------------------------------------------------


def gamma_factor(rho: float, h: int) -> float:
    """Partial geometric sum ``sum_{j<h} rho**j`` via ``G[k+1] = 1 + rho G[k]``."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if h < 1:
        raise ValueError("h must be >= 1")
    g = 1.0
    for _ in range(h - 1):
        g = 1.0 + rho * g
    return g


def classify_regime(rho: float, tol: float = REGIME_TOL) -> str:
    if abs(rho - 1.0) <= tol:
        return "critical"
    return "contracting" if rho < 1.0 else "expanding"


@dataclass
class AmplificationReport:
    rho: float
    gamma: np.ndarray
    bound: np.ndarray
    regime: str
    eps_n: float

    def to_dict(self) -> dict:
        return {"rho": self.rho, "eps_n": self.eps_n, "regime": self.regime,
                "gamma": self.gamma.tolist(), "bound": self.bound.tolist()}


def oracle_bound(eps_n, rho: float, horizon: int) -> AmplificationReport:
    """Learner-error term ``eps_n * Gamma_h`` for ``h = 1..H``."""
    eps = float(getattr(eps_n, "eps_n", eps_n))
    if eps < 0:
        raise ValueError("eps_n must be >= 0")
    gam = np.array([gamma_factor(rho, h) for h in range(1, horizon + 1)])
    return AmplificationReport(float(rho), gam, eps * gam, classify_regime(rho), eps)


def crossover_horizon(bound_per_h, direct_err_per_h) -> int | None:
    """Smallest ``h`` (1-based) with ``bound[h] > direct_err[h]``."""
    b = np.asarray(bound_per_h, dtype=float)
    d = np.asarray(direct_err_per_h, dtype=float)
    if b.shape != d.shape:
        raise ValueError("sequences must have equal length")
    hit = np.flatnonzero(b > d)
    return int(hit[0]) + 1 if hit.size else None


# --- mean-state bias ------------------------------------------------------


@dataclass
class BiasReport:
    b_h: np.ndarray
    se: np.ndarray
    mc_samples: int

    def to_dict(self) -> dict:
        return {"b_h": self.b_h.tolist(), "se": self.se.tolist(), "mc_samples": self.mc_samples}


def mean_state_bias(config: DgpConfig, path, horizon: int, n_mc: int,
                    rng: np.random.Generator, panel: Panel | None = None,
                    true_m: Callable | None = None, sigma: float | None = None,
                    antithetic: bool = True) -> BiasReport:
    """Jensen gap between the stochastic and the mean-state rollout.

    Innovations are Gaussian with std ``sigma`` (default ``config.sigma_xi``)
    and, with ``antithetic``, drawn in sign-flipped pairs; affine dynamics
    then give a gap of exactly zero up to rounding.
    """
    if n_mc < 2:
        raise ValueError("need n_mc >= 2")
    if panel is None:
        panel = simulate(config, rng)
    m = true_m if true_m is not None else config.one_step_mean
    sd = config.sigma_xi if sigma is None else float(sigma)
    a = _as_path(path)
    t0, n = panel.t0, panel.n_units
    det = oracle_rollout(m, panel, t0, a, horizon).mu_hat

    n_pairs = n_mc // 2 if antithetic else n_mc
    st = panel_states(panel, t0)
    y = np.broadcast_to(st[:, 0], (n_pairs, n)).copy()
    y_lag = np.broadcast_to(st[:, 1], (n_pairs, n)).copy()
    if antithetic:
        y, y_lag = np.concatenate([y, y]), np.concatenate([y_lag, y_lag])
    x = st[:, 2]
    a_t, a_lag = panel.macro[t0], panel.macro[t0 - 1]
    sums = np.empty((n_pairs, horizon))
    feats = np.empty(y.shape + (6,))
    for k in range(horizon):
        eps = rng.standard_normal((n_pairs, n)) * sd
        if antithetic:
            eps = np.concatenate([eps, -eps])
        feats[..., 0], feats[..., 1], feats[..., 2] = y, y_lag, x
        feats[..., 3], feats[..., 4], feats[..., 5] = a_t, a_lag, a[k]
        y_new = m(feats) + eps
        y_lag, y = y, y_new
        a_lag, a_t = a_t, a[k]
        means = y.mean(axis=1)
        sums[:, k] = 0.5 * (means[:n_pairs] + means[n_pairs:]) if antithetic else means
    b = (sums - det).mean(axis=0)
    se = sums.std(axis=0, ddof=1) / np.sqrt(n_pairs) if n_pairs > 1 else np.zeros(horizon)
    return BiasReport(b, se, n_pairs * (2 if antithetic else 1))
