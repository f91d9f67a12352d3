"""Synthetic panel generator with a hidden AR(1) confounder.

The macro series ``A``, the confounder ``U`` and the unit outcomes ``Y`` follow

    U[t+1] = phi_U U[t] + nu[t+1]
    A[t+1] = mu_A + phi_A A[t] + gamma_A U[t] + eta[t+1]
    Y[i,t+1] = m(I[i,t], A[t+1]) + gamma_Y U[t] + xi[i,t+1]

with ``I[i,t] = (Y[i,t], Y[i,t-1], X[i], A[t], A[t-1])``.  Arrays are stored
with ``n_periods + 1`` time columns: column 0 is the presample draw and columns
``1..n_periods`` are the observed months.

Ground-truth path means are computed by simulating the future under a fixed
macro path while the confounder is drawn from its law given the macro history
(interventional) or given the macro history *and* the imposed path
(observational).  Both laws are linear-Gaussian in ``U``, so the confounder
draws are exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

OVERFLOW_LIMIT = 1e12

FEATURE_NAMES = ("y_t", "y_tm1", "x", "a_t", "a_tm1", "a_next")


class SimulationOverflow(ArithmeticError):
    """Raised when a simulated outcome leaves the finite range."""

    def __init__(self, unit: int, t: int, value: float):
        super().__init__(f"outcome overflow at unit={unit}, t={t}: {value!r}")
        self.unit = unit
        self.t = t
        self.value = value


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the synthetic panel.

    Parameters
    ----------
    n_units, n_periods : int
        Panel size; ``n_periods`` counts observed months (the presample
        column is extra).
    t0 : int
        Intervention month; the pre-period is ``1..t0``.
    horizon : int
        Forecast horizon ``H``.
    phi_A, sigma_A, mu_A : float
        Macro AR(1) persistence, innovation std and intercept.
    phi_U, sigma_U : float
        Confounder persistence and innovation std.
    gamma_A, gamma_Y : float
        Confounder loading on the macro and on the outcome.
    beta : tuple
        ``(alpha, beta1, beta2, beta3, beta4)``.  The linear outcome uses
        ``beta3`` on the covariate; the nonlinear one uses ``beta3`` on
        ``A**2`` and ``beta4`` on the covariate.
    nonlinear : bool
        Adds the quadratic macro term and the barrier
        ``gamma_max * max(Y - y_bar, 0)``.
    sigma_xi : float
        Outcome innovation std.
    seed : int
        Master seed.
    """

    n_units: int = 5000
    n_periods: int = 72
    t0: int = 60
    horizon: int = 12
    phi_A: float = 0.9
    sigma_A: float = 0.3
    mu_A: float = 0.0
    phi_U: float = 0.85
    sigma_U: float = 0.5
    gamma_A: float = 0.0
    gamma_Y: float = 0.0
    beta: tuple = (1.0, 0.5, 0.5, 0.5, 0.5)
    nonlinear: bool = False
    gamma_max: float = 0.12
    y_bar: float = 14.0
    sigma_xi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.beta) != 5:
            raise ValueError("beta must hold (alpha, beta1, beta2, beta3, beta4)")
        if self.n_units < 1:
            raise ValueError("n_units must be >= 1")
        if not 1 <= self.t0 < self.n_periods:
            raise ValueError("need 1 <= t0 < n_periods")
        if not 1 <= self.horizon <= self.n_periods - self.t0:
            raise ValueError("need 1 <= horizon <= n_periods - t0")
        if min(self.sigma_A, self.sigma_U, self.sigma_xi) < 0:
            raise ValueError("innovation std must be non-negative")
        if abs(self.phi_A) >= 1 or abs(self.phi_U) >= 1:
            raise ValueError("|phi_A| and |phi_U| must be < 1")

    @property
    def alpha(self) -> float:
        return self.beta[0]

    @property
    def beta1(self) -> float:
        return self.beta[1]

    @property
    def rho(self) -> float:
        """Lipschitz constant of the outcome recursion in the lagged outcome.

        The barrier adds slope ``gamma_max`` above ``y_bar``.
        """
        if self.nonlinear:
            return max(abs(self.beta1), abs(self.beta1 + self.gamma_max))
        return abs(self.beta1)

    @property
    def macro_stationary_std(self) -> float:
        return self.sigma_A / np.sqrt(1.0 - self.phi_A**2)

    def with_(self, **changes) -> "DgpConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown DgpConfig fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "DgpConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def one_step_mean(self, features: np.ndarray) -> np.ndarray:
        """Structural conditional mean ``m(state, a_next)`` with ``U`` at zero.

        Exact one-step mean when the confounder is switched off.
        """
        f = np.asarray(features, dtype=float)
        alpha, b1, b2, b3, b4 = self.beta
        y, x, a_next = f[..., 0], f[..., 2], f[..., 5]
        if not self.nonlinear:
            return alpha + b1 * y + b2 * a_next + b3 * x
        barrier = self.gamma_max * np.maximum(y - self.y_bar, 0.0)
        return alpha + b1 * y + b2 * a_next + b3 * a_next**2 + barrier + b4 * x

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return self.one_step_mean(features)


@dataclass
class Panel:
    """Rectangular panel; time columns ``0..n_periods`` (0 is presample)."""

    outcomes: np.ndarray
    covariates: np.ndarray
    macro: np.ndarray
    t0: int
    confounder: np.ndarray | None = None

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        self.macro = np.asarray(self.macro, dtype=float)
        n, tt = self.outcomes.shape
        if self.covariates.shape != (n,):
            raise ValueError("covariates must have one entry per unit")
        if self.macro.shape != (tt,):
            raise ValueError("macro length must match the outcome time axis")
        if self.confounder is not None:
            self.confounder = np.asarray(self.confounder, dtype=float)
            if self.confounder.shape != (tt,):
                raise ValueError("confounder length must match the outcome time axis")
        if not 1 <= self.t0 < tt:
            raise ValueError("t0 outside the panel")

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1] - 1


@dataclass(frozen=True)
class StateVector:
    y_t: float
    y_tm1: float
    x: float
    a_t: float
    a_tm1: float

    def as_array(self) -> np.ndarray:
        return np.array([self.y_t, self.y_tm1, self.x, self.a_t, self.a_tm1])


@dataclass(frozen=True)
class PolicyPath:
    """Macro values for months ``t0+1..t0+H``.

    ``kind`` is one of ``baseline``, ``stress_ksigma``, ``named``, ``realized``.
    """

    values: tuple
    kind: str = "named"
    k_sigma: float | None = None
    label: str = ""

    def __post_init__(self):
        vals = tuple(float(v) for v in np.asarray(self.values, dtype=float).ravel())
        if not vals or not np.all(np.isfinite(vals)):
            raise ValueError("policy path must be non-empty and finite")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def to_dict(self) -> dict:
        return {"values": list(self.values), "kind": self.kind,
                "k_sigma": self.k_sigma, "label": self.label}


def replication_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for replication ``key`` under master ``seed``.

    Streams are ``SeedSequence(seed, spawn_key=key)``, so they are independent
    of execution order.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def simulate_confounder(config: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    """AR(1) confounder started from its stationary law."""
    n = config.n_periods + 1
    nu = rng.standard_normal(n) * config.sigma_U
    u = np.empty(n)
    u[0] = nu[0] / np.sqrt(1.0 - config.phi_U**2)
    for t in range(1, n):
        u[t] = config.phi_U * u[t - 1] + nu[t]
    return u


def simulate_macro(config: DgpConfig, confounder: np.ndarray, rng: np.random.Generator,
                   innovations: np.ndarray | None = None, a0: float | None = None) -> np.ndarray:
    """Macro recursion driven by the confounder.

    ``A[0]`` is drawn from the stationary law of the ``gamma_A = 0`` process
    unless ``a0`` is given.  ``innovations`` (length ``n_periods + 1``, entry 0
    unused) replaces the Gaussian shocks, which is how a real series is
    replayed.
    """
    u = np.asarray(confounder, dtype=float)
    n = config.n_periods + 1
    if u.shape != (n,):
        raise ValueError("confounder length must be n_periods + 1")
    eta = rng.standard_normal(n) * config.sigma_A
    if innovations is not None:
        eta = np.asarray(innovations, dtype=float)
        if eta.shape != (n,):
            raise ValueError("innovations length must be n_periods + 1")
    a = np.empty(n)
    if a0 is None:
        mean0 = config.mu_A / (1.0 - config.phi_A)
        a[0] = mean0 + rng.standard_normal() * config.macro_stationary_std
    else:
        a[0] = float(a0)
    for t in range(n - 1):
        a[t + 1] = config.mu_A + config.phi_A * a[t] + config.gamma_A * u[t] + eta[t + 1]
    return a


def _step(config: DgpConfig, y, y_lag, x, a_t, a_lag, a_next, u_t, xi):
    feats = np.stack(np.broadcast_arrays(y, y_lag, x, a_t, a_lag, a_next), axis=-1)
    return config.one_step_mean(feats) + config.gamma_Y * u_t + xi


def simulate_panel(config: DgpConfig, macro: np.ndarray, confounder: np.ndarray,
                   rng: np.random.Generator) -> Panel:
    """Outcome panel given the macro and confounder series."""
    n, tt = config.n_units, config.n_periods + 1
    macro = np.asarray(macro, dtype=float)
    confounder = np.asarray(confounder, dtype=float)
    if macro.shape != (tt,) or confounder.shape != (tt,):
        raise ValueError("macro and confounder must have length n_periods + 1")
    x = rng.standard_normal(n)
    y = np.empty((n, tt))
    y[:, 0] = rng.standard_normal(n)
    xi = rng.standard_normal((n, tt)) * config.sigma_xi
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(tt - 1):
            y_lag = y[:, t - 1] if t > 0 else y[:, 0]
            a_lag = macro[t - 1] if t > 0 else macro[0]
            y[:, t + 1] = _step(config, y[:, t], y_lag, x, macro[t], a_lag,
                                macro[t + 1], confounder[t], xi[:, t + 1])
            bad = ~(np.abs(y[:, t + 1]) <= OVERFLOW_LIMIT)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise SimulationOverflow(i, t + 1, float(y[i, t + 1]))
    return Panel(outcomes=y, covariates=x, macro=macro, confounder=confounder, t0=config.t0)


def simulate(config: DgpConfig, rng: np.random.Generator | None = None,
             macro_innovations: np.ndarray | None = None, a0: float | None = None) -> Panel:
    """Confounder, macro and panel in one call (seeded from ``config.seed``)."""
    if rng is None:
        rng = replication_rng(config.seed)
    u = simulate_confounder(config, rng)
    a = simulate_macro(config, u, rng, innovations=macro_innovations, a0=a0)
    return simulate_panel(config, a, u, rng)


def build_state(panel: Panel, unit: int, t: int) -> StateVector:
    """State ``(Y_t, Y_{t-1}, X, A_t, A_{t-1})`` of one unit."""
    if t < 1:
        raise ValueError("state needs one lag; t must be >= 1")
    if not 0 <= unit < panel.n_units:
        raise IndexError(f"unit {unit} out of range")
    if t > panel.n_periods:
        raise IndexError(f"t={t} out of range")
    y = panel.outcomes
    return StateVector(float(y[unit, t]), float(y[unit, t - 1]), float(panel.covariates[unit]),
                       float(panel.macro[t]), float(panel.macro[t - 1]))


def panel_states(panel: Panel, t: int) -> np.ndarray:
    """All unit states at month ``t`` as an ``(N, 5)`` array."""
    if t < 1:
        raise ValueError("state needs one lag; t must be >= 1")
    y = panel.outcomes
    n = panel.n_units
    return np.column_stack([y[:, t], y[:, t - 1], panel.covariates,
                            np.full(n, panel.macro[t]), np.full(n, panel.macro[t - 1])])


def make_stress_path(macro_history: Sequence[float], k_sigma: float, horizon: int, *,
                     phi: float, sigma: float, intercept: float = 0.0) -> PolicyPath:
    """Deterministic AR(1) continuation shifted by ``k_sigma`` stationary std.

    ``k_sigma = 0`` gives the baseline path.
    """
    hist = np.asarray(macro_history, dtype=float)
    if hist.size == 0:
        raise ValueError("macro history is empty")
    if k_sigma < 0:
        raise ValueError("k_sigma must be >= 0")
    base = np.empty(horizon)
    prev = hist[-1]
    for j in range(horizon):
        prev = intercept + phi * prev
        base[j] = prev
    if k_sigma == 0:
        return PolicyPath(base, kind="baseline", k_sigma=0.0)
    shift = k_sigma * sigma / np.sqrt(1.0 - phi**2)
    return PolicyPath(base + shift, kind="stress_ksigma", k_sigma=float(k_sigma))


# --- ground truth ---------------------------------------------------------


def _filter_confounder(config: DgpConfig, macro: np.ndarray, t0: int) -> tuple[float, float]:
    """Predictive mean/variance of ``U[t0]`` given ``A[0..t0]``."""
    g, s2 = config.gamma_A, config.sigma_A**2
    m, p = 0.0, config.sigma_U**2 / (1.0 - config.phi_U**2)
    for k in range(t0):
        z = macro[k + 1] - config.mu_A - config.phi_A * macro[k]
        denom = g * g * p + s2
        if g != 0.0 and denom > 0:
            gain = p * g / denom
            m += gain * (z - g * m)
            p *= 1.0 - gain * g
        m = config.phi_U * m
        p = config.phi_U**2 * p + config.sigma_U**2
    return m, p


def confounder_posterior(config: DgpConfig, macro: np.ndarray, t0: int, h: int,
                         path: PolicyPath | np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian law of ``U[t0..t0+h-1]`` given the macro history.

    With ``path`` the law also conditions on ``A[t0+1..t0+h] = path``
    (observational); without it ``U`` keeps its own law (interventional).
    """
    m, p = _filter_confounder(config, np.asarray(macro, dtype=float), t0)
    phi, s2u = config.phi_U, config.sigma_U**2
    var = np.empty(h)
    mean = np.empty(h)
    var[0], mean[0] = p, m
    for j in range(1, h):
        var[j] = phi**2 * var[j - 1] + s2u
        mean[j] = phi * mean[j - 1]
    idx = np.arange(h)
    lo = np.minimum.outer(idx, idx)
    cov = phi ** np.abs(np.subtract.outer(idx, idx)) * var[lo]
    if path is None or config.gamma_A == 0.0:
        return mean, cov
    a = np.asarray(path, dtype=float)[:h]
    prev = np.concatenate([[macro[t0]], a[:-1]])
    z = a - config.mu_A - config.phi_A * prev
    g = config.gamma_A
    s = g * g * cov + config.sigma_A**2 * np.eye(h)
    gain = np.linalg.lstsq(s, g * cov, rcond=None)[0].T
    post_mean = mean + gain @ (z - g * mean)
    post_cov = cov - g * gain @ cov
    return post_mean, 0.5 * (post_cov + post_cov.T)


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass
class PathMeans:
    """Monte Carlo path means per horizon with their standard errors."""

    mean: np.ndarray
    se: np.ndarray
    draws: np.ndarray = field(repr=False)


def path_means(config: DgpConfig, panel: Panel, paths: dict, h: int, n_mc: int,
               rng: np.random.Generator, laws: Sequence[str] = ("do", "obs")) -> dict:
    """Mean outcome ``E[Y[t0+j]]``, ``j = 1..h``, under each path and law.

    The same confounder shocks and outcome innovations are shared by every
    (path, law) pair, so contrasts are computed with common random numbers.
    Returns ``{(path_name, law): PathMeans}``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    t0, n = panel.t0, panel.n_units
    z_u = rng.standard_normal((n_mc, h))
    xi = rng.standard_normal((h, n_mc, n)) * config.sigma_xi
    y0 = np.broadcast_to(panel.outcomes[:, t0], (n_mc, n))
    y0_lag = np.broadcast_to(panel.outcomes[:, t0 - 1], (n_mc, n))
    out = {}
    for name, path in paths.items():
        a = np.asarray(path, dtype=float)
        if a.size < h:
            raise ValueError(f"path {name!r} shorter than h={h}")
        a_full = np.concatenate([[panel.macro[t0 - 1], panel.macro[t0]], a[:h]])
        for law in laws:
            if law not in ("do", "obs"):
                raise ValueError(f"unknown law {law!r}")
            mu, cov = confounder_posterior(config, panel.macro, t0, h, a if law == "obs" else None)
            u = mu + z_u @ _sqrt_psd(cov).T
            y, y_lag = y0, y0_lag
            draws = np.empty((n_mc, h))
            for j in range(h):
                y_new = _step(config, y, y_lag, panel.covariates, a_full[j + 1], a_full[j],
                              a_full[j + 2], u[:, j:j + 1], xi[j])
                y_lag, y = y, y_new
                draws[:, j] = y.mean(axis=1)
            se = draws.std(axis=0, ddof=1) / np.sqrt(n_mc) if n_mc > 1 else np.zeros(h)
            out[(name, law)] = PathMeans(draws.mean(axis=0), se, draws)
    return out


@dataclass
class TauEstimate:
    value: float
    se: float


def _contrast(means: dict, law: str, h: int) -> TauEstimate:
    d = means[("S", law)].draws[:, h - 1] - means[("B", law)].draws[:, h - 1]
    se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0
    return TauEstimate(float(d.mean()), se)


def true_tau_do(config: DgpConfig, path_s, path_b, h: int, n_mc: int,
                rng: np.random.Generator, panel: Panel | None = None) -> TauEstimate:
    """Interventional contrast at horizon ``h`` by brute-force simulation.

    ``do(A = a)`` cuts the confounder-to-macro edge; the confounder still
    reaches the outcome.  Without ``panel`` a fresh one is simulated.
    """
    if panel is None:
        panel = simulate(config, rng)
    means = path_means(config, panel, {"S": path_s, "B": path_b}, h, n_mc, rng, laws=("do",))
    return _contrast(means, "do", h)


def true_tau_obs(config: DgpConfig, path_s, path_b, h: int, n_mc: int,
                 rng: np.random.Generator, panel: Panel | None = None) -> TauEstimate:
    """Observational contrast at horizon ``h`` (confounder conditioned on the path)."""
    if panel is None:
        panel = simulate(config, rng)
    means = path_means(config, panel, {"S": path_s, "B": path_b}, h, n_mc, rng, laws=("obs",))
    return _contrast(means, "obs", h)


@dataclass
class ConfoundingTruth:
    """Per-horizon truth for a (stress, baseline) pair.

    ``gap_s`` and ``gap_b`` are ``mu_do - mu_obs`` for each path.
    """

    tau_do: np.ndarray
    tau_obs: np.ndarray
    gap_s: np.ndarray
    gap_b: np.ndarray
    tau_do_se: np.ndarray
    tau_obs_se: np.ndarray

    @property
    def c_h(self) -> np.ndarray:
        return np.maximum(np.abs(self.gap_s), np.abs(self.gap_b))


def confounding_truth(config: DgpConfig, panel: Panel, path_s, path_b, h: int, n_mc: int,
                      rng: np.random.Generator) -> ConfoundingTruth:
    """``tau_do``, ``tau_obs`` and the per-path gaps for horizons ``1..h``."""
    means = path_means(config, panel, {"S": path_s, "B": path_b}, h, n_mc, rng)

    def diff(law):
        d = means[("S", law)].draws - means[("B", law)].draws
        se = d.std(axis=0, ddof=1) / np.sqrt(n_mc) if n_mc > 1 else np.zeros(h)
        return d.mean(axis=0), se

    tau_do, se_do = diff("do")
    tau_obs, se_obs = diff("obs")
    gap_s = means[("S", "do")].mean - means[("S", "obs")].mean
    gap_b = means[("B", "do")].mean - means[("B", "obs")].mean
    return ConfoundingTruth(tau_do, tau_obs, gap_s, gap_b, se_do, se_obs)


def linear_impulse_response(config: DgpConfig, path_s, path_b, h: int) -> float:
    """Closed-form linear contrast ``sum_j beta1**(h-j) beta2 (aS_j - aB_j)``."""
    b1, b2 = config.beta[1], config.beta[2]
    d = np.asarray(path_s, dtype=float)[:h] - np.asarray(path_b, dtype=float)[:h]
    j = np.arange(1, h + 1)
    return float(np.sum(b1 ** (h - j) * b2 * d))
