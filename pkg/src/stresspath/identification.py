"""Identified sets under bounded confounding and the three-layer band.

With a confounding envelope ``c_h`` bounding the gap between interventional
and observational path means, the interventional contrast lies in
``tau_obs +/- 2 c_h``.  Adding the calibration half-width ``delta_est`` gives
the outer band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dgp import DgpConfig, Panel, PolicyPath, confounder_posterior, panel_states

MODES = ("dynamic", "constant", "explicit")


@dataclass(frozen=True)
class SensitivitySpec:
    """Analyst-chosen confounding envelope.

    Parameters
    ----------
    c1 : float
        One-step bound in outcome units.
    phi_u : float
        Assumed confounder persistence (a sensitivity input, not a DGP knob).
    mode : str
        ``dynamic`` uses the persistence formula, ``constant`` returns
        ``c1`` at every horizon, ``explicit`` reads ``c_list``.
    c_list : tuple
        Per-horizon envelopes for ``explicit`` mode.  Entries may be pairs
        ``(c_S, c_B)`` for path-specific bounds.
    """

    c1: float = 0.0
    phi_u: float = 0.0
    mode: str = "dynamic"
    c_list: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.c1 < 0:
            raise ValueError("c1 must be >= 0")
        if self.mode == "dynamic" and abs(self.phi_u) >= 1:
            raise ValueError("dynamic mode needs |phi_u| < 1")
        object.__setattr__(self, "c_list", tuple(self.c_list))

    def to_dict(self) -> dict:
        return {"c1": self.c1, "phi_u": self.phi_u, "mode": self.mode, "c_list": list(self.c_list)}

    @classmethod
    def from_dict(cls, d: dict) -> "SensitivitySpec":
        cl = tuple(tuple(c) if isinstance(c, (list, tuple)) else c for c in d.get("c_list", ()))
        return cls(float(d.get("c1", 0.0)), float(d.get("phi_u", 0.0)), d.get("mode", "dynamic"), cl)


def _half_width(spec: SensitivitySpec, h: int) -> float:
    """``c_S + c_B``, which is ``2 c_h`` in the symmetric case."""
    if spec.mode == "explicit":
        if h > len(spec.c_list):
            raise ValueError(f"explicit c_h list has {len(spec.c_list)} entries, need h={h}")
        c = spec.c_list[h - 1]
        if isinstance(c, tuple):
            if len(c) != 2 or min(c) < 0:
                raise ValueError("path-specific entries must be non-negative (c_S, c_B) pairs")
            return float(c[0] + c[1])
        if c < 0:
            raise ValueError("c_h must be >= 0")
        return 2.0 * float(c)
    return 2.0 * c_h_dynamic(spec, h)


def c_h_dynamic(spec: SensitivitySpec, h: int) -> float:
    """``c1 * sqrt((1 - phi**(2h)) / (1 - phi**2))`` in dynamic mode."""
    if h < 1:
        raise ValueError("h must be >= 1")
    if spec.mode == "constant":
        return float(spec.c1)
    if spec.mode == "explicit":
        return 0.5 * _half_width(spec, h)
    p2 = spec.phi_u**2
    if p2 == 0.0:
        return float(spec.c1)
    # the ratio is the partial sum of p2**j, which avoids cancellation near 1
    ratio = sum(p2**j for j in range(h))
    return float(spec.c1 * math.sqrt(ratio))


@dataclass
class IdentifiedSet:
    lower: np.ndarray
    upper: np.ndarray
    tau_obs: np.ndarray
    c_h: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, tau) -> np.ndarray:
        t = np.asarray(tau, dtype=float)
        return (self.lower <= t) & (t <= self.upper)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("lower", "upper", "tau_obs", "c_h")}


def identified_set(tau_obs_per_h, spec: SensitivitySpec) -> IdentifiedSet:
    """Per-horizon interval ``[tau - 2 c_h, tau + 2 c_h]`` for ``h = 1, 2, ...``."""
    tau = np.atleast_1d(np.asarray(tau_obs_per_h, dtype=float))
    if not np.all(np.isfinite(tau)):
        raise ValueError("tau_obs must be finite")
    hw = np.array([_half_width(spec, h) for h in range(1, tau.size + 1)])
    return IdentifiedSet(tau - hw, tau + hw, tau, hw / 2.0)


def breakdown(tau_obs):
    """Confounding strength at which the identified set first reaches zero."""
    return np.abs(tau_obs) / 2.0


@dataclass
class ThreeLayerBand:
    h: int
    tau_hat: float
    delta_est: float
    delta_conf: float
    outer_lower: float
    outer_upper: float
    breakdown: float
    robust_breakdown: float | None
    calibrated: bool = True
    reason: str = ""

    @property
    def inner_lower(self) -> float:
        return self.tau_hat - self.delta_est

    @property
    def inner_upper(self) -> float:
        return self.tau_hat + self.delta_est

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("h", "tau_hat", "delta_est", "delta_conf", "outer_lower",
                                           "outer_upper", "breakdown", "robust_breakdown",
                                           "calibrated", "reason")}
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d


def three_layer(tau_hat: float, delta_est: float, spec: SensitivitySpec, h: int,
                abstain: bool = False, reason: str = "") -> ThreeLayerBand:
    """Outer band ``tau_hat +/- (delta_est + 2 c_h)`` with breakdown values.

    An abstained calibration keeps ``delta_est`` for display but reports the
    robust breakdown as ``None`` (not calibrated).
    """
    if not delta_est >= 0:
        raise ValueError("delta_est must be >= 0")
    conf = _half_width(spec, h)
    half = delta_est + conf
    bd = float(breakdown(tau_hat))
    robust = max(abs(tau_hat) - delta_est, 0.0) / 2.0 if math.isfinite(delta_est) else 0.0
    return ThreeLayerBand(h, float(tau_hat), float(delta_est), float(conf), tau_hat - half,
                          tau_hat + half, bd, None if abstain else float(robust), not abstain, reason)


def c_h_heuristic(config: DgpConfig, macro, t0: int, h: int) -> np.ndarray:
    """Simulation-only scale ``|gamma_A gamma_Y| * sd(U | macro history)`` for ``1..h``."""
    _, cov = confounder_posterior(config, np.asarray(macro, dtype=float), t0, h)
    return abs(config.gamma_A * config.gamma_Y) * np.sqrt(np.diag(cov))


# --- sharpness construction -------------------------------------------------


class BisectionError(RuntimeError):
    pass


@dataclass
class SharpnessResult:
    """Gaps ``mu_do - mu_obs`` achieved by the binary-confounder construction."""

    gap_s: float
    gap_b: float
    se_s: float
    se_b: float
    gamma_s: float
    gamma_b: float
    delta: float
    kappa: float
    c_target: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _bisect(f, lo: float, hi: float, tol: float, max_iter: int = 60) -> float:
    f_lo, f_hi = f(lo), f(hi)
    if f_lo * f_hi > 0:
        raise BisectionError("target not bracketed")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if abs(f_mid) <= tol:
            return mid
        if f_mid * f_lo < 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    raise BisectionError(f"no convergence in {max_iter} iterations")


def sharpness_oracle(config: DgpConfig, c_target: float, h: int, n_mc: int,
                     rng: np.random.Generator, panel: Panel | None = None,
                     path_s: Sequence[float] | None = None, path_b: Sequence[float] | None = None,
                     tol: float = 1e-10) -> SharpnessResult:
    """Attain both endpoints of the identified set with a binary confounder.

    ``U = +/-1`` with probability 1/2 is held fixed over the window.  It
    shifts the macro by ``kappa + delta U`` per step and each outcome step by
    ``gamma(a) U``.  ``kappa`` centres the two paths so that their posterior
    means of ``U`` are opposite; ``gamma(a^S)`` and ``gamma(a^B)`` are then
    tuned by bisection so that the gaps are ``+c`` and ``-c``.  The tuning
    gap sums over both values of ``U`` exactly and samples only states and
    innovations, so no ``U`` noise leaks into the tuned ``gamma``.  The gaps
    reported come from a fresh sample with ``U`` drawn.
    """
    if c_target < 0:
        raise ValueError("c_target must be >= 0")
    if h < 1:
        raise ValueError("h must be >= 1")
    if panel is None:
        from .dgp import simulate
        panel = simulate(config.with_(gamma_A=0.0, gamma_Y=0.0), rng)
    t0 = panel.t0
    a0 = panel.macro[t0]
    if path_s is None or path_b is None:
        from .dgp import make_stress_path
        hist = panel.macro[:t0 + 1]
        kw = dict(phi=config.phi_A, sigma=config.sigma_A, intercept=config.mu_A)
        path_b = make_stress_path(hist, 0.0, h, **kw).as_array()
        path_s = make_stress_path(hist, 1.0, h, **kw).as_array()
    a_s, a_b = np.asarray(path_s, float)[:h], np.asarray(path_b, float)[:h]
    if c_target == 0:
        return SharpnessResult(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def innov_sum(a):
        prev = np.concatenate([[a0], a[:-1]])
        return float(np.sum(a - config.mu_A - config.phi_A * prev))

    s_s, s_b = innov_sum(a_s), innov_sum(a_b)
    if s_s == s_b:
        raise ValueError("stress and baseline paths coincide; gaps cannot have opposite signs")
    kappa = (s_s + s_b) / (2 * h)
    delta = config.sigma_A if config.sigma_A > 0 else 1.0
    s2 = max(config.sigma_A, 1e-12) ** 2

    def post_mean_u(s):
        # log-odds of U = +1 after h Gaussian macro steps
        return math.tanh(delta * (s - h * kappa) / s2)

    def sample(gen):
        idx = gen.integers(panel.n_units, size=n_mc)
        st = panel_states(panel, t0)[idx]
        xi = gen.standard_normal((n_mc, h)) * config.sigma_xi
        uu = gen.random(n_mc)
        return st, xi, uu

    def p_obs(a):
        return 0.5 * (1.0 + post_mean_u(innov_sum(a)))

    def roll(st, xi, u, a, gamma):
        y, y_lag, x = st[:, 0], st[:, 1], st[:, 2]
        a_t, a_lag = panel.macro[t0], panel.macro[t0 - 1]
        for k in range(h):
            f = np.stack(np.broadcast_arrays(y, y_lag, x, a_t, a_lag, a[k]), axis=-1)
            y, y_lag = config.one_step_mean(f) + gamma * u + xi[:, k], y
            a_lag, a_t = a_t, a[k]
        return y

    def gap(draws, a, gamma):
        st, xi, uu = draws
        u_do = np.where(uu < 0.5, 1.0, -1.0)
        u_obs = np.where(uu < p_obs(a), 1.0, -1.0)
        d = roll(st, xi, u_do, a, gamma) - roll(st, xi, u_obs, a, gamma)
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(n_mc))

    def exact_gap(draws, a, gamma):
        st, xi, _ = draws
        one = np.ones(len(st))
        diff = roll(st, xi, one, a, gamma) - roll(st, xi, -one, a, gamma)
        return float((0.5 - p_obs(a)) * diff.mean())

    tune = sample(rng)
    bound = 1e3 * (1.0 + c_target) / max(abs(post_mean_u(s_s)), 1e-6)
    g_s = _bisect(lambda g: exact_gap(tune, a_s, g) - c_target, -bound, bound, tol)
    g_b = _bisect(lambda g: exact_gap(tune, a_b, g) + c_target, -bound, bound, tol)
    fresh = sample(rng)
    (gs, ses), (gb, seb) = gap(fresh, a_s, g_s), gap(fresh, a_b, g_b)
    return SharpnessResult(gs, gb, ses, seb, g_s, g_b, delta, kappa, float(c_target))
