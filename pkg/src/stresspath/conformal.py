"""Rolling-origin conformal bands, importance weights for stress paths.

Scores are cross-sectional mean rollout errors at calibration origins.  A
stress path is scored against history by Gaussian AR(1) transition-density
ratios; the weighted quantile puts the mass ``W_max`` at ``+inf``, so equal
weights reproduce the ordinary ``ceil((1 - alpha)(B + 1))`` order statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dgp import Panel, PolicyPath
from .learner import FittedModel, LearnerSpec, assemble_training
from .rollout import recursive_rollout

R_WEIGHT_LIMIT = 0.5
B_EFF_LIMIT = 5.0
DEFAULT_W_CAP = 20.0


class CalibrationError(ValueError):
    pass


@dataclass
class ScoreSet:
    scores: np.ndarray
    origins: np.ndarray
    gap: int
    horizon: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.origins = np.asarray(self.origins, dtype=int)
        if self.scores.size < 1:
            raise CalibrationError("need at least one score")
        if np.any(self.scores < 0):
            raise CalibrationError("scores must be non-negative")
        if self.origins.shape != self.scores.shape:
            raise CalibrationError("one origin per score")
        if np.any(np.diff(self.origins) < max(self.gap, 1)):
            raise CalibrationError(f"origins must increase with spacing >= {self.gap}")

    @property
    def B(self) -> int:
        return int(self.scores.size)


def calibration_origins(t0: int, h: int, gap: int | None = None, n_blocks: int | None = None,
                        start: int | None = None, min_train: int = 2) -> np.ndarray:
    """Origins ``t_b`` spaced by ``gap`` (default ``h``) with ``t_b + h <= t0``.

    ``n_blocks`` takes the last ``n_blocks`` feasible origins; ``start`` takes
    every origin from ``start`` on.
    """
    g = h if gap is None else int(gap)
    if g < 1:
        raise CalibrationError("gap must be >= 1")
    last = t0 - h
    if n_blocks is not None:
        origins = last - g * np.arange(n_blocks)[::-1]
    else:
        first = min_train if start is None else int(start)
        origins = np.arange(first, last + 1, g) if last >= first else np.array([], dtype=int)
    origins = origins[origins >= min_train]
    if origins.size == 0:
        raise CalibrationError(f"no feasible origin: need t_b >= {min_train} and t_b + h <= {t0}")
    return origins.astype(int)


def rolling_origin_scores(panel: Panel, origins, h: int, gap: int | None = None,
                          learner: LearnerSpec | None = None, model: FittedModel | None = None,
                          refit: bool = False) -> ScoreSet:
    """Observed-path rollout error of the cross-sectional mean at each origin.

    By default one model is trained on months before the earliest origin;
    ``refit`` trains a fresh model before every origin instead.
    """
    origins = np.asarray(origins, dtype=int)
    g = h if gap is None else int(gap)
    if origins.size == 0:
        raise CalibrationError("zero feasible origins")
    if np.any(origins + h > panel.n_periods):
        raise CalibrationError("an origin has fewer than h observed future months")
    if np.any(origins < 1):
        raise CalibrationError("origins must be >= 1 so that the state has a lag")
    if model is None and learner is None:
        raise CalibrationError("need a model or a learner spec")
    if model is None and not refit:
        model = learner.fit(assemble_training(panel, int(origins[0])))
    scores = np.empty(origins.size)
    for b, t_b in enumerate(origins):
        m = learner.fit(assemble_training(panel, int(t_b))) if refit else model
        observed = panel.macro[t_b + 1:t_b + h + 1]
        ro = recursive_rollout(m, panel, int(t_b), observed, h)
        scores[b] = abs(ro.mu_hat[h - 1] - panel.outcomes[:, t_b + h].mean())
    return ScoreSet(scores, origins, g, h)


def conformal_quantile(score_set: ScoreSet | np.ndarray, alpha: float) -> float:
    """``ceil((1 - alpha)(B + 1))``-th smallest of the scores and ``+inf``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    s = np.sort(score_set.scores if isinstance(score_set, ScoreSet) else np.asarray(score_set, float))
    k = math.ceil((1.0 - alpha) * (s.size + 1))
    return float(s[k - 1]) if k <= s.size else math.inf


@dataclass
class TransitionParams:
    """Gaussian AR(1) ``A[t+1] = intercept + phi A[t] + N(0, sigma^2)``."""

    phi: float
    sigma: float
    intercept: float = 0.0
    phi_se: float = float("nan")
    n: int = 0

    def logpdf(self, x, prev) -> np.ndarray:
        z = (np.asarray(x, float) - self.intercept - self.phi * np.asarray(prev, float)) / self.sigma
        return -0.5 * z**2 - np.log(self.sigma) - 0.5 * np.log(2 * np.pi)

    @property
    def stationary_std(self) -> float:
        return self.sigma / math.sqrt(1.0 - self.phi**2)


def fit_transition_density(macro_history) -> TransitionParams:
    """Least-squares AR(1) with intercept."""
    a = np.asarray(macro_history, dtype=float)
    if a.size < 10:
        raise CalibrationError(f"macro history of length {a.size} < 10")
    prev, nxt = a[:-1], a[1:]
    if np.ptp(prev) == 0:
        raise CalibrationError("constant macro history; transition density is degenerate")
    x = np.column_stack([np.ones_like(prev), prev])
    coef, *_ = np.linalg.lstsq(x, nxt, rcond=None)
    resid = nxt - x @ coef
    dof = max(nxt.size - 2, 1)
    sigma = float(np.sqrt(resid @ resid / dof))
    if not sigma > 0:
        raise CalibrationError("zero residual variance in macro history")
    cov = sigma**2 * np.linalg.inv(x.T @ x)
    return TransitionParams(float(coef[1]), sigma, float(coef[0]), float(np.sqrt(cov[1, 1])), int(a.size))


@dataclass
class WeightSet:
    """Clipped likelihood ratios; ``w_max`` bounds every weight."""

    weights: np.ndarray
    log_weights: np.ndarray
    w_max: float
    log_w_max: float
    transition_params: TransitionParams
    w_cap: float

    @property
    def normalized(self) -> np.ndarray:
        """Weights divided by ``w_max`` (computed in log space)."""
        return np.exp(self.log_weights - self.log_w_max)


def compute_weights(score_set: ScoreSet, stress_path, observed_macro, params: TransitionParams,
                    w_cap: float = DEFAULT_W_CAP, w_max: float | None = None) -> WeightSet:
    """Product over ``j = 1..h`` of stress vs observed transition densities.

    Both densities condition on the observed state ``A[t_b + j - 1]``.
    ``w_max`` defaults to the cap.
    """
    a_s = stress_path.as_array() if isinstance(stress_path, PolicyPath) else np.asarray(stress_path, float)
    macro = np.asarray(observed_macro, dtype=float)
    h = score_set.horizon
    if a_s.size < h:
        raise CalibrationError("stress path shorter than the score horizon")
    logw = np.empty(score_set.B)
    for b, t_b in enumerate(score_set.origins):
        prev = macro[t_b:t_b + h]
        obs = macro[t_b + 1:t_b + h + 1]
        logw[b] = np.sum(params.logpdf(a_s[:h], prev) - params.logpdf(obs, prev))
    if not np.all(np.isfinite(logw)):
        raise CalibrationError("non-finite likelihood ratio (transition std underflow?)")
    log_cap = math.log(w_cap)
    logw = np.minimum(logw, log_cap)
    if w_max is None:
        log_wm = log_cap
    else:
        if w_max <= 0:
            raise ValueError("w_max must be > 0")
        log_wm = math.log(w_max)
        if np.any(logw > log_wm + 1e-12):
            raise CalibrationError("a weight exceeds the supplied w_max")
    return WeightSet(np.exp(logw), logw, math.exp(log_wm), log_wm, params, w_cap)


@dataclass
class WeightedBand:
    quantile: float
    alpha: float
    r_weight: float
    b_eff: float
    B: int
    gap: int
    h: int
    center: float = float("nan")
    abstain: bool = False
    reason: str = ""

    @property
    def r_mix(self) -> str:
        return f"2*({self.B}+1)*beta({self.gap})"

    @property
    def lower(self) -> float:
        return self.center - self.quantile

    @property
    def upper(self) -> float:
        return self.center + self.quantile

    def to_dict(self) -> dict:
        q = self.quantile if math.isfinite(self.quantile) else None
        return {"h": self.h, "alpha": self.alpha, "center": self.center, "quantile": q,
                "r_weight": self.r_weight, "b_eff": self.b_eff, "B": self.B, "gap": self.gap,
                "abstain": self.abstain, "reason": self.reason, "r_mix": self.r_mix}


def weighted_quantile(score_set: ScoreSet, weight_set: WeightSet, alpha: float,
                      center: float = float("nan")) -> WeightedBand:
    """Smallest score ``q`` whose weighted CDF, with ``W_max`` at ``+inf``, reaches ``1 - alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lw = weight_set.log_weights - weight_set.log_w_max
    if lw.shape != score_set.scores.shape:
        raise CalibrationError("weights not aligned with scores")
    if not np.any(np.isfinite(lw)):
        raise CalibrationError("all weights are zero")
    order = np.argsort(score_set.scores, kind="stable")
    s, ws = score_set.scores[order], np.exp(lw[order])
    total = ws.sum() + 1.0
    cum = np.cumsum(ws)
    # evaluate the CDF at the last element of each tie group
    last = np.r_[s[1:] != s[:-1], True]
    ok = (cum >= (1.0 - alpha) * total) & last
    q = float(s[np.argmax(ok)]) if ok.any() else math.inf
    rel = np.exp(lw - lw.max())
    band = WeightedBand(q, alpha, float(1.0 / total), float(rel.sum() ** 2 / np.sum(rel**2)),
                        score_set.B, score_set.gap, score_set.horizon, center)
    band.abstain, band.reason = abstention_check(band)
    return band


def abstention_check(band: WeightedBand) -> tuple[bool, str]:
    """Flag when ``r_weight > 0.5`` or ``b_eff < 5``."""
    reasons = []
    if band.r_weight > R_WEIGHT_LIMIT:
        reasons.append(f"r_weight={band.r_weight:.3f}>{R_WEIGHT_LIMIT}")
    if band.b_eff < B_EFF_LIMIT:
        reasons.append(f"b_eff={band.b_eff:.2f}<{B_EFF_LIMIT:g}")
    return bool(reasons), "; ".join(reasons)


@dataclass
class ContrastBand:
    center: float
    half_width: float
    alpha: float
    h: int
    abstain: bool
    reason: str = ""

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    def to_dict(self) -> dict:
        hw = self.half_width if math.isfinite(self.half_width) else None
        return {"h": self.h, "alpha": self.alpha, "center": self.center, "half_width": hw,
                "abstain": self.abstain, "reason": self.reason}


def contrast_band(band_s: WeightedBand, band_b: WeightedBand) -> ContrastBand:
    """Bonferroni band for ``tau``; each input band is at level ``alpha/2``."""
    if band_s.alpha != band_b.alpha:
        raise CalibrationError("bands have different alpha")
    if band_s.h != band_b.h:
        raise CalibrationError("bands have different horizons")
    reasons = [f"{tag}: {b.reason}" for tag, b in (("stress", band_s), ("baseline", band_b)) if b.abstain]
    return ContrastBand(band_s.center - band_b.center, band_s.quantile + band_b.quantile,
                        2 * band_s.alpha, band_s.h, band_s.abstain or band_b.abstain, "; ".join(reasons))
