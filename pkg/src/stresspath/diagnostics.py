"""Pre-deployment diagnostics: backtests, placebo origins, local amplification."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dgp import Panel
from .learner import FittedModel, LearnerSpec, assemble_training
from .rollout import RolloutResult, recursive_rollout

PLACEBO_Z = 3.0


class Flag(str, enum.Enum):
    EXPANDING_SYSTEM = "expanding_system"
    PLACEBO_FAILURE = "placebo_failure"
    ROLLOUT_BLOWUP = "rollout_blowup"
    CALIBRATION_ABSTAIN = "calibration_abstain"


class NoFeasibleOrigins(ValueError):
    pass


def _check_origins(panel: Panel, origins, h: int, limit: int | None = None) -> np.ndarray:
    o = np.asarray(origins, dtype=int)
    last = panel.n_periods if limit is None else limit
    o = o[(o >= 1) & (o + h <= last)]
    if o.size == 0:
        raise NoFeasibleOrigins(f"no origin t with 1 <= t and t + {h} <= {last}")
    return o


@dataclass
class BacktestResult:
    horizons: np.ndarray
    rmse: np.ndarray
    errors: np.ndarray = field(repr=False)
    origins: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"horizons": self.horizons.tolist(), "rmse": self.rmse.tolist(),
                "origins": self.origins.tolist()}


def _mean_errors(model: Callable, panel: Panel, origins, h_max: int) -> np.ndarray:
    err = np.empty((len(origins), h_max))
    for b, t in enumerate(origins):
        ro = recursive_rollout(model, panel, int(t), panel.macro[t + 1:t + h_max + 1], h_max)
        err[b] = ro.mu_hat - panel.outcomes[:, t + 1:t + h_max + 1].mean(axis=0)
    return err


def rolling_backtest(panel: Panel, learner: LearnerSpec | None, horizons: Sequence[int], origins,
                     model: Callable | None = None, refit: bool = False) -> BacktestResult:
    """RMSE over origins of the rolled-out mean vs the realized mean.

    One model trained before the earliest origin is reused unless ``refit``
    (or an explicit ``model`` is given).
    """
    hs = np.asarray(sorted(set(int(h) for h in horizons)))
    if hs.size == 0 or hs[0] < 1:
        raise ValueError("horizons must be >= 1")
    o = _check_origins(panel, origins, int(hs[-1]), panel.t0)
    if model is None and learner is None:
        raise ValueError("need a model or a learner spec")
    if model is not None:
        err = _mean_errors(model, panel, o, int(hs[-1]))
    elif refit:
        err = np.vstack([_mean_errors(learner.fit(assemble_training(panel, int(t))), panel, [t], int(hs[-1]))
                         for t in o])
    else:
        m = learner.fit(assemble_training(panel, int(o[0])))
        err = _mean_errors(m, panel, o, int(hs[-1]))
    rmse = np.sqrt(np.mean(err[:, hs - 1] ** 2, axis=0))
    return BacktestResult(hs, rmse, err[:, hs - 1], o)


@dataclass
class PlaceboResult:
    origins: np.ndarray
    contrasts: np.ndarray
    z: np.ndarray
    noise_se: float
    horizon: int

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z))) if self.z.size else 0.0

    @property
    def mean_contrast(self) -> float:
        return float(np.mean(self.contrasts))

    @property
    def max_abs_contrast(self) -> float:
        return float(np.max(np.abs(self.contrasts)))

    def passed(self, threshold: float = PLACEBO_Z) -> bool:
        return self.max_abs_z < threshold

    def to_dict(self) -> dict:
        return {"origins": self.origins.tolist(), "contrasts": self.contrasts.tolist(),
                "z": self.z.tolist(), "noise_se": self.noise_se, "horizon": self.horizon,
                "mean_contrast": self.mean_contrast, "max_abs_z": self.max_abs_z}


def placebo_test(panel: Panel, learner: LearnerSpec | None, fake_origins, horizon: int,
                 reference_origins=None, model: Callable | None = None) -> PlaceboResult:
    """Contrasts at fake origins where both paths are the realized continuation.

    A contrast is the horizon-``H`` rolled-out mean minus the realized mean.
    Its z-score divides by the backtest RMSE at reference origins (default:
    every feasible origin before the first fake one), so model misfit that
    appears only after a break shows up as a large ``|z|``.
    """
    fo = _check_origins(panel, fake_origins, horizon, panel.t0)
    if reference_origins is None:
        ref = np.arange(2, fo[0] - horizon + 1)
    else:
        ref = np.asarray(reference_origins, dtype=int)
    ref = ref[(ref >= 1) & (ref + horizon <= fo[0])]
    if ref.size < 2:
        raise NoFeasibleOrigins("need >= 2 reference origins that end before the first fake origin")
    if model is None:
        if learner is None:
            raise ValueError("need a model or a learner spec")
        model = learner.fit(assemble_training(panel, int(ref[0])))
    contrasts = _mean_errors(model, panel, fo, horizon)[:, -1]
    noise = float(np.sqrt(np.mean(_mean_errors(model, panel, ref, horizon)[:, -1] ** 2)))
    if noise > 0:
        z = contrasts / noise
    else:
        z = np.where(contrasts == 0, 0.0, np.copysign(np.inf, contrasts))
    return PlaceboResult(fo, contrasts, z, noise, horizon)


@dataclass
class LocalAmplification:
    """Growth per recursion step of a small state perturbation.

    ``growth`` is ``(|dY[s+1]| / |dY[1]|) ** (1/s)`` over ``s = n_steps``
    further rollout steps, the local analog of the amplification factor;
    ``first_step`` is ``|dY[1]|`` per unit of standardized perturbation.
    ``n_probes`` counts the probes whose first step moved the prediction;
    only those enter ``growth``.
    """

    median: float
    p90: float
    first_step_median: float
    first_step_p90: float
    n_probes: int
    delta: float
    growth: np.ndarray = field(repr=False)

    @property
    def expanding(self) -> bool:
        return self.median > 1.0

    def to_dict(self) -> dict:
        return {"median": self.median, "p90": self.p90, "first_step_median": self.first_step_median,
                "first_step_p90": self.first_step_p90, "n_probes": self.n_probes,
                "delta": self.delta, "expanding": self.expanding}


def local_amplification(model: Callable, rollout: RolloutResult, delta: float = 0.1,
                        n_probes: int = 200, rng: np.random.Generator | None = None,
                        n_steps: int = 3, scale: np.ndarray | None = None,
                        components: Sequence[int] = (0, 1)) -> LocalAmplification:
    """Perturb visited states along a random direction and re-roll.

    The direction is uniform on the unit sphere spanned by ``components``
    of the five-component state (by default the two outcome lags, the only
    ones the recursion carries forward), scaled component-wise by ``scale``
    (default: std of the visited states, ones where that is zero).
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    vis = rollout.states_visited
    horizon, n = vis.shape[0], vis.shape[1]
    if scale is None:
        scale = vis[..., :5].reshape(-1, 5).std(axis=0)
    sd = np.where(np.asarray(scale, float) > 0, scale, 1.0)
    k = rng.integers(horizon, size=n_probes)
    i = rng.integers(n, size=n_probes)
    comp = np.asarray(components, dtype=int)
    if comp.size == 0 or comp.min() < 0 or comp.max() > 4:
        raise ValueError("components must index the five state entries")
    u = np.zeros((n_probes, 5))
    u[:, comp] = rng.standard_normal((n_probes, comp.size))
    u /= np.linalg.norm(u, axis=1, keepdims=True)

    base = vis[k, i].copy()
    pert = base.copy()
    pert[:, :5] += delta * u * sd
    a_path = rollout.path

    y0, y1 = model(base), model(pert)
    first = np.abs(y1 - y0)
    dy = first
    for s in range(1, n_steps + 1):
        a_next = a_path[np.minimum(k + s, a_path.size - 1)]
        for f, y in ((base, y0), (pert, y1)):
            f[:, 1], f[:, 0] = f[:, 0], y
            f[:, 4], f[:, 3] = f[:, 3], f[:, 5]
            f[:, 5] = a_next
        y0, y1 = model(base), model(pert)
        dy = np.abs(y1 - y0)
    # probes whose first step does not move the prediction (a flat tree cell) carry no signal
    live = first > 0
    growth = (dy[live] / first[live]) ** (1.0 / n_steps)
    if growth.size == 0:
        growth = np.zeros(1)
    fs = first / delta
    return LocalAmplification(float(np.median(growth)), float(np.quantile(growth, 0.9)),
                              float(np.median(fs)), float(np.quantile(fs, 0.9)),
                              int(live.sum()), float(delta), growth)


@dataclass
class DiagnosticsReport:
    backtest: BacktestResult
    placebo: PlaceboResult | None
    local_rho: LocalAmplification
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"backtest": self.backtest.to_dict(),
                "placebo": None if self.placebo is None else self.placebo.to_dict(),
                "local_rho": self.local_rho.to_dict(), "flags": [f.value for f in self.flags]}

    def summary(self) -> str:
        lines = ["backtest RMSE: " + ", ".join(f"h={h}: {r:.4f}" for h, r in
                                              zip(self.backtest.horizons, self.backtest.rmse))]
        if self.placebo is not None:
            lines.append(f"placebo: max |z| = {self.placebo.max_abs_z:.2f} over "
                         f"{self.placebo.origins.size} fake origins")
        lr = self.local_rho
        lines.append(f"local amplification: median {lr.median:.3f}, p90 {lr.p90:.3f}")
        lines.append("flags: " + (", ".join(f"[!] {f.value}" for f in self.flags) or "none"))
        return "\n".join(lines)


def build_report(backtest: BacktestResult, placebo: PlaceboResult | None,
                 local_rho: LocalAmplification, rollout: RolloutResult | None = None,
                 abstained: bool = False) -> DiagnosticsReport:
    """Assemble the report; flags follow fixed thresholds."""
    flags = []
    if local_rho.expanding:
        flags.append(Flag.EXPANDING_SYSTEM)
    if placebo is not None and not placebo.passed():
        flags.append(Flag.PLACEBO_FAILURE)
    if rollout is not None and rollout.blowup_h is not None:
        flags.append(Flag.ROLLOUT_BLOWUP)
    if abstained:
        flags.append(Flag.CALIBRATION_ABSTAIN)
    return DiagnosticsReport(backtest, placebo, local_rho, flags)
