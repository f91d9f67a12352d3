"""End-to-end three-layer report for one stress scenario on one panel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conformal import (CalibrationError, calibration_origins, compute_weights, contrast_band,
                        fit_transition_density, rolling_origin_scores, weighted_quantile)
from .diagnostics import (DiagnosticsReport, NoFeasibleOrigins, build_report, local_amplification,
                          placebo_test, rolling_backtest)
from .dgp import Panel, PolicyPath, make_stress_path, replication_rng
from .identification import SensitivitySpec, ThreeLayerBand, three_layer
from .learner import LearnerSpec, assemble_training
from .macro import MacroDataError, ScenarioSpec
from .rollout import InsufficientOrigins, direct_estimator, recursive_rollout
from .tables import write_csv, write_json

REPORT_COLUMNS = ("h", "a_stress", "a_baseline", "mu_stress", "mu_baseline", "mu_stress_direct",
                  "mu_baseline_direct", "tau_hat", "tau_direct", "delta_est", "delta_conf",
                  "outer_lower", "outer_upper", "breakdown", "robust_breakdown",
                  "r_weight_stress", "b_eff_stress", "r_weight_baseline", "b_eff_baseline",
                  "n_blocks", "abstain", "reason")


@dataclass
class ReportConfig:
    """Knobs of the report pipeline.

    ``calibration_start`` is the earliest calibration origin (default: the
    middle of the pre-period); one model trained before it scores every
    block.  ``direct`` adds the per-horizon direct estimator.
    """

    alpha: float = 0.05
    learner: LearnerSpec = field(default_factory=lambda: LearnerSpec(n_estimators=100))
    calibration_start: int | None = None
    w_cap: float = 20.0
    direct: bool = True
    placebo_origins: int = 3
    seed: int = 0


@dataclass
class ReportResult:
    bands: list
    diagnostics: DiagnosticsReport
    rows: list
    stress_path: np.ndarray
    baseline_path: np.ndarray

    @property
    def abstained(self) -> bool:
        return any(not b.calibrated for b in self.bands)

    def to_dict(self) -> dict:
        return {"bands": [b.to_dict() for b in self.bands], "diagnostics": self.diagnostics.to_dict(),
                "stress_path": self.stress_path.tolist(), "baseline_path": self.baseline_path.tolist(),
                "abstained": self.abstained}


def scenario_path(panel: Panel, spec: ScenarioSpec | PolicyPath, t0: int | None = None) -> np.ndarray:
    """Resolve a scenario against the panel's own macro column."""
    t0 = panel.t0 if t0 is None else t0
    if isinstance(spec, PolicyPath):
        return spec.as_array()
    if spec.kind == "named_path":
        return np.asarray(spec.values, dtype=float)
    if spec.kind == "realized_window":
        if spec.start is not None:
            raise MacroDataError("a realized window on a panel starts after t0; omit 'start'")
        if t0 + spec.H > panel.n_periods:
            raise MacroDataError(f"realized window of {spec.H} months passes the panel end")
        return panel.macro[t0 + 1:t0 + spec.H + 1].copy()
    tp = fit_transition_density(panel.macro[1:t0 + 1])
    return make_stress_path(panel.macro[:t0 + 1], spec.k, spec.H, phi=tp.phi, sigma=tp.sigma,
                            intercept=tp.intercept).as_array()


def run_report(panel: Panel, scenario: ScenarioSpec | PolicyPath, sensitivity: SensitivitySpec,
               config: ReportConfig | None = None) -> ReportResult:
    """Fit, roll out, calibrate, bound confounding and diagnose.

    Abstention never raises; it marks affected horizons as uncalibrated.
    """
    cfg = ReportConfig() if config is None else config
    if sensitivity is None:
        raise ValueError("a sensitivity spec is required")
    t0 = panel.t0
    a_s = scenario_path(panel, scenario)
    H = a_s.size
    tp = fit_transition_density(panel.macro[1:t0 + 1])
    a_b = make_stress_path(panel.macro[:t0 + 1], 0.0, H, phi=tp.phi, sigma=tp.sigma,
                           intercept=tp.intercept).as_array()

    model = cfg.learner.fit(assemble_training(panel, t0))
    ro_s = recursive_rollout(model, panel, t0, a_s, H)
    ro_b = recursive_rollout(model, panel, t0, a_b, H)
    dir_s = dir_b = None
    if cfg.direct:
        try:
            dir_s = direct_estimator(panel, t0, a_s, H, cfg.learner).mu_hat
            dir_b = direct_estimator(panel, t0, a_b, H, cfg.learner).mu_hat
        except InsufficientOrigins:
            dir_s = dir_b = None

    start = cfg.calibration_start or max(2, t0 // 2)
    calib_model = cfg.learner.fit(assemble_training(panel, start))
    bands, rows = [], []
    level = cfg.alpha / 2
    for h in range(1, H + 1):
        tau_hat = float(ro_s.mu_hat[h - 1] - ro_b.mu_hat[h - 1])
        try:
            origins = calibration_origins(t0, h, start=start)
            ss = rolling_origin_scores(panel, origins, h, model=calib_model)
            bs = weighted_quantile(ss, compute_weights(ss, a_s, panel.macro, tp, cfg.w_cap), level,
                                   float(ro_s.mu_hat[h - 1]))
            bb = weighted_quantile(ss, compute_weights(ss, a_b, panel.macro, tp, cfg.w_cap), level,
                                   float(ro_b.mu_hat[h - 1]))
            cb = contrast_band(bs, bb)
            delta, abstain, reason = cb.half_width, cb.abstain, cb.reason
            diag = (bs.r_weight, bs.b_eff, bb.r_weight, bb.b_eff, ss.B)
        except CalibrationError as exc:
            delta, abstain, reason = math.inf, True, f"no calibration: {exc}"
            diag = (None, None, None, None, 0)
        band = three_layer(tau_hat, delta, sensitivity, h, abstain, reason)
        bands.append(band)
        rows.append(_row(h, a_s, a_b, ro_s, ro_b, dir_s, dir_b, band, diag))

    diagnostics = _diagnostics(panel, model, calib_model, ro_s, start, H, cfg,
                               any(not b.calibrated for b in bands))
    return ReportResult(bands, diagnostics, rows, a_s, a_b)


def _row(h, a_s, a_b, ro_s, ro_b, dir_s, dir_b, band: ThreeLayerBand, diag) -> dict:
    return {"h": h, "a_stress": a_s[h - 1], "a_baseline": a_b[h - 1],
            "mu_stress": ro_s.mu_hat[h - 1], "mu_baseline": ro_b.mu_hat[h - 1],
            "mu_stress_direct": None if dir_s is None else dir_s[h - 1],
            "mu_baseline_direct": None if dir_b is None else dir_b[h - 1],
            "tau_hat": band.tau_hat,
            "tau_direct": None if dir_s is None else dir_s[h - 1] - dir_b[h - 1],
            "delta_est": band.delta_est, "delta_conf": band.delta_conf,
            "outer_lower": band.outer_lower, "outer_upper": band.outer_upper,
            "breakdown": band.breakdown, "robust_breakdown": band.robust_breakdown,
            "r_weight_stress": diag[0], "b_eff_stress": diag[1], "r_weight_baseline": diag[2],
            "b_eff_baseline": diag[3], "n_blocks": diag[4], "abstain": not band.calibrated,
            "reason": band.reason}


def _diagnostics(panel, model, calib_model, rollout, start, H, cfg, abstained) -> DiagnosticsReport:
    t0 = panel.t0
    hs = sorted({1, max(1, H // 2), H})
    try:
        bt_origins = np.arange(start, t0 - H + 1)
        backtest = rolling_backtest(panel, None, hs, bt_origins, model=calib_model)
    except NoFeasibleOrigins:
        backtest = rolling_backtest(panel, None, [1], np.arange(start, t0), model=calib_model)
    placebo = None
    fake = np.arange(t0 - H - cfg.placebo_origins + 1, t0 - H + 1)
    try:
        placebo = placebo_test(panel, None, fake, H, reference_origins=np.arange(start, fake[0] - H + 1),
                               model=calib_model)
    except NoFeasibleOrigins:
        placebo = None
    local = local_amplification(model, rollout, rng=replication_rng(cfg.seed, 99))
    return build_report(backtest, placebo, local, rollout, abstained)


def write_report(result: ReportResult, out_dir: str | Path, figures: bool = True,
                 extra: dict | None = None) -> list[str]:
    """``report.csv``, ``report.json`` and optionally two PNG figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", REPORT_COLUMNS, [[r[c] for c in REPORT_COLUMNS] for r in result.rows])
    payload = result.to_dict()
    if extra:
        payload.update(extra)
    write_json(out / "report.json", payload)
    files = ["report.csv", "report.json"]
    if figures:
        from .plotting import report_figures
        files += [p.name for p in report_figures(result.rows, out)]
    return files
