"""Simulation and semi-synthetic experiments with seeded, reproducible output.

Every experiment writes a summary CSV whose columns mirror the published
table, a per-replication CSV, plot data, a figure and ``manifest.json``.
Replication ``r`` of experiment ``e`` draws from
``SeedSequence(seed, spawn_key=(code(e), r))``.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .conformal import (calibration_origins, compute_weights, fit_transition_density,
                        rolling_origin_scores, weighted_quantile)
from .dgp import (DgpConfig, Panel, confounding_truth, make_stress_path, replication_rng,
                  simulate)
from .identification import SensitivitySpec, breakdown, identified_set
from .learner import LearnerSpec, assemble_training, estimate_eps_trajectory
from .macro import MacroSeries, ScenarioSpec, load_macro_csv
from .rollout import (crossover_horizon, direct_estimator, mean_state_bias, oracle_bound,
                      oracle_rollout, recursive_rollout)
from .tables import sha256_file, write_csv, write_json

CCAR_PATH = Path(__file__).with_name("data") / "ccar_severely_adverse.json"
EXPERIMENTS = ("1a", "1b", "1c", "1d", "2a", "2b", "2c", "2d", "2e")
REGIMES = (("contracting", 0.5), ("near_critical", 0.85), ("expanding", 1.05))

# nonlinear intercepts chosen so that the barrier's Jensen gap at h = 12 is about 0.1
NONLINEAR_ALPHA_L1 = 0.2
NONLINEAR_ALPHA_L2 = -3.5

# (desk, full) defaults per experiment
SCALE = {
    "1a": {"replications": (10, 10), "n_units": (2000, 5000)},
    "1b": {"replications": (50, 200), "n_units": (3000, 3000), "n_mc": (200, 500)},
    "1c": {"replications": (30, 100), "n_units": (2000, 5000)},
    "1d": {"replications": (30, 30), "n_units": (3000, 3000), "n_mc": (200, 1000)},
    "2a": {"replications": (5, 10), "n_units": (2000, 3000)},
    "2b": {"replications": (50, 200), "n_units": (3000, 3000), "n_mc": (200, 500)},
    "2c": {"replications": (10, 100), "n_units": (2000, 3000)},
    "2d": {"replications": (10, 30), "n_units": (3000, 3000), "n_mc": (200, 1000)},
    "2e": {"replications": (3, 10), "n_units": (2000, 3000)},
}
DESK_TREES, FULL_TREES = 30, 200
# Layer-2 desk runs train on a trailing window of this many months
DESK_WINDOW = 96


class ExperimentError(RuntimeError):
    pass


class HardInvariantFailure(ExperimentError):
    pass


@dataclass
class ExperimentConfig:
    """What to run and at which scale.

    ``replications``, ``n_units`` and ``n_mc`` default to the desk
    (``full=False``) or full-scale values in ``SCALE``.  ``learner``
    overrides fields of the Extra-Trees spec; ``params`` holds
    experiment-specific knobs.
    """

    experiment: str
    seed: int = 0
    full: bool = False
    replications: int | None = None
    n_units: int | None = None
    n_mc: int | None = None
    alpha: float = 0.05
    macro_csv: str | None = None
    learner: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ExperimentError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.replications is not None and self.replications < 1:
            raise ExperimentError("replications must be >= 1")
        if not 0 < self.alpha < 1:
            raise ExperimentError("alpha must lie in (0, 1)")

    def _scaled(self, key: str, value):
        if value is not None:
            return int(value)
        pair = SCALE[self.experiment].get(key)
        return None if pair is None else pair[1 if self.full else 0]

    @property
    def reps(self) -> int:
        return self._scaled("replications", self.replications)

    @property
    def units(self) -> int:
        return self._scaled("n_units", self.n_units)

    @property
    def mc(self) -> int | None:
        return self._scaled("n_mc", self.n_mc)

    @property
    def code(self) -> int:
        return EXPERIMENTS.index(self.experiment) + 1

    def learner_spec(self, seed: int = 0) -> LearnerSpec:
        base = dict(n_estimators=FULL_TREES if self.full else DESK_TREES, max_depth=8, min_leaf=5)
        base.update(self.learner)
        base["seed"] = seed
        return LearnerSpec(**base)

    def window(self, cutoff: int) -> int:
        """First training month for Layer-2 fits ending at ``cutoff``."""
        w = self.params.get("train_window", None if self.full else DESK_WINDOW)
        return 1 if w is None else max(1, cutoff - int(w))

    def rng(self, r: int) -> np.random.Generator:
        return replication_rng(self.seed, self.code, r)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "full": self.full,
                "replications": self.replications, "n_units": self.n_units, "n_mc": self.n_mc,
                "alpha": self.alpha, "macro_csv": self.macro_csv, "learner": dict(self.learner),
                "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        keys = cls.__dataclass_fields__.keys()
        unknown = set(d) - set(keys)
        if unknown:
            raise ExperimentError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    seeds: list
    artifacts: list
    wall_time: float
    version: str
    invariants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**d)


@dataclass
class ExperimentResult:
    """Tables keyed by file stem: ``(columns, rows)``."""

    tables: dict
    details: dict = field(default_factory=dict)
    invariants: dict = field(default_factory=dict)
    figure: Callable | None = None

    def table(self, name: str) -> list[dict]:
        cols, rows = self.tables[name]
        return [dict(zip(cols, r)) for r in rows]


def _threads() -> int:
    v = os.environ.get("STRESSPATH_THREADS")
    return max(1, int(v)) if v else 1


def _pool_map(fn, items):
    items = list(items)
    if _threads() > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=_threads()) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


# --- Layer 1 / Layer 2 setup ------------------------------------------------


def layer1_config(n_units: int, beta1: float = 0.5, nonlinear: bool = False, **kw) -> DgpConfig:
    if nonlinear:
        kw.setdefault("sigma_xi", 2.0)
        beta = (NONLINEAR_ALPHA_L1, beta1, 0.5, 0.5, 0.5)
    else:
        beta = (1.0, beta1, 0.5, 0.5, 0.5)
    return DgpConfig(n_units=n_units, beta=beta, nonlinear=nonlinear, **kw)


@dataclass
class Layer2:
    """Real macro series replayed through the AR(1) fitted to it."""

    series: MacroSeries
    innovations: np.ndarray
    a0: float
    phi: float
    sigma: float
    intercept: float

    def config(self, n_units: int, t0: int, horizon: int, beta1: float = 0.5,
               nonlinear: bool = False, **kw) -> DgpConfig:
        if nonlinear:
            kw.setdefault("sigma_xi", 2.0)
            beta = (NONLINEAR_ALPHA_L2, beta1, 0.5, 0.05, 0.5)
        else:
            beta = (1.0, beta1, 0.5, 0.5, 0.5)
        return DgpConfig(n_units=n_units, n_periods=len(self.series), t0=t0, horizon=horizon,
                         phi_A=self.phi, sigma_A=self.sigma, mu_A=self.intercept, beta=beta,
                         nonlinear=nonlinear, **kw)

    def simulate(self, config: DgpConfig, rng: np.random.Generator) -> Panel:
        return simulate(config, rng, macro_innovations=self.innovations, a0=self.a0)

    def t(self, date: str) -> int:
        """Panel time index of a calendar month (the first month is ``t = 1``)."""
        return self.series.index(date) + 1


def layer2_setup(series: MacroSeries) -> Layer2:
    """Residuals ``e[t] = A[t] - c - phi A[t-1]`` of the full-sample AR(1).

    With ``A[0] = A[1]`` and no confounding, the simulated macro equals the
    series exactly.
    """
    v = series.values
    tp = fit_transition_density(v)
    n = v.size
    innov = np.zeros(n + 1)
    innov[1] = v[0] - tp.intercept - tp.phi * v[0]
    innov[2:] = v[1:] - tp.intercept - tp.phi * v[:-1]
    return Layer2(series, innov, float(v[0]), tp.phi, tp.sigma, tp.intercept)


def _load_layer2(cfg: ExperimentConfig) -> Layer2:
    if not cfg.macro_csv:
        raise ExperimentError(f"experiment {cfg.experiment} needs a macro series (--macro-csv)")
    if not Path(cfg.macro_csv).exists():
        raise FileNotFoundError(f"macro CSV not found: {cfg.macro_csv}")
    return layer2_setup(load_macro_csv(cfg.macro_csv))


def _stress_pair(panel: Panel, t0: int, k: float, horizon: int, fitted: bool = True,
                 config: DgpConfig | None = None):
    hist = panel.macro[:t0 + 1]
    if fitted:
        tp = fit_transition_density(hist[1:])
        kw = dict(phi=tp.phi, sigma=tp.sigma, intercept=tp.intercept)
    else:
        kw = dict(phi=config.phi_A, sigma=config.sigma_A, intercept=config.mu_A)
    return (make_stress_path(hist, k, horizon, **kw).as_array(),
            make_stress_path(hist, 0.0, horizon, **kw).as_array())


# --- oracle inequality (1A, 2A) ---------------------------------------------


def oracle_replication(config: DgpConfig, panel: Panel, path, learner: LearnerSpec, t0: int,
                       horizon: int, with_direct: bool = True, t_start: int = 1) -> dict:
    """Recursive vs oracle rollout, the bound, and optionally the direct estimator.

    ``eps_dir`` is the direct estimator's sup-norm error against the oracle
    at the evaluation states, the direct analog of the trajectory ``eps_n``.
    """
    model = learner.fit(assemble_training(panel, t0, t_start))
    ro = recursive_rollout(model, panel, t0, path, horizon)
    orc = oracle_rollout(config, panel, t0, path, horizon)
    eps = estimate_eps_trajectory(model, config, ro.states_visited).eps_n
    amp = oracle_bound(eps, config.rho, horizon)
    unit_err = np.abs(ro.per_unit - orc.per_unit).max(axis=0)
    out = {"eps_n": eps, "gamma": amp.gamma, "bound": amp.bound,
           "rec_err": np.abs(ro.mu_hat - orc.mu_hat), "unit_err": unit_err,
           "valid": bool(np.all(unit_err <= amp.bound)), "blowup_h": ro.blowup_h}
    if with_direct:
        d = _direct(panel, t0, path, horizon, learner, t_start)
        out["dir_err"] = np.abs(d.mu_hat - orc.mu_hat)
        out["eps_dir"] = np.abs(d.per_unit - orc.per_unit).max(axis=0)
        out["h_star"] = crossover_horizon(amp.bound, out["eps_dir"])
        out["h_star_empirical"] = crossover_horizon(out["rec_err"], out["dir_err"])
    return out


def _direct(panel, t0, path, horizon, learner, t_start):
    if t_start <= 1:
        return direct_estimator(panel, t0, path, horizon, learner)
    # trailing window: drop the months before t_start so every horizon uses the same span
    sub = Panel(panel.outcomes[:, t_start - 1:], panel.covariates, panel.macro[t_start - 1:],
                t0 - t_start + 1)
    return direct_estimator(sub, sub.t0, path, horizon, learner)


def _oracle_table(name: str, rows_by_regime: list, layer: int) -> dict:
    H = len(rows_by_regime[0][2][0]["bound"])
    if layer == 1:
        cols = ["regime", "rho", "eps_n", "gamma_H", "bound_H", "rec_err_H", "dir_err_H",
                "eps_n_se", "rec_err_H_se", "dir_err_H_se", "base_seed"]
    else:
        cols = ["regime", "rho", "eps_n", "bound_H", "rec_err_H", "valid",
                "eps_n_se", "rec_err_H_se", "base_seed"]
    summary, reps, curves = [], [], []
    for regime, rho, res, seed in rows_by_regime:
        eps, eps_se = _mean_se([r["eps_n"] for r in res])
        rec, rec_se = _mean_se([r["rec_err"][-1] for r in res])
        bound = float(np.mean([r["bound"][-1] for r in res]))
        valid = all(r["valid"] for r in res)
        if layer == 1:
            de, de_se = _mean_se([r["dir_err"][-1] for r in res]) if "dir_err" in res[0] else (None, None)
            summary.append([regime, rho, eps, res[0]["gamma"][-1], bound, rec, de, eps_se, rec_se,
                            de_se, seed])
        else:
            summary.append([regime, rho, eps, bound, rec, valid, eps_se, rec_se, seed])
        for i, r in enumerate(res):
            reps.append([regime, i, r["eps_n"], r["bound"][-1], r["rec_err"][-1],
                         r.get("dir_err", [None])[-1], r["valid"], r.get("h_star"),
                         r.get("h_star_empirical"), r["blowup_h"]])
        for h in range(H):
            curves.append([regime, h + 1, float(np.mean([r["bound"][h] for r in res])),
                           float(np.mean([r["rec_err"][h] for r in res])),
                           float(np.mean([r["dir_err"][h] for r in res])) if "dir_err" in res[0] else None])
    return {
        name: (cols, summary),
        f"{name}_replications": (["regime", "replication", "eps_n", "bound_H", "rec_err_H",
                                  "dir_err_H", "valid", "h_star", "h_star_empirical", "blowup_h"], reps),
        f"{name}_curves": (["regime", "h", "bound", "rec_err", "dir_err"], curves),
    }


def run_1a(cfg: ExperimentConfig) -> ExperimentResult:
    regimes = cfg.params.get("regimes", [b for _, b in REGIMES])
    with_direct = cfg.params.get("direct", True)
    k = float(cfg.params.get("k_sigma", 1.0))
    out = []
    for gi, (name, b1) in enumerate(REGIMES):
        if b1 not in regimes:
            continue

        def rep(r, b1=b1, gi=gi):
            dgp = layer1_config(cfg.units, b1)
            rng = replication_rng(cfg.seed, cfg.code, gi, r)
            panel = simulate(dgp, rng)
            path, _ = _stress_pair(panel, dgp.t0, k, dgp.horizon, fitted=False, config=dgp)
            return oracle_replication(dgp, panel, path, cfg.learner_spec(r), dgp.t0, dgp.horizon,
                                      with_direct)
        out.append((name, b1, _pool_map(rep, range(cfg.reps)), cfg.seed))
    tables = _oracle_table("exp1a", out, 1)
    valid = all(r["valid"] for _, _, res, _ in out for r in res)
    return ExperimentResult(tables, invariants={"bound_valid": valid}, figure=_fig("oracle"))


def run_2a(cfg: ExperimentConfig) -> ExperimentResult:
    l2 = _load_layer2(cfg)
    t0 = int(cfg.params.get("t0", len(l2.series) - 12))
    H = int(cfg.params.get("horizon", 12))
    k = float(cfg.params.get("k_sigma", 1.0))
    out = []
    for gi, (name, b1) in enumerate(REGIMES):
        def rep(r, b1=b1, gi=gi):
            dgp = l2.config(cfg.units, t0, H, b1)
            rng = replication_rng(cfg.seed, cfg.code, gi, r)
            panel = l2.simulate(dgp, rng)
            path, _ = _stress_pair(panel, t0, k, H)
            return oracle_replication(dgp, panel, path, cfg.learner_spec(r), t0, H, False,
                                      cfg.window(t0))
        out.append((name, b1, _pool_map(rep, range(cfg.reps)), cfg.seed))
    tables = _oracle_table("exp2a", out, 2)
    valid = all(r["valid"] for _, _, res, _ in out for r in res)
    return ExperimentResult(tables, invariants={"bound_valid": valid}, figure=_fig("oracle"))


# --- mean-state bias (1B, 2B) -----------------------------------------------


def bias_sweep(cfg: ExperimentConfig, make, t0: int, H: int) -> dict:
    """Replication-averaged ``b_h`` for the linear and nonlinear outcome."""
    k = float(cfg.params.get("k_sigma", 1.0))
    res = {}
    for gi, nonlinear in enumerate((False, True)):
        def rep(r, nonlinear=nonlinear, gi=gi):
            dgp, sim = make(nonlinear)
            rng = replication_rng(cfg.seed, cfg.code, gi, r)
            panel = sim(dgp, rng)
            path, _ = _stress_pair(panel, t0, k, H, fitted=False, config=dgp)
            return mean_state_bias(dgp, path, H, cfg.mc, rng, panel=panel).b_h
        b = np.array(_pool_map(rep, range(cfg.reps)))
        res["nonlinear" if nonlinear else "linear"] = b
    return res


def _bias_tables(name: str, res: dict, show: tuple) -> dict:
    cols = ["dgp"] + [f"abs_b_{h}" for h in show] + [f"abs_b_{h}_se" for h in show]
    rows, curves = [], []
    for dgp, b in res.items():
        m = b.mean(axis=0)
        se = b.std(axis=0, ddof=1) / np.sqrt(b.shape[0]) if b.shape[0] > 1 else np.zeros(b.shape[1])
        rows.append([dgp] + [abs(m[h - 1]) for h in show] + [se[h - 1] for h in show])
        curves += [[dgp, h + 1, m[h], se[h]] for h in range(b.shape[1])]
    return {name: (cols, rows), f"{name}_curves": (["dgp", "h", "b_h", "b_h_se"], curves)}


def run_1b(cfg: ExperimentConfig) -> ExperimentResult:
    def make(nonlinear):
        return layer1_config(cfg.units, 0.85, nonlinear), simulate
    res = bias_sweep(cfg, make, 60, 12)
    return ExperimentResult(_bias_tables("exp1b", res, (1, 4, 8, 12)), details={"b_h": res},
                            figure=_fig("bias"))


def run_2b(cfg: ExperimentConfig) -> ExperimentResult:
    l2 = _load_layer2(cfg)
    t0 = int(cfg.params.get("t0", len(l2.series) - 12))

    def make(nonlinear):
        return l2.config(cfg.units, t0, 12, 0.85, nonlinear), l2.simulate
    res = bias_sweep(cfg, make, t0, 12)
    return ExperimentResult(_bias_tables("exp2b", res, (1, 6, 12)), details={"b_h": res},
                            figure=_fig("bias"))


# --- calibration coverage (1C, 2C) ------------------------------------------


def coverage_replication(dgp: DgpConfig, panel: Panel, learner: LearnerSpec, t0: int,
                         severities, horizons, alpha: float, layout: dict,
                         t_start: int = 1) -> list[dict]:
    """Per (severity, h): covered?, r_weight, b_eff, quantile, error, abstain."""
    model = learner.fit(assemble_training(panel, t0, t_start))
    tp = fit_transition_density(panel.macro[1:t0 + 1])
    H = max(horizons)
    paths = {k: _stress_pair(panel, t0, k, H)[0] for k in severities}
    rolls = {k: recursive_rollout(model, panel, t0, p, H) for k, p in paths.items()}
    truth = {k: oracle_rollout(dgp, panel, t0, p, H) for k, p in paths.items()}
    out = []
    for h in horizons:
        if "n_blocks" in layout:
            origins = calibration_origins(t0, h, n_blocks=layout["n_blocks"])
        else:
            origins = calibration_origins(t0, h, start=layout["start"])
        ss = rolling_origin_scores(panel, origins, h, learner=learner)
        for k in severities:
            ws = compute_weights(ss, paths[k], panel.macro, tp)
            band = weighted_quantile(ss, ws, alpha, center=float(rolls[k].mu_hat[h - 1]))
            err = abs(rolls[k].mu_hat[h - 1] - truth[k].mu_hat[h - 1])
            out.append({"k": k, "h": h, "covered": bool(err <= band.quantile), "err": err,
                        "quantile": band.quantile, "r_weight": band.r_weight, "b_eff": band.b_eff,
                        "B": band.B, "abstain": band.abstain})
    return out


def _coverage_tables(name: str, reps: list, severities, horizons, diag_h: int) -> dict:
    flat = [dict(d, replication=i) for i, rep in enumerate(reps) for d in rep]
    cols = ["severity"] + [f"cov_h{h}" for h in horizons] + ["r_weight", "b_eff", "B",
                                                            "r_weight_se", "b_eff_se"]
    rows = []
    for k in severities:
        row = [f"+{k:g}sigma"]
        for h in horizons:
            row.append(float(np.mean([d["covered"] for d in flat if d["k"] == k and d["h"] == h])))
        sel = [d for d in flat if d["k"] == k and d["h"] == diag_h]
        rw, rw_se = _mean_se([d["r_weight"] for d in sel])
        be, be_se = _mean_se([d["b_eff"] for d in sel])
        rows.append(row + [rw, be, int(np.median([d["B"] for d in sel])), rw_se, be_se])
    detail_cols = ["replication", "severity", "h", "covered", "err", "quantile", "r_weight",
                   "b_eff", "B", "abstain"]
    detail = [[d["replication"], d["k"], d["h"], d["covered"], d["err"], d["quantile"],
               d["r_weight"], d["b_eff"], d["B"], d["abstain"]] for d in flat]
    return {name: (cols, rows), f"{name}_replications": (detail_cols, detail)}


def run_1c(cfg: ExperimentConfig) -> ExperimentResult:
    severities = tuple(cfg.params.get("severities", (1, 2, 3)))
    horizons = tuple(cfg.params.get("horizons", (1, 6, 12)))
    n_blocks = int(cfg.params.get("n_blocks", 4))

    def rep(r):
        dgp = layer1_config(cfg.units, 0.5)
        panel = simulate(dgp, cfg.rng(r))
        return coverage_replication(dgp, panel, cfg.learner_spec(r), dgp.t0, severities, horizons,
                                    cfg.alpha, {"n_blocks": n_blocks})
    reps = _pool_map(rep, range(cfg.reps))
    return ExperimentResult(_coverage_tables("exp1c", reps, severities, horizons, 1),
                            figure=_fig("coverage"))


def run_2c(cfg: ExperimentConfig) -> ExperimentResult:
    l2 = _load_layer2(cfg)
    t0 = int(cfg.params.get("t0", len(l2.series) - 12))
    severities = tuple(cfg.params.get("severities", (1, 1.5, 2, 3)))
    h = int(cfg.params.get("h", 6))
    start = l2.t(cfg.params.get("calibration_start", "2008-01-01"))

    def rep(r):
        dgp = l2.config(cfg.units, t0, 12, 0.5)
        panel = l2.simulate(dgp, cfg.rng(r))
        return coverage_replication(dgp, panel, cfg.learner_spec(r), t0, severities, (h,),
                                    cfg.alpha, {"start": start}, cfg.window(t0))
    reps = _pool_map(rep, range(cfg.reps))
    return ExperimentResult(_coverage_tables("exp2c", reps, severities, (h,), h),
                            figure=_fig("coverage"))


# --- set identification (1D, 2D) --------------------------------------------


def identification_replication(dgp: DgpConfig, panel: Panel, horizons, n_mc: int,
                               rng: np.random.Generator, k: float = 1.0) -> dict:
    """MC truth and in-set checks with ``c_h`` set to the measured gap."""
    H = max(horizons)
    path_s, path_b = _stress_pair(panel, dgp.t0, k, H, fitted=False, config=dgp)
    truth = confounding_truth(dgp, panel, path_s, path_b, H, n_mc, rng)
    c = truth.c_h
    s = identified_set(truth.tau_obs, SensitivitySpec(mode="explicit", c_list=tuple(c)))
    inside = s.contains(truth.tau_do)
    return {"tau_obs": truth.tau_obs, "tau_do": truth.tau_do, "gap": np.abs(truth.tau_do - truth.tau_obs),
            "c_h": c, "in_set": {h: bool(inside[h - 1]) for h in horizons}}


def identification_sweep(make, grid, horizons, reps: int, n_mc: int, seed: int, code: int) -> list:
    rows = []
    for gi, (ga, gy) in enumerate(grid):
        def rep(r, ga=ga, gy=gy, gi=gi):
            dgp, sim = make(ga, gy)
            rng = replication_rng(seed, code, gi, r)
            panel = sim(dgp, rng)
            return identification_replication(dgp, panel, horizons, n_mc, rng)
        rows.append(((ga, gy), _pool_map(rep, range(reps))))
    return rows


def _ident_tables(name: str, sweep: list, H: int, horizons, layer: int) -> dict:
    if layer == 1:
        cols = ["gamma_A", "gamma_Y", "tau_obs_true", "tau_do", "abs_gap", "two_abs_gap", "in_set",
                "tau_obs_true_se", "tau_do_se", "abs_gap_se"]
    else:
        cols = ["gamma_A", "gamma_Y", "abs_gap_h12", "monotone", "abs_gap_h12_se"]
    rows, detail = [], []
    prev = None  # monotonicity is read along the diagonal gamma_A = gamma_Y
    for (ga, gy), res in sweep:
        to, to_se = _mean_se([r["tau_obs"][H - 1] for r in res])
        td, td_se = _mean_se([r["tau_do"][H - 1] for r in res])
        g, g_se = _mean_se([r["gap"][H - 1] for r in res])
        inset = all(all(r["in_set"].values()) for r in res)
        if layer == 1:
            rows.append([ga, gy, to, td, g, 2 * g, inset, to_se, td_se, g_se])
        else:
            mono = None if prev is None or ga != gy else bool(g >= prev)
            rows.append([ga, gy, g, mono, g_se])
        if ga == gy:
            prev = g
        for i, r in enumerate(res):
            for h in horizons:
                detail.append([ga, gy, i, h, r["tau_obs"][h - 1], r["tau_do"][h - 1],
                               r["gap"][h - 1], r["c_h"][h - 1], r["in_set"][h]])
    return {name: (cols, rows),
            f"{name}_replications": (["gamma_A", "gamma_Y", "replication", "h", "tau_obs", "tau_do",
                                      "abs_gap", "c_h", "in_set"], detail)}


def _grid(cfg: ExperimentConfig, default: list) -> list:
    """Diagonal ``gamma_A = gamma_Y`` sweep, or every pair when ``grid`` is ``full``."""
    levels = cfg.params.get("gammas", default)
    if cfg.params.get("grid", "diagonal") == "full":
        return [(ga, gy) for ga in levels for gy in levels]
    return [(g, g) for g in levels]


def run_1d(cfg: ExperimentConfig) -> ExperimentResult:
    horizons = (1, 6, 12)

    def make(ga, gy):
        return layer1_config(cfg.units, 0.5, gamma_A=ga, gamma_Y=gy), simulate
    sweep = identification_sweep(make, _grid(cfg, [0.0, 0.3, 0.5, 0.8, 1.0]), horizons, cfg.reps,
                                 cfg.mc, cfg.seed, cfg.code)
    tables = _ident_tables("exp1d", sweep, 12, horizons, 1)
    bd_rows = []
    for (ga, gy), res in sweep:
        if ga == 0.5 and gy == 0.5:
            for h in horizons:
                m, se = _mean_se([breakdown(r["tau_obs"][h - 1]) for r in res])
                bd_rows.append([ga, gy, h, m, se])
    tables["exp1d_breakdown"] = (["gamma_A", "gamma_Y", "h", "breakdown", "breakdown_se"], bd_rows)
    ok = all(all(r["in_set"].values()) for _, res in sweep for r in res)
    return ExperimentResult(tables, invariants={"in_set": ok}, figure=_fig("gap"))


def run_2d(cfg: ExperimentConfig) -> ExperimentResult:
    l2 = _load_layer2(cfg)
    t0 = int(cfg.params.get("t0", len(l2.series) - 12))
    horizons = (1, 6, 12)

    def make(ga, gy):
        return l2.config(cfg.units, t0, 12, 0.5, gamma_A=ga, gamma_Y=gy), l2.simulate
    sweep = identification_sweep(make, _grid(cfg, [0.0, 0.3, 0.6, 1.0]), horizons, cfg.reps,
                                 cfg.mc, cfg.seed, cfg.code)
    ok = all(all(r["in_set"].values()) for _, res in sweep for r in res)
    return ExperimentResult(_ident_tables("exp2d", sweep, 12, horizons, 2),
                            invariants={"in_set": ok}, figure=_fig("gap"))


# --- COVID retrospective (2E) -------------------------------------------------


def covid_replication(l2: Layer2, dgp: DgpConfig, panel: Panel, learner: LearnerSpec,
                      cutoff: int, t0: int, H: int, scenarios: dict, alpha: float,
                      calib_start: int, t_start: int = 1) -> dict:
    """Trajectory ``eps_n``, error curve and calibration diagnostics per scenario."""
    model = learner.fit(assemble_training(panel, cutoff, t_start))
    tp = fit_transition_density(panel.macro[1:t0 + 1])
    origins = calibration_origins(t0, H, start=calib_start)
    ss = rolling_origin_scores(panel, origins, H, learner=learner)
    out = {}
    for name, path in scenarios.items():
        ro = recursive_rollout(model, panel, t0, path, H)
        orc = oracle_rollout(dgp, panel, t0, path, H)
        er = estimate_eps_trajectory(model, dgp, ro.states_visited)
        band = weighted_quantile(ss, compute_weights(ss, path, panel.macro, tp), alpha)
        out[name] = {"eps_n": er.eps_n, "eps_mean": er.mean_abs, "err": np.abs(ro.mu_hat - orc.mu_hat),
                     "r_weight": band.r_weight, "b_eff": band.b_eff, "abstain": band.abstain,
                     "reason": band.reason, "B": band.B}
    return out


def run_2e(cfg: ExperimentConfig) -> ExperimentResult:
    l2 = _load_layer2(cfg)
    cutoff = l2.t(cfg.params.get("train_cutoff", "2018-12-01"))
    t0 = l2.t(cfg.params.get("origin", "2019-12-01"))
    H = int(cfg.params.get("horizon", 12))
    calib_start = l2.t(cfg.params.get("calibration_start", "2008-01-01"))
    ccar = cfg.params.get("ccar_path", str(CCAR_PATH))

    def rep(r):
        dgp = l2.config(cfg.units, t0, H, 0.5)
        panel = l2.simulate(dgp, cfg.rng(r))
        stress2, base = _stress_pair(panel, t0, 2.0, H)
        scen = {"covid_realized": panel.macro[t0 + 1:t0 + H + 1].copy(), "plus_2sigma": stress2,
                "baseline": base}
        if ccar:
            scen["ccar"] = np.asarray(ScenarioSpec.from_json(ccar).values, dtype=float)
        return covid_replication(l2, dgp, panel, cfg.learner_spec(r), cutoff, t0, H, scen,
                                 cfg.alpha, calib_start, cfg.window(cutoff))
    reps = _pool_map(rep, range(cfg.reps))
    names = list(reps[0])
    ref = np.array([r["plus_2sigma"]["eps_n"] for r in reps])
    ref_mean = np.array([r["plus_2sigma"]["eps_mean"] for r in reps])
    cols = ["scenario", "eps_n", "ratio_to_plus_2sigma", "eps_mean", "ratio_mean_to_plus_2sigma",
            "peak_err_h", "peak_err", "r_weight", "b_eff", "abstain", "eps_n_se"]
    rows, curves = [], []
    for name in names:
        eps = np.array([r[name]["eps_n"] for r in reps])
        eps_m = np.array([r[name]["eps_mean"] for r in reps])
        err = np.mean([r[name]["err"] for r in reps], axis=0)
        m, se = _mean_se(eps)
        rows.append([name, m, float(np.mean(eps / ref)), float(eps_m.mean()),
                     float(np.mean(eps_m / ref_mean)), int(np.argmax(err)) + 1, float(err.max()),
                     float(np.mean([r[name]["r_weight"] for r in reps])),
                     float(np.mean([r[name]["b_eff"] for r in reps])),
                     all(r[name]["abstain"] for r in reps), se])
        curves += [[name, h + 1, err[h]] for h in range(H)]
    return ExperimentResult({"exp2e": (cols, rows), "exp2e_curves": (["scenario", "h", "err"], curves)},
                            figure=_fig("covid"))


RUNNERS = {"1a": run_1a, "1b": run_1b, "1c": run_1c, "1d": run_1d, "2a": run_2a, "2b": run_2b,
           "2c": run_2c, "2d": run_2d, "2e": run_2e}


def _fig(kind: str):
    def render(result: ExperimentResult, out_dir: Path, name: str) -> list[Path]:
        from . import plotting
        return plotting.render_experiment(kind, result, out_dir, name)
    return render


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   figures: bool = True) -> tuple[RunManifest, ExperimentResult]:
    """Run, write tables (and figures) to ``out_dir``, return the manifest."""
    t = time.perf_counter()
    result = RUNNERS[cfg.experiment](cfg)
    wall = time.perf_counter() - t
    artifacts = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for stem, (cols, rows) in result.tables.items():
            write_csv(out / f"{stem}.csv", cols, rows)
            artifacts.append(f"{stem}.csv")
        if figures and result.figure is not None:
            for p in result.figure(result, out, f"exp{cfg.experiment}"):
                artifacts.append(p.name)
    manifest = RunManifest(cfg.to_dict(), cfg.hash(),
                           [{"seed": cfg.seed, "spawn_key_prefix": [cfg.code], "replications": cfg.reps}],
                           [], wall, _version_string(), result.invariants)
    if out_dir is not None:
        manifest.artifacts = [{"file": a, "sha256": sha256_file(Path(out_dir) / a)} for a in artifacts]
        write_json(Path(out_dir) / "manifest.json", manifest.to_dict())
    return manifest, result


def rerun_from_manifest(manifest_path: str | Path, out_dir: str | Path,
                        figures: bool = True) -> tuple[RunManifest, ExperimentResult]:
    m = RunManifest.load(manifest_path)
    return run_experiment(ExperimentConfig.from_dict(m.config), out_dir, figures)


def _version_string() -> str:
    import sklearn
    return f"stresspath {__version__}; numpy {np.__version__}; scikit-learn {sklearn.__version__}"
