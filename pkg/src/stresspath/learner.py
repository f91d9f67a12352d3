"""One-step learners for the conditional mean ``m(state, a_next)``.

Extra-Trees is backed by scikit-learn (no bootstrap, every feature is a split
candidate); ridge is solved in closed form with an unpenalised intercept.
"""

from __future__ import annotations

import io
import json
import pickle
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.ensemble import ExtraTreesRegressor

from .dgp import Panel, panel_states

MODEL_MAGIC = b"SPMODEL\x00"
MODEL_VERSION = 1


class InsufficientHistory(ValueError):
    pass


class SingularSystem(np.linalg.LinAlgError):
    pass


@dataclass
class TrainingSet:
    """Rows ``(state_t, a_{t+1}) -> Y_{t+1}`` with ``(unit, t)`` provenance."""

    features: np.ndarray
    targets: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return self.targets.shape[0]

    def subset(self, mask: np.ndarray) -> "TrainingSet":
        return TrainingSet(self.features[mask], self.targets[mask], self.origins[mask])


def assemble_training(panel: Panel, t0: int, t_start: int = 1) -> TrainingSet:
    """Pre-period one-step rows for months ``t_start..t0-1``.

    The confounder is never a feature.
    """
    if t0 < 2:
        raise InsufficientHistory("need t0 >= 2 to form one lagged training row")
    if t0 > panel.n_periods:
        raise ValueError("t0 beyond the panel")
    blocks, targets, origins = [], [], []
    n = panel.n_units
    for t in range(max(t_start, 1), t0):
        st = panel_states(panel, t)
        blocks.append(np.column_stack([st, np.full(n, panel.macro[t + 1])]))
        targets.append(panel.outcomes[:, t + 1])
        origins.append(np.column_stack([np.arange(n), np.full(n, t)]))
    if not blocks:
        raise InsufficientHistory(f"no training months in [{t_start}, {t0 - 1}]")
    return TrainingSet(np.vstack(blocks), np.concatenate(targets), np.vstack(origins))


@dataclass
class FittedModel:
    """Fitted one-step model.  ``params`` is an sklearn forest or ridge coefficients."""

    kind: str
    params: object
    training_summary: dict = field(default_factory=dict)

    def predict(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=float)
        flat = f.reshape(-1, f.shape[-1])
        if self.kind == "ridge":
            coef = self.params
            out = coef[0] + flat @ coef[1:]
        elif self.kind == "constant":
            out = np.full(flat.shape[0], float(self.params))
        else:
            out = self.params.predict(flat)
        return out.reshape(f.shape[:-1])

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return self.predict(features)

    def save(self, path: str | Path) -> None:
        """Write ``MAGIC | u32 version | u32 header_len | json header | pickle``."""
        header = json.dumps({"kind": self.kind, "training_summary": self.training_summary},
                            sort_keys=True).encode("utf-8")
        payload = pickle.dumps(self.params, protocol=4)
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<II", MODEL_VERSION, len(header)))
            fh.write(header)
            fh.write(payload)

    @classmethod
    def load(cls, path: str | Path) -> "FittedModel":
        raw = Path(path).read_bytes()
        if not raw.startswith(MODEL_MAGIC):
            raise ValueError(f"{path}: not a stresspath model file")
        buf = io.BytesIO(raw[len(MODEL_MAGIC):])
        version, hlen = struct.unpack("<II", buf.read(8))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        header = json.loads(buf.read(hlen).decode("utf-8"))
        params = pickle.loads(buf.read())
        return cls(header["kind"], params, header["training_summary"])


def _summary(model: FittedModel, ts: TrainingSet) -> dict:
    resid = model.predict(ts.features) - ts.targets
    return {"n_rows": int(len(ts)), "rmse_in_sample": float(np.sqrt(np.mean(resid**2)))}


def fit_extra_trees(ts: TrainingSet, n_estimators: int = 200, max_depth: int | None = 8,
                    min_leaf: int = 5, rng: np.random.Generator | int | None = None) -> FittedModel:
    """Extremely randomised trees grown on the full training set."""
    if len(ts) == 0:
        raise ValueError("empty training set")
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    if isinstance(rng, np.random.Generator):
        seed = int(rng.integers(2**31 - 1))
    else:
        seed = rng
    if np.ptp(ts.targets) == 0.0:
        model = FittedModel("constant", float(ts.targets[0]))
    else:
        est = ExtraTreesRegressor(n_estimators=n_estimators, max_depth=max_depth,
                                  min_samples_leaf=min_leaf, max_features=1.0,
                                  bootstrap=False, random_state=seed, n_jobs=_n_jobs())
        est.fit(ts.features, ts.targets)
        model = FittedModel("extra_trees", est)
    model.training_summary = _summary(model, ts)
    model.training_summary.update(n_estimators=n_estimators, max_depth=max_depth,
                                  min_leaf=min_leaf, seed=seed)
    return model


def _n_jobs() -> int | None:
    import os
    v = os.environ.get("STRESSPATH_THREADS")
    return int(v) if v else None


def fit_ridge(ts: TrainingSet, lam: float = 0.0) -> FittedModel:
    """Least squares with penalty ``lam * ||coef||^2``; intercept unpenalised."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    x, y = ts.features, ts.targets
    xm, ym = x.mean(axis=0), y.mean()
    xc = x - xm
    gram = xc.T @ xc + lam * np.eye(x.shape[1])
    if lam == 0 and np.linalg.matrix_rank(gram) < x.shape[1]:
        raise SingularSystem("singular normal equations at lambda=0; use lambda > 0")
    beta = np.linalg.solve(gram, xc.T @ (y - ym))
    coef = np.concatenate([[ym - xm @ beta], beta])
    model = FittedModel("ridge", coef)
    model.training_summary = _summary(model, ts)
    model.training_summary["lambda"] = lam
    return model


@dataclass(frozen=True)
class LearnerSpec:
    """How to fit a one-step or direct model."""

    kind: str = "extra_trees"
    n_estimators: int = 200
    max_depth: int | None = 8
    min_leaf: int = 5
    ridge_lambda: float = 1e-8
    seed: int = 0

    def fit(self, ts: TrainingSet) -> FittedModel:
        if self.kind == "extra_trees":
            return fit_extra_trees(ts, self.n_estimators, self.max_depth, self.min_leaf, self.seed)
        if self.kind == "ridge":
            return fit_ridge(ts, self.ridge_lambda)
        raise ValueError(f"unknown learner kind {self.kind!r}")

    def to_dict(self) -> dict:
        return dict(kind=self.kind, n_estimators=self.n_estimators, max_depth=self.max_depth,
                    min_leaf=self.min_leaf, ridge_lambda=self.ridge_lambda, seed=self.seed)


@dataclass
class EpsReport:
    """``eps_n`` is the sup-norm error; ``mean_abs`` and ``rms`` average it instead."""

    eps_n: float
    mode: str
    n_eval: int
    mean_abs: float = float("nan")
    rms: float = float("nan")


def estimate_eps_trajectory(model: Callable, true_m: Callable | None = None,
                            visited: np.ndarray | None = None,
                            heldout: TrainingSet | None = None) -> EpsReport:
    """Sup-norm one-step error.

    With ``true_m`` and the visited ``(state, a)`` rows this is the maximum of
    ``|m_hat - m|`` over the rollout (``oracle_trajectory``).  Otherwise the
    maximum absolute residual on ``heldout`` rows is returned; that proxy is
    optimistic when the rollout leaves the training support.
    """
    if true_m is not None and visited is not None:
        v = np.asarray(visited, dtype=float).reshape(-1, 6)
        err = np.abs(model(v) - true_m(v))
        return _report(err, "oracle_trajectory")
    if heldout is not None:
        return _report(np.abs(model(heldout.features) - heldout.targets), "heldout")
    raise ValueError("eps_n unavailable: need true_m with visited states, or held-out rows")


def _report(err: np.ndarray, mode: str) -> EpsReport:
    if err.size == 0:
        return EpsReport(0.0, mode, 0, 0.0, 0.0)
    return EpsReport(float(err.max()), mode, int(err.size), float(err.mean()),
                     float(np.sqrt(np.mean(err**2))))


def heldout_split(ts: TrainingSet, fraction: float = 0.2) -> tuple[TrainingSet, TrainingSet]:
    """Split by time: the last ``fraction`` of origin months is held out."""
    months = np.unique(ts.origins[:, 1])
    n_hold = max(1, int(round(fraction * months.size)))
    cut = months[-n_hold]
    mask = ts.origins[:, 1] < cut
    return ts.subset(mask), ts.subset(~mask)
