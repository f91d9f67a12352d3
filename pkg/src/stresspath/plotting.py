"""Figures rendered to PNG with the Agg backend.

Each figure is drawn from the same rows that go into the CSV tables, so a
plot never shows a number that is absent from the data files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def _group(rows: list[dict], key: str) -> dict:
    out: dict = {}
    for r in rows:
        out.setdefault(r[key], []).append(r)
    return out


def oracle_figure(curves: list[dict], path: Path, title: str = "") -> Path:
    groups = _group(curves, "regime")
    fig, axes = plt.subplots(1, len(groups), figsize=(4.2 * len(groups), 3.4), squeeze=False)
    for ax, (regime, rows) in zip(axes[0], groups.items()):
        h = [r["h"] for r in rows]
        ax.plot(h, [r["bound"] for r in rows], "k--", label="bound")
        ax.plot(h, [r["rec_err"] for r in rows], "o-", label="recursive")
        if rows[0].get("dir_err") is not None:
            ax.plot(h, [r["dir_err"] for r in rows], "s-", label="direct")
        ax.set_yscale("log")
        ax.set_title(regime)
        ax.set_xlabel("h")
    axes[0][0].set_ylabel("mean error")
    axes[0][0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def bias_figure(curves: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for dgp, rows in _group(curves, "dgp").items():
        h = np.array([r["h"] for r in rows])
        b = np.array([r["b_h"] for r in rows])
        se = np.array([r["b_h_se"] for r in rows])
        ax.errorbar(h, b, yerr=2 * se, marker="o", capsize=2, label=dgp)
    ax.axhline(0, color="grey", lw=0.5)
    ax.set_xlabel("h")
    ax.set_ylabel("b_h")
    ax.legend(fontsize=8)
    return _save(fig, path)


def coverage_figure(rows: list[dict], path: Path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    sev = [r["severity"] for r in rows]
    x = np.arange(len(sev))
    a1.plot(x, [r["r_weight"] for r in rows], "o-")
    a1.set_ylabel("r_weight")
    a2.plot(x, [r["b_eff"] for r in rows], "s-")
    a2.set_ylabel("b_eff")
    for ax in (a1, a2):
        ax.set_xticks(x, sev)
        ax.set_xlabel("severity")
    return _save(fig, path)


def gap_figure(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    key = "abs_gap" if "abs_gap" in rows[0] else "abs_gap_h12"
    ax.plot([r["gamma_A"] for r in rows], [r[key] for r in rows], "o-")
    ax.set_xlabel("gamma (gamma_A = gamma_Y)")
    ax.set_ylabel("|tau_do - tau_obs| at h = 12")
    return _save(fig, path)


def covid_figure(curves: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for name, rows in _group(curves, "scenario").items():
        ax.plot([r["h"] for r in rows], [r["err"] for r in rows], "o-", label=name)
    ax.set_xlabel("h")
    ax.set_ylabel("|mu_hat - mu_oracle|")
    ax.legend(fontsize=8)
    return _save(fig, path)


def render_experiment(kind: str, result, out_dir: Path, name: str) -> list[Path]:
    """Draw the figure for one experiment result; returns written paths."""
    out_dir = Path(out_dir)
    stem = name
    if kind == "oracle":
        return [oracle_figure(result.table(f"{stem}_curves"), out_dir / f"{stem}.png")]
    if kind == "bias":
        return [bias_figure(result.table(f"{stem}_curves"), out_dir / f"{stem}.png")]
    if kind == "coverage":
        return [coverage_figure(result.table(stem), out_dir / f"{stem}.png")]
    if kind == "gap":
        return [gap_figure(result.table(stem), out_dir / f"{stem}.png")]
    if kind == "covid":
        return [covid_figure(result.table(f"{stem}_curves"), out_dir / f"{stem}.png")]
    raise ValueError(f"unknown figure kind {kind!r}")


def report_figures(per_h: list[dict], out_dir: Path) -> list[Path]:
    """Contrast with inner and outer bands, and the per-path mean trajectories."""
    out_dir = Path(out_dir)
    h = np.array([r["h"] for r in per_h])
    tau = np.array([r["tau_hat"] for r in per_h])

    def col(k):
        v = np.array([np.nan if r[k] is None else r[k] for r in per_h], dtype=float)
        return np.where(np.isfinite(v), v, np.nan)

    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    ax.fill_between(h, col("outer_lower"), col("outer_upper"), alpha=0.2, label="outer band")
    ax.fill_between(h, tau - col("delta_est"), tau + col("delta_est"), alpha=0.35,
                    label="estimation band")
    ax.plot(h, tau, "k-o", ms=3, label="contrast")
    ax.axhline(0, color="grey", lw=0.5)
    ax.set_xlabel("h")
    ax.set_ylabel("stress minus baseline")
    ax.legend(fontsize=8)
    p1 = _save(fig, out_dir / "contrast_bands.png")

    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    ax.plot(h, col("mu_stress"), "o-", ms=3, label="stress (recursive)")
    ax.plot(h, col("mu_baseline"), "o-", ms=3, label="baseline (recursive)")
    ax.plot(h, col("mu_stress_direct"), "--", label="stress (direct)")
    ax.plot(h, col("mu_baseline_direct"), "--", label="baseline (direct)")
    ax.set_xlabel("h")
    ax.set_ylabel("mean outcome")
    ax.legend(fontsize=8)
    p2 = _save(fig, out_dir / "path_means.png")
    return [p1, p2]
