"""``stresspath`` command line: ``sim``, ``exp <id>`` and ``report``.

Exit status: 0 success, 1 hard-invariant failure, 2 usage error, 3 I/O or
data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dgp import DgpConfig, replication_rng, simulate
from .experiments import (EXPERIMENTS, ExperimentConfig, ExperimentError, rerun_from_manifest,
                          run_experiment)
from .identification import SensitivitySpec
from .learner import LearnerSpec
from .macro import MacroDataError, ScenarioSpec, load_macro_csv
from .report import ReportConfig, run_report, write_report
from .tables import load_panel_csv, write_json, write_panel_csv

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("stresspath")


class UsageError(Exception):
    pass


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stresspath", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("sim", parents=[common], help="simulate a panel to CSV")
    s.add_argument("--macro-csv", help="replace the synthetic macro with this series")

    e = sub.add_parser("exp", parents=[common], help="run an experiment")
    e.add_argument("id", nargs="?", choices=EXPERIMENTS)
    e.add_argument("--full", action="store_true", help="full-scale replication counts")
    e.add_argument("--alpha", type=float, default=None)
    e.add_argument("--macro-csv")
    e.add_argument("--replications", type=int, default=None)
    e.add_argument("--from-manifest", help="rerun the config stored in a manifest.json")

    r = sub.add_parser("report", parents=[common], help="three-layer report for one scenario")
    r.add_argument("--panel", help="panel CSV (default: simulate from --config)")
    r.add_argument("--scenario", required=True, help="ScenarioSpec JSON file")
    r.add_argument("--c1", type=float, required=True, help="one-step confounding bound")
    r.add_argument("--phi-u", type=float, required=True, help="assumed confounder persistence")
    r.add_argument("--alpha", type=float, default=0.05)
    r.add_argument("--macro-csv", help="real macro series for a simulated panel")
    r.add_argument("--trees", type=int, default=100)
    return p


def _cmd_sim(args) -> int:
    cfg = DgpConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    panel = _simulate(cfg, args.macro_csv)
    out = Path(args.out)
    write_panel_csv(panel, out / "panel.csv")
    write_json(out / "dgp.json", cfg.to_dict())
    print(f"wrote {out / 'panel.csv'} ({panel.n_units} units, {panel.n_periods} months, t0={panel.t0})")
    return EXIT_OK


def _simulate(cfg: DgpConfig, macro_csv: str | None):
    if macro_csv:
        from .experiments import layer2_setup
        l2 = layer2_setup(load_macro_csv(macro_csv))
        d = cfg.to_dict()
        d.update(n_periods=len(l2.series), phi_A=l2.phi, sigma_A=l2.sigma, mu_A=l2.intercept)
        cfg = DgpConfig.from_dict(d)
        return l2.simulate(cfg, replication_rng(cfg.seed, 0))
    return simulate(cfg, replication_rng(cfg.seed, 0))


def _cmd_exp(args) -> int:
    if args.from_manifest:
        manifest, result = rerun_from_manifest(args.from_manifest, args.out, not args.no_figures)
    else:
        if args.id is None:
            raise UsageError("give an experiment id or --from-manifest")
        d = _read_json(args.config)
        d["experiment"] = args.id
        for key in ("seed", "alpha", "replications", "macro_csv"):
            v = getattr(args, key)
            if v is not None:
                d[key] = v
        if args.full:
            d["full"] = True
        if args.id.startswith("2") and not d.get("macro_csv"):
            raise UsageError(f"experiment {args.id} needs --macro-csv")
        cfg = ExperimentConfig.from_dict(d)
        manifest, result = run_experiment(cfg, args.out, not args.no_figures)
    for name, (cols, rows) in result.tables.items():
        if name.endswith(("_replications", "_curves")):
            continue
        print(name)
        print("  " + ",".join(cols))
        for r in rows:
            print("  " + ",".join(_fmt(v) for v in r))
    print(f"wall time {manifest.wall_time:.1f} s; outputs in {args.out}")
    failed = [k for k, ok in manifest.invariants.items() if not ok]
    if failed:
        print("hard invariant failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _fmt(v) -> str:
    from .tables import format_cell
    return format_cell(v)


def _cmd_report(args) -> int:
    spec = ScenarioSpec.from_json(args.scenario)
    cfg_json = _read_json(args.config)
    seed = 0 if args.seed is None else args.seed
    if args.panel:
        panel = load_panel_csv(args.panel)
    else:
        dgp = DgpConfig.from_dict(cfg_json.get("dgp", cfg_json))
        panel = _simulate(dgp.with_(seed=seed), args.macro_csv)
    sens = SensitivitySpec(c1=args.c1, phi_u=args.phi_u)
    rc = ReportConfig(alpha=args.alpha, learner=LearnerSpec(n_estimators=args.trees, seed=seed), seed=seed)
    result = run_report(panel, spec, sens, rc)
    files = write_report(result, args.out, not args.no_figures,
                         extra={"scenario": spec.to_dict(), "sensitivity": sens.to_dict(),
                                "alpha": args.alpha})
    for r in result.rows:
        tag = " [abstain]" if r["abstain"] else ""
        print(f"h={r['h']:2d} tau={r['tau_hat']: .4f} outer=[{_fmt(r['outer_lower'])}, "
              f"{_fmt(r['outer_upper'])}]{tag}")
    print(result.diagnostics.summary())
    print("wrote " + ", ".join(files))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return {"sim": _cmd_sim, "exp": _cmd_exp, "report": _cmd_report}[args.verb](args)
    except (UsageError, ExperimentError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, (MacroDataError,)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
