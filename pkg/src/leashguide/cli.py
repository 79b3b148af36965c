"""Command-line entry points: simulate, compare, fit."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import metrics
from .estimator import write_belief_csv
from .human import DegenerateDataError, fit_params, read_fv_csv
from .sim import (COLLISION, PLANNER_FAILURE, REACHED, TIMEOUT, ConfigError, ScenarioConfig, SimResult,
                  actual_comfort, apply_override, config_from_dict, config_to_dict, file_sha256, load_config,
                  planned_comfort, run_scenario)
from .traction import ELASTIC, ELASTIC_FCD, INELASTIC, MODES

log = logging.getLogger("leashguide")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CODES = {REACHED: EXIT_OK, COLLISION: 3, PLANNER_FAILURE: 4, TIMEOUT: 5}

COMPARE_MODES = (INELASTIC, ELASTIC, ELASTIC_FCD)
PLANNED = "planned"


def build_config(config_path: str | None, overrides=(), seed: int | None = None,
                 mode: str | None = None) -> ScenarioConfig:
    """Scenario from a JSON file (or the built-in corridor) plus dotted overrides."""
    extra = list(overrides)
    if seed is not None:
        extra.append(f"seed={int(seed)}")
    if mode is not None:
        extra.append(f"mode={json.dumps(mode)}")
    if config_path:
        return load_config(config_path, extra)
    data = config_to_dict(ScenarioConfig())
    for o in extra:
        data = apply_override(data, o)
    return config_from_dict(data)


def _write_manifest(out: Path, command: str, config_path: str | None, seed: int, files: list[Path],
                    overrides=(), mode: str | None = None) -> Path:
    manifest = {
        "command": command,
        "config": str(config_path) if config_path else "builtin",
        "overrides": list(overrides),
        "mode": mode,
        "seed": seed,
        "out_dir": str(out),
        "outputs": [{"path": str(f.relative_to(out)), "sha256": file_sha256(f)} for f in files],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _metrics_or_none(fn, *args):
    try:
        return fn(*args)
    except metrics.InsufficientDataError:
        return None


def write_run_outputs(result: SimResult, out: Path) -> list[Path]:
    """Trajectory, belief and metrics CSVs for one run."""
    out.mkdir(parents=True, exist_ok=True)
    f_max = result.config.planner.F_max
    traj = out / "trajectory.csv"
    result.log.write_csv(traj)
    belief = out / "belief.csv"
    write_belief_csv(result.beliefs, belief)
    met = out / "metrics.csv"
    act = _metrics_or_none(actual_comfort, result.log, f_max)
    plan = _metrics_or_none(planned_comfort, result.log, result.estimated_params, f_max, result.config.rates.log)
    lines = ["source,status," + ",".join(metrics.CRITERIA)]
    for name, m in (("actual", act), (PLANNED, plan)):
        cells = ["", "", "", ""] if m is None else [repr(m.f_dot_rms), repr(m.theta_dot_rms), repr(m.t_over),
                                                    str(m.n_ch)]
        lines.append(",".join([name, result.status, *cells]))
    met.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [traj, belief, met]


def cmd_simulate(config_path: str | None, out_dir: str, overrides=(), seed: int | None = None,
                 mode: str | None = None) -> int:
    try:
        cfg = build_config(config_path, overrides, seed, mode)
        result = run_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    files = write_run_outputs(result, out)
    _write_manifest(out, "simulate", config_path, cfg.seed, files, overrides, cfg.mode)
    print(f"status={result.status} t={result.duration:.2f}s min_clearance={result.min_clearance:.3f}m "
          f"stage1_calls={result.planner_stats['stage1_calls']}")
    if result.collision:
        print(f"collision at t={result.collision['t']:.3f}s clearance={result.collision['clearance']:.4f}m",
              file=sys.stderr)
    return EXIT_CODES[result.status]


@dataclass
class Comparison:
    results: dict
    rows: list
    error: str | None = None

    def rci(self, name: str) -> float:
        return next(r.rci for r in self.rows if r.alternative == name)

    def ordering_holds(self) -> bool:
        vals = [self.rci(m) for m in COMPARE_MODES]
        return all(a < b for a, b in zip(vals, vals[1:]))


def run_comparison(cfg: ScenarioConfig, weights=None, progress=None) -> Comparison:
    """Run every rope mode on the same scenario and seed, then score them with TOPSIS."""
    f_max = cfg.planner.F_max
    results = {}
    rows = []
    for m in COMPARE_MODES:
        if progress:
            progress(m)
        res = run_scenario(replace(cfg, mode=m))
        results[m] = res
        if res.status != REACHED:
            rows.append(metrics.ReportRow(m, None, failed=res.status))
            continue
        rows.append(metrics.ReportRow(m, actual_comfort(res.log, f_max)))
    ours = results[ELASTIC_FCD]
    if ours.status == REACHED:
        rows.append(metrics.ReportRow(PLANNED, planned_comfort(ours.log, ours.estimated_params, f_max,
                                                               cfg.rates.log)))
    else:
        rows.append(metrics.ReportRow(PLANNED, None, failed=ours.status))
    error = None
    try:
        metrics.build_report(rows, weights)
    except metrics.DegenerateCriterionError as exc:
        error = str(exc)
    return Comparison(results, rows, error)


def _footer(comp: Comparison) -> str:
    ok = [r for r in comp.rows if r.failed is None and r.metrics is not None]
    if comp.error:
        return f"RCI not computed: {comp.error}"
    if len(ok) < 2:
        return "RCI not computed: fewer than two successful alternatives"
    ranked = sorted(ok, key=lambda r: r.rci)
    lines = ["RCI ordering: " + " < ".join(r.alternative for r in ranked)]
    if all(r.failed is None for r in comp.rows):
        verdict = "holds" if comp.ordering_holds() else "does NOT hold"
        lines.append(f"expected inelastic < elastic < elastic_fcd: {verdict}")
        lines.append(f"RCI(planned) = {comp.rci(PLANNED):.6f}")
    return "\n".join(lines)


def cmd_compare(config_path: str | None, out_dir: str, overrides=(), seed: int | None = None) -> int:
    try:
        cfg = build_config(config_path, overrides, seed)
        comp = run_comparison(cfg, progress=lambda m: log.info("running %s", m))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for m, res in comp.results.items():
        files += write_run_outputs(res, out / m)
    report_csv = out / "report.csv"
    metrics.write_report_csv(comp.rows, report_csv)
    text = metrics.format_report(comp.rows) + "\n\n" + _footer(comp) + "\n"
    report_txt = out / "report.txt"
    report_txt.write_text(text, encoding="utf-8")
    files += [report_csv, report_txt]
    _write_manifest(out, "compare", config_path, cfg.seed, files, overrides)
    print(text, end="")
    if comp.error:
        return EXIT_CONFIG
    for m in COMPARE_MODES:
        code = EXIT_CODES[comp.results[m].status]
        if code:
            return code
    return EXIT_OK


def cmd_fit(csv_path: str, out_dir: str = ".", dt: float = 0.05, cutoff: float = 2.0) -> int:
    try:
        samples = read_fv_csv(csv_path)
        fit = fit_params(samples, filter_cutoff=cutoff, dt=dt)
    except FileNotFoundError:
        print(f"error: file not found: {csv_path}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateDataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"alpha={fit.alpha:.6g}")
    print(f"beta={fit.beta:.6g}")
    print(f"residual_rms={fit.residual_rms:.6g}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"input": str(csv_path), "input_sha256": file_sha256(csv_path), "n": fit.n, "alpha": fit.alpha,
              "beta": fit.beta, "residual_rms": fit.residual_rms, "dt": dt, "filter_cutoff_hz": cutoff}
    (out / "fit_report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leashguide", description="Leash-guidance simulation tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("--config", help="scenario JSON (default: built-in corridor)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, value parsed as JSON")

    s = sub.add_parser("simulate", help="run one scenario")
    scenario_args(s)
    s.add_argument("--mode", choices=MODES)
    c = sub.add_parser("compare", help="run all rope modes and score them")
    scenario_args(c)
    f = sub.add_parser("fit", help="fit the force-speed line from a calibration CSV")
    f.add_argument("csv", help="F_newtons,v_mps file")
    f.add_argument("--out", default=".", help="directory for fit_report.json")
    f.add_argument("--dt", type=float, default=0.05, help="sample period, s")
    f.add_argument("--cutoff", type=float, default=2.0, help="low-pass cutoff, Hz (0 disables)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.overrides, args.seed, args.mode)
    if args.command == "compare":
        return cmd_compare(args.config, args.out, args.overrides, args.seed)
    return cmd_fit(args.csv, args.out, args.dt, args.cutoff)


if __name__ == "__main__":
    sys.exit(main())
