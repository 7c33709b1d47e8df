"""Command-line front end: fit, quantile, simulate, compare, sweep.

Configuration comes from an optional JSON file plus repeatable
`--set section.key=value` overrides; unknown keys are rejected so typos
fail fast. Every run echoes its fully resolved configuration, making the
output reproducible from the printed block alone. Reports land in
`--report-dir` (or $BRAINSCHED_REPORT_DIR, default ./reports) as CSV/JSON
plus rendered PNG figures unless `--no-figures` is given.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 infeasible scenario, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .chi2 import chi_square_quantile
from .perception import (
    DataError,
    em_fit,
    load_dataset_csv,
    mode_count_scan,
    save_model_json,
)
from .simengine import (
    Scenario,
    ScenarioInfeasibleError,
    compare_scenarios,
    generate_perception_dataset,
    run_simulation,
    sweep_deadline,
    sweep_population,
    sweep_v,
)
from . import figures, reports


class ConfigError(ValueError):
    """Bad configuration file or override."""


EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INFEASIBLE = 4

FIT_KEYS = {
    "dataset_csv": None,
    "k_min": 1,
    "k_max": 6,
    "elbow_ratio": 0.4,
    "synthetic": True,
}

SWEEP_GRIDS = ("deadline", "humans", "mtds", "v")


@dataclass
class RunConfig:
    command: str
    scenario: Scenario
    fit: dict = field(default_factory=dict)
    report_dir: Path = Path("reports")
    render_figures: bool = True
    grid: str = "deadline"
    values: tuple = ()
    dof: int = 2
    gamma: float = 0.95


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(config: dict, pairs) -> dict:
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"--set keys are dotted (section.key), got {key!r}")
        config.setdefault(section, {})
        if not isinstance(config[section], dict):
            raise ConfigError(f"config section {section!r} is not an object")
        config[section][name] = _parse_value(raw)
    return config


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    return obj


def build_run_config(args) -> RunConfig:
    config = _load_config(args.config)
    known_sections = {"scenario", "fit", "sweep"}
    unknown = set(config) - known_sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    _apply_overrides(config, args.set)

    scenario_cfg = dict(config.get("scenario", {}))
    if args.seed is not None:
        scenario_cfg["seed"] = args.seed
    try:
        scenario = Scenario.from_json_dict(scenario_cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario config: {exc}") from None

    fit_cfg = dict(FIT_KEYS)
    for key, value in config.get("fit", {}).items():
        if key not in FIT_KEYS:
            raise ConfigError(f"unknown fit config key: {key!r}")
        fit_cfg[key] = value
    if getattr(args, "dataset", None):
        fit_cfg["dataset_csv"] = args.dataset
        fit_cfg["synthetic"] = False

    sweep_cfg = dict(config.get("sweep", {}))
    unknown = set(sweep_cfg) - {"grid", "values"}
    if unknown:
        raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
    grid = getattr(args, "grid", None) or sweep_cfg.get("grid", "deadline")
    if grid not in SWEEP_GRIDS:
        raise ConfigError(f"sweep grid must be one of {SWEEP_GRIDS}, got {grid!r}")
    values = getattr(args, "values", None)
    if values:
        try:
            values = tuple(float(v) for v in values.split(","))
        except ValueError:
            raise ConfigError(f"--values expects comma-separated numbers, got {values!r}")
    else:
        values = tuple(sweep_cfg.get("values", ()))
    report_dir = Path(
        args.report_dir
        or os.environ.get("BRAINSCHED_REPORT_DIR")
        or "reports"
    )
    return RunConfig(
        command=args.command,
        scenario=scenario,
        fit=fit_cfg,
        report_dir=report_dir,
        render_figures=not args.no_figures,
        grid=grid,
        values=values,
        dof=getattr(args, "dof", 2),
        gamma=getattr(args, "gamma", 0.95),
    )


def _echo_config(run: RunConfig) -> None:
    block = {
        "command": run.command,
        "report_dir": str(run.report_dir),
        "render_figures": run.render_figures,
        "scenario": run.scenario.to_json_dict(),
    }
    if run.command == "fit":
        block["fit"] = run.fit
    if run.command == "sweep":
        block["sweep"] = {"grid": run.grid, "values": list(run.values)}
    if run.command == "quantile":
        block = {"command": "quantile", "dof": run.dof, "gamma": run.gamma}
    print("# effective configuration")
    print(json.dumps(block, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------


def _cmd_quantile(run: RunConfig) -> int:
    print(f"{chi_square_quantile(run.dof, run.gamma):.6f}")
    return EXIT_OK


def _cmd_fit(run: RunConfig) -> int:
    scen = run.scenario
    if run.fit.get("dataset_csv"):
        data = load_dataset_csv(run.fit["dataset_csv"])
    else:
        data = generate_perception_dataset(
            scen.n_subjects,
            scen.dataset_modes,
            seed=scen.seed,
            bootstrap_to=scen.bootstrap_to,
            delay_mean_range=(scen.delay_mean_low_s, scen.delay_mean_high_s),
        )
    k_min = int(run.fit["k_min"])
    k_max = min(int(run.fit["k_max"]), data.n)
    curve = mode_count_scan(data, k_min, k_max, seed=scen.seed)
    ratio = float(run.fit["elbow_ratio"])
    chosen = k_max
    for (k, w_k), (_, w_next) in zip(curve, curve[1:]):
        if w_k <= 0.0 or (w_k - w_next) / w_k < ratio:
            chosen = k
            break
    model = em_fit(data, chosen, seed=scen.seed)

    out = run.report_dir
    out.mkdir(parents=True, exist_ok=True)
    save_model_json(model, out / "model.json")
    reports.write_csv(
        ({"k": k, "within_cluster_scatter": w} for k, w in curve),
        ("k", "within_cluster_scatter"),
        out / "scatter_vs_k.csv",
    )
    if run.render_figures:
        figures.plot_elbow(curve, out / "elbow.png")
        figures.plot_delay_histogram(data, out / "delay_histogram.png")
    print(f"selected {chosen} modes; model written to {out / 'model.json'}")
    return EXIT_OK


def _cmd_simulate(run: RunConfig) -> int:
    out = run.report_dir
    hook = None
    sinks = []
    if run.dump_allocations:
        out.mkdir(parents=True, exist_ok=True)
        alloc_fh = (out / "allocations.csv").open("w", newline="")
        diag_fh = (out / "slot_diagnostics.jsonl").open("w")
        sinks = [alloc_fh, diag_fh]
        writer = __import__("csv").writer(alloc_fh)
        writer.writerow(reports.ALLOCATION_COLUMNS)

        def hook(slot, alloc, users):
            ids = [u.id for u in users]
            for row in reports.allocation_rows(slot, alloc, user_ids=ids):
                writer.writerow(
                    [row[c] if c in ("slot", "user", "rb") else f"{row[c]:.9g}"
                     for c in reports.ALLOCATION_COLUMNS]
                )
            diag_fh.write(json.dumps(reports.slot_diagnostics(slot, alloc, users)) + "\n")

    try:
        report = run_simulation(run.scenario, slot_hook=hook)
    finally:
        for fh in sinks:
            fh.close()
    reports.emit_report(report, "json", out / "report.json")
    reports.emit_report(report, "csv", out / "report.csv")
    reports.write_csv(
        reports.summary_rows(report), reports.USER_SUMMARY_COLUMNS, out / "summary.csv"
    )
    if run.render_figures:
        figures.plot_reliability(report, out / "reliability.png")
        figures.plot_power(report, out / "power.png")
        figures.plot_virtual_queues(report, out / "virtual_queues.png")
    worst = min(s.empirical_reliability for s in report.user_summaries)
    print(
        f"simulated {report.n_slots} slots x {report.n_users} users: "
        f"mean BS power {report.mean_total_power_w:.6g} W, "
        f"worst reliability {worst:.4f}"
    )
    return EXIT_OK


def _cmd_compare(run: RunConfig) -> int:
    comp = compare_scenarios(run.scenario)
    out = run.report_dir
    reports.emit_report(comp, "json", out / "comparison.json")
    reports.emit_report(comp, "csv", out / "comparison.csv")
    if run.render_figures:
        figures.plot_comparison(comp, out / "comparison.png")
    print(
        f"aware {comp.aware_mean_power_w:.6g} W vs unaware "
        f"{comp.unaware_mean_power_w:.6g} W: saving {comp.power_saving_fraction:.1%} "
        f"(parity {'ok' if comp.reliability_parity else 'VIOLATED'})"
    )
    return EXIT_OK


def _cmd_sweep(run: RunConfig) -> int:
    if not run.values:
        raise ConfigError("sweep needs --values or a sweep.values config entry")
    scen = run.scenario
    if run.grid == "deadline":
        rows = sweep_deadline(scen, run.values)
        x_field, y_fields = "deadline_s", ("aware_mean_power_w", "unaware_mean_power_w")
    elif run.grid == "v":
        rows = sweep_v(scen, run.values)
        x_field, y_fields = "V", ("convergence_slot",)
    else:
        rows = sweep_population(scen, [int(v) for v in run.values], vary=run.grid)
        x_field, y_fields = "count", ("aware_mean_power_w", "unaware_mean_power_w")
    out = run.report_dir
    path = out / f"sweep_{run.grid}.csv"
    reports.write_csv(rows, tuple(rows[0].keys()), path)
    if run.render_figures:
        figures.plot_sweep(rows, x_field, y_fields, out / f"sweep_{run.grid}.png")
    print(f"sweep over {run.grid} ({len(rows)} points) written to {path}")
    return EXIT_OK


COMMANDS = {
    "quantile": _cmd_quantile,
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
}


def dispatch(run: RunConfig) -> int:
    """Execute one resolved command; artifacts land under the report dir."""
    _echo_config(run)
    return COMMANDS[run.command](run)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brainsched",
        description="Perception-aware downlink scheduling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument(
            "--set",
            action="append",
            metavar="SECTION.KEY=VALUE",
            help="override one config entry (repeatable)",
        )
        p.add_argument("--report-dir", default=None, help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    q = sub.add_parser("quantile", help="print a chi-square quantile")
    common(q)
    q.add_argument("--dof", type=int, required=True)
    q.add_argument("--gamma", type=float, required=True)

    f = sub.add_parser("fit", help="fit the perception mixture model")
    common(f)
    f.add_argument("--dataset", help="subjects CSV (last column beta_seconds)")

    s = sub.add_parser("simulate", help="run one scenario")
    common(s)

    c = sub.add_parser("compare", help="matched brain-aware vs brain-unaware twins")
    common(c)

    w = sub.add_parser("sweep", help="grid sweeps (deadline, humans, mtds, v)")
    common(w)
    w.add_argument("--grid", choices=SWEEP_GRIDS, default=None)
    w.add_argument("--values", help="comma-separated grid values")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = build_run_config(args)
        return dispatch(run)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"error [data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ScenarioInfeasibleError as exc:
        print(f"error [infeasible]: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error [internal]: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
