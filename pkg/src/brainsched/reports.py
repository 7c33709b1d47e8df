"""Report serialization: tidy CSV and JSON with stable schemas.

Floats are written at 9 significant digits; column order is fixed so
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .simengine import ComparisonReport, ScenarioReport

SLOT_USER_COLUMNS = (
    "slot",
    "user",
    "kind",
    "power_w",
    "rate_bps",
    "virtual_queue",
    "outage",
)

USER_SUMMARY_COLUMNS = (
    "user",
    "kind",
    "brain_aware",
    "d_max_s",
    "epsilon",
    "mean_power_w",
    "mean_rate_bps",
    "mean_outage",
    "empirical_reliability",
    "reliability_slot_fraction",
    "convergence_slot",
    "final_virtual_queue",
    "mode_id",
    "d_min_clamped",
)

ALLOCATION_COLUMNS = ("slot", "user", "rb", "power_w", "rate_bps")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return f"{value:.9g}"
    if value is None:
        return ""
    return str(value)


def write_csv(rows, columns, path) -> Path:
    """Write dict rows with a fixed column order; header only when empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    return path


def report_rows(report: ScenarioReport):
    """One row per slot and user."""
    kinds = [s.kind for s in report.user_summaries]
    for t in range(report.n_slots):
        for i in range(report.n_users):
            yield {
                "slot": t,
                "user": report.user_summaries[i].user_id,
                "kind": kinds[i],
                "power_w": report.power_w[t, i],
                "rate_bps": report.rate_bps[t, i],
                "virtual_queue": report.virtual_queue[t, i],
                "outage": report.outage[t, i],
            }


def summary_rows(report: ScenarioReport):
    for s in report.user_summaries:
        yield {
            "user": s.user_id,
            "kind": s.kind,
            "brain_aware": s.brain_aware,
            "d_max_s": s.d_max_s,
            "epsilon": s.epsilon,
            "mean_power_w": s.mean_power_w,
            "mean_rate_bps": s.mean_rate_bps,
            "mean_outage": s.mean_outage,
            "empirical_reliability": s.empirical_reliability,
            "reliability_slot_fraction": s.reliability_slot_fraction,
            "convergence_slot": s.convergence_slot,
            "final_virtual_queue": s.final_virtual_queue,
            "mode_id": s.mode_id,
            "d_min_clamped": s.d_min_clamped,
        }


def report_to_json_dict(report: ScenarioReport) -> dict:
    return {
        "scenario": report.scenario.to_json_dict(),
        "totals": {
            "total_energy_w_slots": report.total_energy_w_slots,
            "mean_total_power_w": report.mean_total_power_w,
            "n_infeasible_slots": int(report.infeasible_slots.size),
            "infeasible_slots": report.infeasible_slots.tolist(),
            "mean_dual_iterations": float(report.dual_iterations.mean()),
        },
        "reliability_bounds": list(report.reliability_bounds),
        "users": [dict(r) for r in summary_rows(report)],
    }


def comparison_to_json_dict(comp: ComparisonReport) -> dict:
    return {
        "mean_d_min_s": comp.mean_d_min_s,
        "fixed_deadline_s": comp.fixed_deadline_s,
        "aware_mean_power_w": comp.aware_mean_power_w,
        "unaware_mean_power_w": comp.unaware_mean_power_w,
        "power_ratio": comp.power_ratio,
        "power_saving_fraction": comp.power_saving_fraction,
        "aware_min_reliability": comp.aware_min_reliability,
        "unaware_min_reliability": comp.unaware_min_reliability,
        "reliability_parity": comp.reliability_parity,
        "aware": report_to_json_dict(comp.aware),
        "unaware": report_to_json_dict(comp.unaware),
    }


def allocation_rows(slot: int, alloc, user_ids=None):
    """Flatten one slot's allocation: one row per assigned block."""
    n_users, n_rbs = alloc.rho.shape
    ids = list(range(n_users)) if user_ids is None else list(user_ids)
    for j in range(n_rbs):
        owners = np.nonzero(alloc.rho[:, j])[0]
        for i in owners:
            yield {
                "slot": slot,
                "user": ids[i],
                "rb": j,
                "power_w": alloc.power[i, j],
                "rate_bps": alloc.rb_rates_bits[i, j],
            }


def slot_diagnostics(slot: int, alloc, users) -> dict:
    """Per-slot JSON diagnostics: multipliers, queues, iterations, feasibility."""
    return {
        "slot": slot,
        "lambda": [float(v) for v in alloc.dual_lambda],
        "virtual_queue": [float(u.F) for u in users],
        "dual_iterations": int(alloc.dual_iterations),
        "feasible": True,
    }


def emit_report(report, format: str, path) -> Path:
    """Serialize a scenario or comparison report to `path`.

    CSV gives the tidy slot-by-user table for scenario reports and the
    summary grid for comparisons; JSON gives the full nested document.
    """
    if format == "json":
        if isinstance(report, ScenarioReport):
            return write_json(report_to_json_dict(report), path)
        if isinstance(report, ComparisonReport):
            return write_json(comparison_to_json_dict(report), path)
        if isinstance(report, (list, dict)):
            return write_json(report, path)
        raise TypeError(f"cannot serialize {type(report).__name__} to JSON")
    if format == "csv":
        if isinstance(report, ScenarioReport):
            return write_csv(report_rows(report), SLOT_USER_COLUMNS, path)
        if isinstance(report, ComparisonReport):
            rows = [
                {"arm": "brain_aware", **row} for row in summary_rows(report.aware)
            ] + [
                {"arm": "brain_unaware", **row} for row in summary_rows(report.unaware)
            ]
            return write_csv(rows, ("arm",) + USER_SUMMARY_COLUMNS, path)
        if isinstance(report, list):
            columns = tuple(report[0].keys()) if report else ()
            return write_csv(report, columns, path)
        raise TypeError(f"cannot serialize {type(report).__name__} to CSV")
    raise ValueError(f"unknown format {format!r}")
