"""Figure rendering for reports: PNG files written next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .perception import JointDataset
from .simengine import ComparisonReport, ScenarioReport


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_elbow(curve, path) -> Path:
    """Within-cluster scatter against candidate mode count."""
    ks = [k for k, _ in curve]
    ws = [w for _, w in curve]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(ks, ws, "o-")
    ax.set_xlabel("number of modes")
    ax.set_ylabel("within-cluster point scatter")
    ax.set_xticks(ks)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_delay_histogram(data: JointDataset, path, bins: int = 40) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.hist(data.delays * 1000.0, bins=bins, color="tab:blue", alpha=0.8)
    ax.set_xlabel("delay perception (ms)")
    ax.set_ylabel("subjects")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_reliability(report: ScenarioReport, path) -> Path:
    """Running reliability per user against the target."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    t = np.arange(1, report.n_slots + 1)
    for i, summary in enumerate(report.user_summaries):
        running = 1.0 - np.cumsum(report.outage[:, i]) / t
        ax.plot(t, running, lw=1.0, label=f"user {summary.user_id} ({summary.kind})")
    ax.axhline(report.scenario.target_reliability, color="k", ls="--", lw=1.0)
    ax.set_xlabel("slot")
    ax.set_ylabel("running reliability")
    ax.set_ylim(0.0, 1.02)
    if report.n_users <= 12:
        ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_power(report: ScenarioReport, path) -> Path:
    """Running mean of the base-station total power."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    t = np.arange(1, report.n_slots + 1)
    total = report.power_w.sum(axis=1)
    ax.plot(t, np.cumsum(total) / t, lw=1.2, color="tab:red")
    ax.set_xlabel("slot")
    ax.set_ylabel("running mean total power (W)")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_virtual_queues(report: ScenarioReport, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    t = np.arange(report.n_slots)
    for i, summary in enumerate(report.user_summaries):
        ax.plot(t, report.virtual_queue[:, i], lw=0.8, label=f"user {summary.user_id}")
    ax.set_xlabel("slot")
    ax.set_ylabel("virtual queue")
    if report.n_users <= 12:
        ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_comparison(comp: ComparisonReport, path) -> Path:
    """Per-user mean power, learned-deadline arm next to the fixed one."""
    aware = [s.mean_power_w * 1e3 for s in comp.aware.user_summaries]
    unaware = [s.mean_power_w * 1e3 for s in comp.unaware.user_summaries]
    idx = np.arange(len(aware))
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(idx - 0.2, unaware, width=0.4, label="brain-unaware")
    ax.bar(idx + 0.2, aware, width=0.4, label="brain-aware")
    ax.set_xlabel("user")
    ax.set_ylabel("mean power (mW)")
    ax.set_xticks(idx)
    ax.legend()
    ax.set_title(
        f"total saving {comp.power_saving_fraction:.0%} "
        f"(deadline {comp.fixed_deadline_s * 1e3:.0f} ms vs learned "
        f"{comp.mean_d_min_s * 1e3:.0f} ms)"
    )
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)


def plot_sweep(rows, x_field: str, y_fields, path, x_label=None, log_y=False) -> Path:
    """Generic grid plot for sweep rows (list of dicts)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs = [row[x_field] for row in rows]
    for y in y_fields:
        ax.plot(xs, [row[y] for row in rows], "o-", label=y)
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel(x_label or x_field)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)
