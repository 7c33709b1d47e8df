"""Scenario construction and time-slotted downlink simulation.

A scenario drops users uniformly in a disc, draws Rayleigh block fading on
top of distance path loss each slot, resolves per-user deadlines (learned
from a synthetic perception dataset or fixed), and runs the slot solver
while virtual queues accumulate the analytic outage slack. Everything is
keyed off one master seed, so a report is reproducible byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import perception as P
from .queueing import TrafficSpec
from .scheduler import (
    InfeasibleSlotError,
    SchedulerConfig,
    UserState,
    penalty_y,
    resolve_delay_target,
    solve_slot,
    update_virtual_queue,
)

SPEED_OF_LIGHT = 299_792_458.0
_LN2_SIM = math.log(2.0)


class ScenarioInfeasibleError(RuntimeError):
    """Too many slots could not serve every user."""


@dataclass(frozen=True)
class Scenario:
    """Full description of one simulation run."""

    n_humans: int = 5
    n_mtds: int = 5
    n_rbs: int = 55
    total_bandwidth_hz: float = 10e6
    slot_duration_s: float = 1.0
    n_slots: int = 1000
    cell_radius_m: float = 1500.0
    min_distance_m: float = 35.0
    path_loss_exponent: float = 3.0
    carrier_hz: float = 9e8
    arrival_rate_bits: float = 1e6
    mean_packet_bits: float = 1e4
    target_reliability: float = 0.95
    epsilon_prime: float = 0.025
    mode: str = "brain_aware"  # brain_aware | brain_unaware
    fixed_deadline_s: float = 0.020
    mtd_deadline_s: float = 0.020
    V: float = 100.0
    noise_psd_dbm_hz: float = -173.9
    noise_power_w: Optional[float] = None
    snr_gap: float = 1.0
    step_size: float = 4.0
    max_dual_iterations: int = 400
    d_min_floor_s: float = 1e-3
    n_subjects: int = 30
    dataset_modes: int = 3
    bootstrap_to: int = 1000
    delay_mean_low_s: float = 0.03
    delay_mean_high_s: float = 0.17
    mode_count_max: int = 6
    # Calibrated for the bootstrap generator: mixture splits of true modes
    # cut scatter by well over this, noise splits by well under.
    elbow_ratio: float = 0.4
    infeasible_abort_fraction: float = 0.2
    convergence_window: int = 200
    convergence_band: float = 0.02
    # Start virtual queues at an analytic equilibrium estimate instead of
    # zero (any bounded start preserves the drift guarantees); cold starts
    # remain available for convergence studies.
    warm_start_queues: bool = True
    # Explicit per-user initial queue levels; overrides warm_start_queues.
    # Lets sweeps start every run from one matched state.
    initial_queues: Optional[tuple] = None
    # Slots simulated before metric collection begins (queues carry over),
    # standard transient discarding for steady-state comparisons.
    warmup_slots: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_humans < 0 or self.n_mtds < 0 or self.n_humans + self.n_mtds < 1:
            raise ValueError("need at least one user")
        if self.n_rbs < 1 or self.n_slots < 1:
            raise ValueError("counts must be positive")
        if self.mode not in ("brain_aware", "brain_unaware"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.target_reliability < 1.0:
            raise ValueError("target reliability must lie in (0, 1)")

    @property
    def n_users(self) -> int:
        return self.n_humans + self.n_mtds

    @property
    def rb_bandwidth_hz(self) -> float:
        return self.total_bandwidth_hz / self.n_rbs

    @property
    def epsilon(self) -> float:
        """Per-slot outage target: one minus the reliability target."""
        return 1.0 - self.target_reliability

    def noise_w(self) -> float:
        if self.noise_power_w is not None:
            return self.noise_power_w
        psd_w_hz = 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0)
        return psd_w_hz * self.rb_bandwidth_hz

    def scheduler_config(self) -> SchedulerConfig:
        # The analytic outage formula needs each queue to relax well within
        # a slot (1/(mu - lambda) at most a tenth of the slot), so the
        # solver is told to keep at least that much service surplus.
        return SchedulerConfig(
            V=self.V,
            rb_bandwidth_hz=self.rb_bandwidth_hz,
            noise_power_w=self.noise_w(),
            snr_gap=self.snr_gap,
            step_size=self.step_size,
            max_dual_iterations=self.max_dual_iterations,
            min_rate_surplus_pkts=10.0 / self.slot_duration_s,
        )

    def traffic(self) -> TrafficSpec:
        return TrafficSpec(
            arrival_rate_bits=self.arrival_rate_bits,
            mean_packet_bits=self.mean_packet_bits,
        )

    def to_json_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**obj)


# ---------------------------------------------------------------------------
# Channel generation
# ---------------------------------------------------------------------------


def path_loss(distance_m: float, scenario: Scenario) -> float:
    """Mean power gain at `distance_m`: free-space at 1 m times d^-eta."""
    d0 = 1.0
    ref = (SPEED_OF_LIGHT / (4.0 * math.pi * scenario.carrier_hz * d0)) ** 2
    return ref * (d0 / max(distance_m, d0)) ** scenario.path_loss_exponent


def user_positions(scenario: Scenario, seed: Optional[int] = None) -> np.ndarray:
    """Distances from the base station, drawn once per run, uniform in the disc."""
    seed = scenario.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0xD15C])
    radii = scenario.cell_radius_m * np.sqrt(rng.uniform(size=scenario.n_users))
    return np.maximum(radii, scenario.min_distance_m)


def generate_channel(scenario: Scenario, slot: int, seed: Optional[int] = None) -> np.ndarray:
    """Gain matrix (users x RBs) for one slot.

    Unit-mean exponential (Rayleigh power) fading redrawn per slot and RB,
    multiplied by each user's distance path loss. Positions come from the
    run-level stream, fading from a per-slot stream, so the same
    (scenario, seed, slot) always yields the same matrix.
    """
    seed = scenario.seed if seed is None else seed
    distances = user_positions(scenario, seed)
    losses = np.array([path_loss(d, scenario) for d in distances])
    rng = np.random.default_rng([seed, 0xFAD0, slot])
    fading = rng.exponential(1.0, size=(scenario.n_users, scenario.n_rbs))
    return losses[:, None] * fading


# ---------------------------------------------------------------------------
# Synthetic perception dataset
# ---------------------------------------------------------------------------


def generate_perception_dataset(
    n_subjects: int,
    n_modes: int,
    seed: int = 0,
    bootstrap_to: Optional[int] = None,
    delay_mean_range: tuple[float, float] = (0.03, 0.17),
) -> P.JointDataset:
    """Multi-modal synthetic subjects, bootstrap-resampled with jitter.

    Each mode pairs a delay-perception Gaussian (means spread across
    `delay_mean_range` seconds) with three correlated feature dimensions,
    so the delay column's histogram is multi-modal and the features
    predict the mode. `bootstrap_to` rows are produced; when it equals
    `n_subjects` the originals are kept and only jittered.
    """
    if n_subjects < n_modes:
        raise ValueError(f"{n_subjects} subjects cannot span {n_modes} modes")
    if bootstrap_to is None:
        bootstrap_to = n_subjects
    if bootstrap_to < n_subjects:
        raise ValueError("bootstrap size cannot shrink the dataset")
    rng = np.random.default_rng([seed, 0xB007])

    low, high = delay_mean_range
    if not 0.0 < low <= high:
        raise ValueError(f"invalid delay mean range {delay_mean_range}")
    delay_means = np.linspace(low, high, n_modes) + rng.normal(0.0, 0.004, n_modes)
    delay_means = np.clip(delay_means, 0.5 * low, 1.2 * high)
    delay_stds = rng.uniform(0.004, 0.010, n_modes)
    feature_centers = rng.normal(0.0, 1.0, size=(n_modes, 3)) * 6.0

    # Shared feature correlation structure, mild feature-delay coupling.
    feat_corr = np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.3], [0.2, 0.3, 1.0]])
    chol_feat = np.linalg.cholesky(feat_corr)

    modes = np.repeat(np.arange(n_modes), math.ceil(n_subjects / n_modes))[:n_subjects]
    rng.shuffle(modes)
    rows = np.empty((n_subjects, 4))
    for i, k in enumerate(modes):
        feat = feature_centers[k] + chol_feat @ rng.standard_normal(3)
        beta = delay_means[k] + delay_stds[k] * rng.standard_normal()
        beta += 0.15 * delay_stds[k] * (feat[0] - feature_centers[k][0])
        rows[i, :3] = feat
        rows[i, 3] = max(beta, 2e-3)

    extra = bootstrap_to - n_subjects
    row_modes = modes
    if extra > 0:
        picks = rng.integers(0, n_subjects, size=extra)
        rows = np.vstack([rows, rows[picks]])
        row_modes = np.concatenate([modes, modes[picks]])
    # Jitter at the scale of each mode's own spread, so resampled copies
    # blend into a smooth cluster instead of piling up on their source rows.
    within = np.column_stack(
        [np.ones((len(row_modes), 3)), delay_stds[row_modes][:, None]]
    )
    rows = rows + rng.standard_normal(rows.shape) * 0.7 * within
    rows[:, 3] = np.maximum(rows[:, 3], 1e-3)
    return P.JointDataset(
        rows=rows, feature_names=("f1", "f2", "f3", "beta_seconds")
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UserSummary:
    user_id: int
    kind: str
    brain_aware: bool
    d_max_s: float
    epsilon: float
    mean_power_w: float
    mean_rate_bps: float
    mean_outage: float
    empirical_reliability: float
    reliability_slot_fraction: float
    convergence_slot: int
    final_virtual_queue: float
    mode_id: Optional[int] = None
    d_min_clamped: bool = False


@dataclass(frozen=True)
class ScenarioReport:
    scenario: Scenario
    power_w: np.ndarray  # (n_slots, n_users)
    rate_bps: np.ndarray
    virtual_queue: np.ndarray
    outage: np.ndarray
    dual_iterations: np.ndarray  # (n_slots,)
    infeasible_slots: np.ndarray  # indices
    user_summaries: tuple[UserSummary, ...]
    total_energy_w_slots: float
    mean_total_power_w: float
    reliability_bounds: tuple[float, ...]

    @property
    def n_slots(self) -> int:
        return self.power_w.shape[0]

    @property
    def n_users(self) -> int:
        return self.power_w.shape[1]


def _convergence_slot(outage: np.ndarray, epsilon: float, window: int, band: float) -> int:
    """First slot after which the windowed mean outage stays within the band.

    Returns n_slots when the trajectory never settles.
    """
    n = outage.shape[0]
    if n < window:
        return n
    kernel = np.ones(window) / window
    windowed = np.convolve(outage, kernel, mode="valid")  # index t -> slots [t, t+window)
    inside = np.abs(windowed - epsilon) <= band
    if not inside[-1]:
        return n
    last_outside = np.nonzero(~inside)[0]
    if last_outside.size == 0:
        return window - 1
    return int(last_outside[-1] + window)


def _summarize_user(
    scenario: Scenario,
    idx: int,
    user: UserState,
    aware: bool,
    power: np.ndarray,
    rate: np.ndarray,
    outage: np.ndarray,
    F_trace: np.ndarray,
) -> UserSummary:
    eps = user.epsilon
    mean_outage = float(outage.mean())
    return UserSummary(
        user_id=user.id,
        kind=user.kind,
        brain_aware=aware,
        d_max_s=float(user.d_max),
        epsilon=eps,
        mean_power_w=float(power.mean()),
        mean_rate_bps=float(rate.mean()),
        mean_outage=mean_outage,
        empirical_reliability=1.0 - mean_outage,
        reliability_slot_fraction=float(np.mean(outage <= eps)),
        convergence_slot=_convergence_slot(
            outage, eps, scenario.convergence_window, scenario.convergence_band
        ),
        final_virtual_queue=float(F_trace[-1]),
        mode_id=user.perception.mode_id if user.perception else None,
        d_min_clamped=user.perception.clamped if user.perception else False,
    )


# ---------------------------------------------------------------------------
# Scenario assembly and the main loop
# ---------------------------------------------------------------------------


def _learn_profiles(scenario: Scenario):
    """Dataset -> mode count -> GMM -> classifier -> per-human profile."""
    data = generate_perception_dataset(
        scenario.n_subjects,
        scenario.dataset_modes,
        seed=scenario.seed,
        bootstrap_to=scenario.bootstrap_to,
        delay_mean_range=(scenario.delay_mean_low_s, scenario.delay_mean_high_s),
    )
    k_max = min(scenario.mode_count_max, data.n)
    n_modes = P.select_mode_count(
        data, 1, k_max, seed=scenario.seed, elbow_ratio=scenario.elbow_ratio
    )
    model = P.em_fit(data, n_modes, seed=scenario.seed)
    classifier = P.train_classifier(model)
    rng = np.random.default_rng([scenario.seed, 0x5E1E])
    profiles = []
    for _ in range(scenario.n_humans):
        subject = data.rows[rng.integers(data.n)]
        mode = P.classify(classifier, subject[:-1])
        profiles.append(
            P.effective_delay(
                model, mode, scenario.epsilon_prime, d_min_floor=scenario.d_min_floor_s
            )
        )
    return profiles, model, data


def build_users(scenario: Scenario) -> tuple[list[UserState], tuple[float, ...]]:
    """Users with resolved deadlines; humans first, then MTDs."""
    traffic = scenario.traffic()
    eps = scenario.epsilon
    users: list[UserState] = []
    bounds: list[float] = []

    profiles = [None] * scenario.n_humans
    if scenario.mode == "brain_aware" and scenario.n_humans > 0:
        profiles, _, _ = _learn_profiles(scenario)

    for i in range(scenario.n_humans):
        profile = profiles[i]
        user = UserState(
            id=i,
            kind="human",
            traffic=traffic,
            d_max=None if profile is not None else scenario.fixed_deadline_s,
            epsilon=eps,
            perception=profile,
        )
        target = resolve_delay_target(user, profile)
        user.d_max = target.d_max
        users.append(user)
        bounds.append(target.reliability_bound)
    for j in range(scenario.n_mtds):
        user = UserState(
            id=scenario.n_humans + j,
            kind="mtd",
            traffic=traffic,
            d_max=scenario.mtd_deadline_s,
            epsilon=eps,
        )
        target = resolve_delay_target(user, None)
        users.append(user)
        bounds.append(target.reliability_bound)
    return users, tuple(bounds)


def _equilibrium_queue_estimate(scenario: Scenario, users: list[UserState]) -> np.ndarray:
    """Virtual-queue level whose bias alone meets each user's outage target.

    Assumes an even RB split at the user's distance path loss, averages the
    per-slot outage over a seeded batch of Rayleigh fading draws, and
    bisects the bias multiplier until that average hits the outage target.
    Competition for blocks is ignored, so the estimate runs a little low
    and the drift loop finishes the job.
    """
    distances = user_positions(scenario)
    mean_gain = np.array([path_loss(d, scenario) for d in distances])
    cfg = scenario.scheduler_config()
    k_share = max(int(round(scenario.n_rbs / max(len(users), 1))), 1)
    W, sigma2, gap = cfg.rb_bandwidth_hz, cfg.noise_power_w, cfg.snr_gap
    rng = np.random.default_rng([scenario.seed, 0xE57])
    fading = rng.exponential(1.0, size=(256, k_share))
    estimates = np.zeros(len(users))
    for i, user in enumerate(users):
        a = user.traffic.packet_arrival_rate
        if a <= 0.0:
            continue
        ell = user.traffic.mean_packet_bits
        floor_pkts = a + cfg.min_rate_surplus_pkts

        def mean_outage(nu_pkts: float) -> float:
            nu_bits = nu_pkts / ell
            snr = nu_bits * W * gap * fading * mean_gain[i] / (sigma2 * cfg.V * _LN2_SIM)
            rates = np.sum(W * np.log2(np.maximum(snr, 1.0)), axis=1) / ell
            rates = np.maximum(rates, floor_pkts)
            return float(np.mean(np.exp(-(rates - a) * user.d_max)))

        lo, hi = 0.0, sigma2 * cfg.V * _LN2_SIM * ell / (gap * W * mean_gain[i])
        while mean_outage(hi) > user.epsilon:
            hi *= 2.0
            if hi > 1e30:
                break
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if mean_outage(mid) > user.epsilon:
                lo = mid
            else:
                hi = mid
        estimates[i] = hi / user.d_max
    return estimates


def run_simulation(scenario: Scenario, slot_hook=None) -> ScenarioReport:
    """Iterate slots: draw channels, solve, update virtual queues, collect.

    `slot_hook(slot, allocation, users)` is invoked for every recorded
    feasible slot, e.g. to stream allocation dumps or diagnostics.
    """
    users, bounds = build_users(scenario)
    cfg = scenario.scheduler_config()
    n_slots, n_users = scenario.n_slots, scenario.n_users
    if scenario.initial_queues is not None:
        if len(scenario.initial_queues) != n_users:
            raise ValueError(
                f"initial_queues needs {n_users} entries, got {len(scenario.initial_queues)}"
            )
        for user, f0 in zip(users, scenario.initial_queues):
            user.F = float(f0)
    elif scenario.warm_start_queues:
        for user, f0 in zip(users, _equilibrium_queue_estimate(scenario, users)):
            user.F = float(f0)

    power = np.zeros((n_slots, n_users))
    rate = np.zeros((n_slots, n_users))
    queue = np.zeros((n_slots, n_users))
    outage = np.zeros((n_slots, n_users))
    dual_iters = np.zeros(n_slots, dtype=int)
    infeasible: list[int] = []

    for step in range(scenario.warmup_slots + n_slots):
        t = step - scenario.warmup_slots
        recording = t >= 0
        gains = generate_channel(scenario, step)
        for i, user in enumerate(users):
            user.channel_row = gains[i]
        try:
            alloc = solve_slot(users, cfg)
        except InfeasibleSlotError:
            # Slot skipped: no service, outage counts fully, queues carried.
            if recording:
                infeasible.append(t)
                outage[t] = 1.0
                for i, user in enumerate(users):
                    queue[t, i] = user.F
                if len(infeasible) > scenario.infeasible_abort_fraction * n_slots:
                    raise ScenarioInfeasibleError(
                        f"{len(infeasible)} of {t + 1} slots infeasible"
                    )
            continue
        for i, user in enumerate(users):
            if user.traffic.packet_arrival_rate <= 0.0:
                o, y = 0.0, -user.epsilon
            else:
                y = penalty_y(float(alloc.rates_bits[i]), user.traffic, user.d_max, user.epsilon)
                o = y + user.epsilon
            user.F = update_virtual_queue(user.F, y)
            if recording:
                outage[t, i] = o
                queue[t, i] = user.F
        if recording:
            dual_iters[t] = alloc.dual_iterations
            power[t] = alloc.power.sum(axis=1)
            rate[t] = alloc.rates_bits
            if slot_hook is not None:
                slot_hook(t, alloc, users)

    summaries = tuple(
        _summarize_user(
            scenario,
            i,
            user,
            user.perception is not None,
            power[:, i],
            rate[:, i],
            outage[:, i],
            queue[:, i],
        )
        for i, user in enumerate(users)
    )
    return ScenarioReport(
        scenario=scenario,
        power_w=power,
        rate_bps=rate,
        virtual_queue=queue,
        outage=outage,
        dual_iterations=dual_iters,
        infeasible_slots=np.array(infeasible, dtype=int),
        user_summaries=summaries,
        total_energy_w_slots=float(power.sum()),
        mean_total_power_w=float(power.sum(axis=1).mean()),
        reliability_bounds=bounds,
    )


# ---------------------------------------------------------------------------
# Comparisons and sweeps
# ---------------------------------------------------------------------------


def packet_level_reliability(
    report: ScenarioReport, user_index: int, n_packets: int = 100_000, seed: int = 0
) -> float:
    """Replay one user's rate trace through the discrete-event queue oracle.

    Returns the packet-level reliability (fraction of packets meeting the
    user's deadline). The trace must be stable in every slot, so runs with
    infeasible slots are rejected.
    """
    from .queueing import RateTrace, mm1_oracle

    if report.infeasible_slots.size:
        raise ValueError("rate trace contains infeasible slots; oracle needs stability")
    summary = report.user_summaries[user_index]
    trace = RateTrace(
        rates_bits=report.rate_bps[:, user_index],
        slot_duration_s=report.scenario.slot_duration_s,
    )
    violation = mm1_oracle(
        trace, report.scenario.traffic(), summary.d_max_s, n_packets=n_packets, seed=seed
    )
    return 1.0 - violation


@dataclass(frozen=True)
class ComparisonReport:
    aware: ScenarioReport
    unaware: ScenarioReport
    mean_d_min_s: float
    fixed_deadline_s: float
    aware_mean_power_w: float
    unaware_mean_power_w: float
    power_ratio: float  # aware / unaware
    power_saving_fraction: float
    aware_min_reliability: float
    unaware_min_reliability: float
    reliability_parity: bool


def compare_scenarios(base: Scenario) -> ComparisonReport:
    """Run matched brain-aware and brain-unaware twins on the same seed."""
    aware = run_simulation(replace(base, mode="brain_aware"))
    unaware = run_simulation(replace(base, mode="brain_unaware"))
    human_summaries = [s for s in aware.user_summaries if s.brain_aware]
    mean_d_min = (
        float(np.mean([s.d_max_s for s in human_summaries])) if human_summaries else 0.0
    )
    p_aware = aware.mean_total_power_w
    p_unaware = unaware.mean_total_power_w
    rel_aware = min(s.empirical_reliability for s in aware.user_summaries)
    rel_unaware = min(s.empirical_reliability for s in unaware.user_summaries)
    target = base.target_reliability
    return ComparisonReport(
        aware=aware,
        unaware=unaware,
        mean_d_min_s=mean_d_min,
        fixed_deadline_s=base.fixed_deadline_s,
        aware_mean_power_w=p_aware,
        unaware_mean_power_w=p_unaware,
        power_ratio=p_aware / p_unaware if p_unaware > 0 else math.inf,
        power_saving_fraction=1.0 - (p_aware / p_unaware) if p_unaware > 0 else 0.0,
        aware_min_reliability=rel_aware,
        unaware_min_reliability=rel_unaware,
        reliability_parity=(
            rel_aware >= target - 0.02 and rel_unaware >= target - 0.02
        ),
    )


def sweep_deadline(base: Scenario, deadlines_s) -> list[dict]:
    """Fixed-deadline grid: matched aware/unaware power per deadline."""
    rows = []
    for d in deadlines_s:
        comp = compare_scenarios(replace(base, fixed_deadline_s=float(d)))
        rows.append(
            {
                "deadline_s": float(d),
                "aware_mean_power_w": comp.aware_mean_power_w,
                "unaware_mean_power_w": comp.unaware_mean_power_w,
                "power_ratio": comp.power_ratio,
                "power_saving_fraction": comp.power_saving_fraction,
                "mean_d_min_s": comp.mean_d_min_s,
                "aware_min_reliability": comp.aware_min_reliability,
                "unaware_min_reliability": comp.unaware_min_reliability,
            }
        )
    return rows


def sweep_population(base: Scenario, counts, vary: str = "mtds") -> list[dict]:
    """User-count grid (humans or MTDs): aware vs unaware mean power."""
    if vary not in ("mtds", "humans"):
        raise ValueError("vary must be 'mtds' or 'humans'")
    rows = []
    for c in counts:
        scen = replace(base, **{"n_mtds" if vary == "mtds" else "n_humans": int(c)})
        comp = compare_scenarios(scen)
        rows.append(
            {
                "count": int(c),
                "varied": vary,
                "aware_mean_power_w": comp.aware_mean_power_w,
                "unaware_mean_power_w": comp.unaware_mean_power_w,
                "power_ratio": comp.power_ratio,
                "power_saving_fraction": comp.power_saving_fraction,
            }
        )
    return rows


def sweep_v(base: Scenario, v_values) -> list[dict]:
    """Drift-penalty weight grid: convergence index and power overshoot.

    Every run starts from one matched virtual-queue state (the equilibrium
    estimate at the grid's middle weight), isolating the weight's effect:
    a low weight must shed the largest queue excess at the drain-rate cap,
    a high weight starts short and overshoots while climbing.
    """
    v_values = [float(v) for v in v_values]
    if not v_values:
        raise ValueError("need at least one V value")
    mid = sorted(v_values)[len(v_values) // 2]
    reference = replace(base, V=mid)
    users, _ = build_users(reference)
    shared_start = tuple(float(f) for f in _equilibrium_queue_estimate(reference, users))

    rows = []
    for v in v_values:
        report = run_simulation(
            replace(base, V=v, initial_queues=shared_start)
        )
        conv = max(s.convergence_slot for s in report.user_summaries)
        running = np.cumsum(report.power_w.sum(axis=1)) / np.arange(1, report.n_slots + 1)
        final = running[-1]
        skip = min(report.n_slots // 10, 100)
        peak = float(running[skip:].max()) if final > 0 else 0.0
        rows.append(
            {
                "V": v,
                "convergence_slot": int(conv),
                "mean_total_power_w": report.mean_total_power_w,
                "power_overshoot_fraction": max(0.0, peak / final - 1.0) if final > 0 else 0.0,
            }
        )
    return rows
