"""Delay-perception-aware downlink power scheduling toolkit.

Pipeline: learn a Gaussian-mixture model of how users perceive delay,
convert each learned mode into a per-user deadline with a stated
reliability, then drive a per-slot power/resource-block optimizer built
on Lyapunov drift-plus-penalty with dual decomposition, all inside a
seeded discrete-time downlink simulator.
"""

from .chi2 import chi_square_cdf, chi_square_pdf, chi_square_quantile
from .perception import (
    GmmModel,
    JointDataset,
    ModeClassifier,
    PerceptionProfile,
    assign_cluster,
    classify,
    effective_delay,
    em_fit,
    perception_bound,
    responsibility,
    select_mode_count,
    train_classifier,
    within_cluster_scatter,
)
from .queueing import RateTrace, TrafficSpec, delay_violation_prob, mm1_oracle, service_time_sample
from .scheduler import (
    InfeasibleSlotError,
    SchedulerConfig,
    SlotAllocation,
    UserState,
    assign_rb,
    drift_bound,
    dual_subgradient,
    effective_multiplier,
    penalty_y,
    per_rb_power,
    resolve_delay_target,
    solve_slot,
    split_reliability_budget,
    update_virtual_queue,
)
from .simengine import (
    ComparisonReport,
    Scenario,
    ScenarioInfeasibleError,
    ScenarioReport,
    compare_scenarios,
    generate_channel,
    generate_perception_dataset,
    run_simulation,
    sweep_deadline,
    sweep_population,
    sweep_v,
)

__version__ = "0.1.0"
