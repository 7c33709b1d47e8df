"""Slot-solver tests: closed forms vs numeric oracles, dual loop behavior."""

import math

import numpy as np
import pytest

from brainsched.queueing import TrafficSpec
from brainsched.scheduler import (
    InfeasibleSlotError,
    SchedulerConfig,
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
from brainsched.perception import PerceptionProfile

TRAFFIC = TrafficSpec(arrival_rate_bits=1e6, mean_packet_bits=1e4)


def make_cfg(**kwargs) -> SchedulerConfig:
    defaults = dict(
        V=1.0,
        rb_bandwidth_hz=180e3,
        noise_power_w=7.4e-16,
        snr_gap=1.0,
        max_dual_iterations=400,
    )
    defaults.update(kwargs)
    return SchedulerConfig(**defaults)


def make_user(uid=0, kind="mtd", d_max=0.02, epsilon=0.05, F=0.0, row=None, traffic=TRAFFIC):
    return UserState(
        id=uid,
        kind=kind,
        traffic=traffic,
        d_max=d_max,
        epsilon=epsilon,
        F=F,
        channel_row=row,
    )


# ---------------------------------------------------------------------------
# resolve_delay_target
# ---------------------------------------------------------------------------


def test_resolve_mtd_keeps_fixed_tolerance():
    user = make_user(kind="mtd", d_max=0.020)
    target = resolve_delay_target(user, None)
    assert target.d_max == 0.020
    assert target.epsilon == 0.05
    assert target.reliability_bound == pytest.approx(0.95)


def test_resolve_brain_aware_uses_learned_deadline():
    profile = PerceptionProfile(
        mode_id=1, d_min=0.038396, epsilon_prime=0.025, mu_d=0.1, var_d=4e-4
    )
    user = make_user(kind="human", d_max=None, epsilon=0.05)
    target = resolve_delay_target(user, profile)
    assert target.d_max == pytest.approx(0.038396)
    assert target.reliability_bound == pytest.approx(1.0 - (0.05 + 0.025))


def test_resolve_brain_unaware_needs_deadline():
    user = make_user(kind="human", d_max=None)
    with pytest.raises(ValueError, match="no fixed deadline"):
        resolve_delay_target(user, None)
    fallback = make_user(kind="human", d_max=0.010)
    assert resolve_delay_target(fallback, None).d_max == 0.010


def test_resolve_mtd_rejects_profile():
    profile = PerceptionProfile(mode_id=1, d_min=0.05, epsilon_prime=0.02, mu_d=0.1, var_d=1e-4)
    with pytest.raises(ValueError):
        resolve_delay_target(make_user(kind="mtd"), profile)


def test_split_reliability_budget():
    eps, eps_prime = split_reliability_budget(0.925, 2.0 / 3.0)
    assert eps == pytest.approx(0.05)
    assert eps_prime == pytest.approx(0.025)


# ---------------------------------------------------------------------------
# penalty / virtual queue / multiplier / subgradient
# ---------------------------------------------------------------------------


def test_penalty_scalar_value():
    # (mu - lambda) * d_max = 2 with epsilon 0.05.
    rate_bits = (100.0 + 100.0) * 1e4
    assert penalty_y(rate_bits, TRAFFIC, 0.02, 0.05) == pytest.approx(
        math.exp(-2.0) - 0.05
    )


def test_penalty_zero_deadline():
    assert penalty_y(2e6, TRAFFIC, 0.0, 0.05) == pytest.approx(0.95)


def test_penalty_large_rate_limit():
    assert penalty_y(1e12, TRAFFIC, 0.02, 0.05) == pytest.approx(-0.05)


def test_penalty_bounded_below_one():
    for rate in (1.01e6, 2e6, 5e6, 1e9):
        assert abs(penalty_y(rate, TRAFFIC, 0.02, 0.05)) < 1.0


def test_penalty_requires_stability():
    with pytest.raises(ValueError, match="unstable"):
        penalty_y(1e6, TRAFFIC, 0.02, 0.05)


def test_virtual_queue_updates():
    assert update_virtual_queue(0.0, -0.05) == 0.0
    assert update_virtual_queue(0.5, 0.15) == pytest.approx(0.65)
    # Constant negative slack drains F to zero in ceil(F0/|y|) steps.
    F, steps = 1.0, 0
    while F > 0.0:
        F = update_virtual_queue(F, -0.3)
        steps += 1
    assert steps == math.ceil(1.0 / 0.3)


def test_effective_multiplier():
    assert effective_multiplier(0.2, 0.02, 10.0) == pytest.approx(0.4)
    assert effective_multiplier(0.7, 0.02, 0.0) == 0.7
    assert effective_multiplier(0.0, 0.05, 0.0) == 0.0


def test_dual_subgradient_cases():
    d = dual_subgradient([5.0, 3.0, 4.0], [3.0, 5.0, 4.0])
    assert d == pytest.approx([2.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        dual_subgradient([1.0, 2.0], [1.0])


def test_drift_bound():
    users = [make_user(uid=i) for i in range(10)]
    assert drift_bound(users) == 5.0
    assert drift_bound([]) == 0.0
    assert drift_bound(users[:1]) == 0.5


# ---------------------------------------------------------------------------
# per_rb_power against a golden-section oracle
# ---------------------------------------------------------------------------


def golden_section_min(f, lo, hi, iters=200):
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def rb_objective(p, lam, h, cfg):
    return cfg.V * p - lam * cfg.rb_bandwidth_hz * math.log2(
        1.0 + cfg.snr_gap * h * p / cfg.noise_power_w
    )


@pytest.mark.parametrize(
    "lam,h,v,gap",
    [
        (1.0, 1e-7, 1.0, 1.0),
        (2e-6, 5e-13, 1.0, 1.0),
        (4e-6, 1e-12, 100.0, 1.0),
        (0.5, 3e-8, 10.0, 2.0),
    ],
)
def test_per_rb_power_matches_golden_section(lam, h, v, gap):
    cfg = make_cfg(V=v, snr_gap=gap)
    p_closed = per_rb_power(lam, h, cfg)
    hi = max(4.0 * p_closed, 1.0)
    p_oracle = golden_section_min(lambda p: rb_objective(p, lam, h, cfg), 0.0, hi)
    obj_closed = rb_objective(p_closed, lam, h, cfg)
    obj_oracle = rb_objective(p_oracle, lam, h, cfg)
    assert obj_closed <= obj_oracle + 1e-9 * max(1.0, abs(obj_oracle))


def test_per_rb_power_boundary_cases():
    cfg = make_cfg()
    assert per_rb_power(0.0, 1e-7, cfg) == 0.0
    assert per_rb_power(1.0, 0.0, cfg) == 0.0
    assert per_rb_power(1e-12, 1e-13, cfg) == 0.0  # noise term dominates
    with pytest.raises(ValueError):
        per_rb_power(1.0, -1e-9, cfg)


# ---------------------------------------------------------------------------
# assign_rb against brute force
# ---------------------------------------------------------------------------


def test_assign_rb_single_user():
    cfg = make_cfg()
    user = make_user(uid=3, row=np.array([1e-7, 2e-7]))
    uid, power, obj = assign_rb(0, [user], [1.0], cfg)
    assert uid == 3
    assert power == pytest.approx(per_rb_power(1.0, 1e-7, cfg))


def test_assign_rb_zero_multipliers_tie_breaks_low():
    cfg = make_cfg()
    users = [make_user(uid=i, row=np.array([1e-7])) for i in (4, 2, 9)]
    uid, power, obj = assign_rb(0, users, [0.0, 0.0, 0.0], cfg)
    assert uid == 2
    assert power == 0.0
    assert obj == 0.0


def test_assign_rb_matches_exhaustive_evaluation():
    cfg = make_cfg()
    rng = np.random.default_rng(8)
    users = [
        make_user(uid=i, row=rng.uniform(1e-8, 5e-7, size=4)) for i in range(3)
    ]
    lambdas = [0.8, 1.7, 0.3]
    for j in range(4):
        uid, power, obj = assign_rb(j, users, lambdas, cfg)
        evals = []
        for i, u in enumerate(users):
            p = per_rb_power(lambdas[i], float(u.channel_row[j]), cfg)
            evals.append((rb_objective(p, lambdas[i], float(u.channel_row[j]), cfg), u.id, p))
        best = min(evals)
        assert uid == best[1]
        assert obj == pytest.approx(best[0])
        assert power == pytest.approx(best[2])


# ---------------------------------------------------------------------------
# solve_slot
# ---------------------------------------------------------------------------


def bisect_power_for_rate(target_bits, h, cfg, lo=0.0, hi=1.0):
    """Invert the single-RB rate equation for power."""
    def rate(p):
        return cfg.rb_bandwidth_hz * math.log2(1.0 + cfg.snr_gap * h * p / cfg.noise_power_w)

    while rate(hi) < target_bits:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) < target_bits:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_solve_slot_single_user_matches_bisection():
    cfg = make_cfg(step_size=2e-6, max_dual_iterations=3000)
    user = make_user(uid=0, row=np.array([2e-13]), F=0.0)
    alloc = solve_slot([user], cfg)
    p_star = bisect_power_for_rate(TRAFFIC.arrival_rate_bits, 2e-13, cfg)
    assert alloc.rates_bits[0] >= TRAFFIC.arrival_rate_bits * (1.0 - 1e-9)
    assert alloc.total_power <= p_star * 1.01
    assert alloc.rho.sum() == 1


def test_solve_slot_symmetric_users_share_rbs():
    cfg = make_cfg(max_dual_iterations=800)
    n_users, n_rbs = 3, 8
    row = np.full(n_rbs, 3e-13)
    users = [make_user(uid=i, row=row.copy(), F=0.5) for i in range(n_users)]
    alloc = solve_slot(users, cfg)
    counts = alloc.rho.sum(axis=1)
    assert sorted(counts) in ([2, 3, 3], [2, 2, 4])
    assert counts.sum() == n_rbs
    # Fully symmetric: floor/ceil split expected.
    assert set(counts) <= {n_rbs // n_users, n_rbs // n_users + 1}


def test_solve_slot_one_user_per_rb_exactly():
    cfg = make_cfg(max_dual_iterations=600)
    rng = np.random.default_rng(3)
    users = [
        make_user(uid=i, row=rng.uniform(5e-14, 4e-13, size=6), F=0.2)
        for i in range(3)
    ]
    alloc = solve_slot(users, cfg)
    assert np.all(alloc.rho.sum(axis=0) == 1)
    assert np.all((alloc.power > 0.0) <= (alloc.rho == 1))


def test_solve_slot_bias_path_gives_power_without_lambda():
    # F > 0 and lambda = 0 must still produce positive power on a good channel.
    cfg = make_cfg(max_dual_iterations=1, V=1.0)
    user = make_user(uid=0, row=np.array([1e-12]), F=50.0, traffic=TrafficSpec(1e4, 1e4))
    alloc = solve_slot([user], cfg)
    assert alloc.dual_iterations == 1
    assert np.all(alloc.dual_lambda == 0.0)
    assert alloc.total_power > 0.0


def test_solve_slot_infeasible_raises():
    cfg = make_cfg(max_dual_iterations=30)
    user = make_user(uid=0, row=np.array([0.0]))  # no usable channel
    with pytest.raises(InfeasibleSlotError):
        solve_slot([user], cfg)


def test_solve_slot_weak_duality():
    cfg = make_cfg(max_dual_iterations=1500, step_size=2e-6)
    rng = np.random.default_rng(12)
    users = [
        make_user(uid=i, row=rng.uniform(1e-13, 6e-13, size=6), F=0.1)
        for i in range(2)
    ]
    alloc = solve_slot(users, cfg)
    assert max(alloc.dual_history) <= alloc.objective + 1e-9 * max(1.0, abs(alloc.objective))


def test_solve_slot_deterministic():
    cfg = make_cfg(max_dual_iterations=300)
    rng = np.random.default_rng(5)
    rows = rng.uniform(1e-13, 6e-13, size=(2, 5))
    users_a = [make_user(uid=i, row=rows[i], F=0.3) for i in range(2)]
    users_b = [make_user(uid=i, row=rows[i], F=0.3) for i in range(2)]
    a = solve_slot(users_a, cfg)
    b = solve_slot(users_b, cfg)
    assert np.array_equal(a.power, b.power)
    assert np.array_equal(a.rho, b.rho)


def exhaustive_two_user_two_rb(users, cfg, n_levels=200, p_max=None):
    """Brute force over assignments and quantized powers for the slot objective."""
    a_pkts = np.array([u.traffic.packet_arrival_rate for u in users])
    mean_bits = np.array([u.traffic.mean_packet_bits for u in users])
    D = np.array([u.d_max for u in users])
    F = np.array([u.F for u in users])
    if p_max is None:
        p_max = 4.0 * max(
            bisect_power_for_rate(u.traffic.arrival_rate_bits, float(np.min(u.channel_row)), cfg)
            for u in users
        )
    levels = np.linspace(0.0, p_max, n_levels)
    best = np.inf
    for owner0 in range(2):
        for owner1 in range(2):
            owners = (owner0, owner1)
            for p0 in levels:
                for p1 in levels:
                    rates = np.zeros(2)
                    for j, (owner, p) in enumerate(zip(owners, (p0, p1))):
                        h = float(users[owner].channel_row[j])
                        rates[owner] += cfg.rb_bandwidth_hz * math.log2(
                            1.0 + cfg.snr_gap * h * p / cfg.noise_power_w
                        )
                    rates_pkts = rates / mean_bits
                    if np.any(rates_pkts < a_pkts):
                        continue
                    obj = cfg.V * (p0 + p1) - float(np.dot((rates_pkts - a_pkts) * D, F))
                    best = min(best, obj)
    return best


def test_solve_slot_desk_scale_near_optimal():
    cfg = make_cfg(step_size=2e-6, max_dual_iterations=4000)
    rng = np.random.default_rng(42)
    rows = rng.uniform(1e-13, 8e-13, size=(2, 2))
    users = [make_user(uid=i, row=rows[i], F=0.0) for i in range(2)]
    alloc = solve_slot(users, cfg)
    brute = exhaustive_two_user_two_rb(users, cfg)
    assert alloc.objective <= 1.01 * brute
