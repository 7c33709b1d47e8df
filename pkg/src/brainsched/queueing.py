"""Delay-violation analysis for single-server queues with slotted service rates.

Packet lengths are exponential, so at a fixed link rate the service time is
exponential with the rate-scaled parameter and each user's buffer behaves as
an M/M/1 queue. The closed form averages the per-slot tail probability
exp(-(mu - lambda) * d_max) over the rate schedule; a discrete-event FIFO
simulator provides the independent check.

All rates are normalized to packets/second (bit rate divided by the mean
packet length) before any exponent is formed, keeping units consistent.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class StabilityError(ValueError):
    """Service rate does not exceed the arrival rate in some slot."""


@dataclass(frozen=True)
class TrafficSpec:
    """Poisson packet arrivals: bit rate plus mean exponential packet length.

    A zero bit rate models an idle user; queueing operations that need a
    positive load reject it explicitly.
    """

    arrival_rate_bits: float
    mean_packet_bits: float

    def __post_init__(self):
        if not (self.arrival_rate_bits >= 0.0 and np.isfinite(self.arrival_rate_bits)):
            raise ValueError(f"arrival rate must be finite and >= 0, got {self.arrival_rate_bits}")
        if not (self.mean_packet_bits > 0.0 and np.isfinite(self.mean_packet_bits)):
            raise ValueError(f"mean packet length must be positive, got {self.mean_packet_bits}")

    @property
    def packet_arrival_rate(self) -> float:
        """Packets per second."""
        return self.arrival_rate_bits / self.mean_packet_bits


@dataclass(frozen=True)
class RateTrace:
    """Per-slot service rates in bits/s over equal-duration slots."""

    rates_bits: np.ndarray
    slot_duration_s: float

    def __post_init__(self):
        rates = np.atleast_1d(np.asarray(self.rates_bits, dtype=float))
        object.__setattr__(self, "rates_bits", rates)
        if rates.ndim != 1 or rates.size == 0:
            raise ValueError("rate trace must be a non-empty 1-D array")
        if not np.all(np.isfinite(rates)):
            raise ValueError("rate trace contains non-finite values")
        if not self.slot_duration_s > 0.0:
            raise ValueError(f"slot duration must be positive, got {self.slot_duration_s}")

    @property
    def n_slots(self) -> int:
        return self.rates_bits.shape[0]


def service_time_sample(rate_bits: float, mean_packet_bits: float, seed, n: int | None = None):
    """Draw service time(s) for exponential packets sent at a fixed bit rate.

    The service time is exponential with rate `rate_bits / mean_packet_bits`
    packets per second, i.e. mean `mean_packet_bits / rate_bits` seconds.

    `seed` may be an integer or a numpy Generator. With `n=None` a single
    float is returned, otherwise an array of `n` draws.
    """
    if not rate_bits > 0.0:
        raise ValueError(f"rate must be positive, got {rate_bits}")
    if not mean_packet_bits > 0.0:
        raise ValueError(f"mean packet length must be positive, got {mean_packet_bits}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mean = mean_packet_bits / rate_bits
    if n is None:
        return float(rng.exponential(mean))
    return rng.exponential(mean, size=n)


def _packet_rates(trace: RateTrace, traffic: TrafficSpec) -> tuple[np.ndarray, float]:
    mu = trace.rates_bits / traffic.mean_packet_bits
    lam = traffic.packet_arrival_rate
    return mu, lam


def _check_stability(trace: RateTrace, traffic: TrafficSpec, warn_steady_state: bool = True):
    mu, lam = _packet_rates(trace, traffic)
    if lam <= 0.0:
        raise StabilityError("arrival rate must be positive for delay analysis")
    if np.any(mu <= lam):
        worst = int(np.argmin(mu))
        raise StabilityError(
            f"service rate must exceed the arrival rate in every slot; "
            f"slot {worst} has {mu[worst]:.6g} <= {lam:.6g} packets/s"
        )
    if warn_steady_state:
        relax = 1.0 / np.min(mu - lam)
        if relax > trace.slot_duration_s / 10.0:
            warnings.warn(
                f"queue relaxation time {relax:.3g}s is not small against the "
                f"{trace.slot_duration_s:.3g}s slot; per-slot steady state is doubtful",
                RuntimeWarning,
                stacklevel=3,
            )
    return mu, lam


def delay_violation_prob(trace: RateTrace, traffic: TrafficSpec, d_max: float) -> float:
    """Average over slots of exp(-(mu(tau) - lambda) * d_max), in packets/s units."""
    if d_max < 0.0:
        raise ValueError(f"delay threshold must be >= 0, got {d_max}")
    mu, lam = _check_stability(trace, traffic)
    return float(np.mean(np.exp(-(mu - lam) * d_max)))


def mm1_oracle(
    trace: RateTrace,
    traffic: TrafficSpec,
    d_max: float,
    n_packets: int = 100_000,
    seed: int = 0,
    warmup_fraction: float = 0.05,
    dump_csv=None,
) -> float:
    """Discrete-event FIFO queue with the slotted rate schedule.

    Poisson arrivals, exponential packet lengths; the server drains bits at
    the slot's rate, so a transmission spanning slots speeds up or slows
    down as the schedule dictates (the trace repeats cyclically). Returns
    the fraction of post-warmup packets whose sojourn exceeds `d_max`.
    """
    if n_packets < 1:
        raise ValueError("need at least one packet")
    _check_stability(trace, traffic, warn_steady_state=False)
    rng = np.random.default_rng(seed)
    lam = traffic.packet_arrival_rate
    arrivals = np.cumsum(rng.exponential(1.0 / lam, size=n_packets))
    lengths = rng.exponential(traffic.mean_packet_bits, size=n_packets)

    rates = trace.rates_bits
    n_slots = trace.n_slots
    slot = trace.slot_duration_s
    departures = np.empty(n_packets)
    server_free = 0.0
    for i in range(n_packets):
        t = max(arrivals[i], server_free)
        remaining = lengths[i]
        # Walk slot boundaries until the packet's bits are drained.
        while True:
            idx = int(t / slot) % n_slots
            rate = rates[idx]
            boundary = (np.floor(t / slot) + 1.0) * slot
            capacity = rate * (boundary - t)
            if capacity >= remaining:
                t += remaining / rate
                break
            remaining -= capacity
            t = boundary
        departures[i] = t
        server_free = t

    sojourn = departures - arrivals
    start = int(warmup_fraction * n_packets)
    kept = sojourn[start:]
    if dump_csv is not None:
        path = Path(dump_csv)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["packet_id", "arrival_s", "depart_s", "sojourn_s"])
            for i in range(n_packets):
                writer.writerow(
                    [i, f"{arrivals[i]:.9g}", f"{departures[i]:.9g}", f"{sojourn[i]:.9g}"]
                )
    return float(np.mean(kept > d_max))
