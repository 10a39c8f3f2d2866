"""Telemetry simulation for eight three-phase meters over one day.

Generation is fully deterministic given the fleet seed: every sample is
drawn from an RNG keyed by (seed, meter_id, timestamp), so samples can be
regenerated in any order. Delivery faults (duplicates, drop-then-retry,
bounded reordering) come from a separate RNG stream so the generated
readings are identical across fault configurations.
"""

from __future__ import annotations

import math
import operator
import random
from dataclasses import dataclass, field
from itertools import repeat
from typing import List, NamedTuple

import numpy as np

from .model import (
    METER_IDS,
    PHASES,
    SECONDS_PER_DAY,
    TOTAL_PHASES,
    PhaseReading,
    parse_date,
)

NOMINAL_VOLTAGE = 230.0
NOMINAL_FREQUENCY = 50.0
VOLTAGE_NOISE_FRACTION = 0.002
FREQUENCY_NOISE_STDDEV = 0.01


class InvalidMeter(ValueError):
    """Meter id outside 1..8."""


@dataclass
class SolarProfile:
    """Half-sine clear-sky generation curve for the plant."""

    sunrise: int = 21600  # 06:00
    sunset: int = 64800  # 18:00
    peak_plant_power: float = 100_000.0
    noise_stddev_fraction: float = 0.01

    def __post_init__(self):
        if not 0 <= self.sunrise < self.sunset <= SECONDS_PER_DAY:
            raise ValueError("sunrise/sunset must satisfy 0 <= sunrise < sunset <= 86400")


@dataclass
class FaultConfig:
    duplicate_probability: float = 0.0
    drop_then_retry_probability: float = 0.0
    reorder_jitter_max: float = 0.0  # seconds, keep <= collector watermark
    rng_seed: int = 0


@dataclass
class FleetConfig:
    meters: tuple = METER_IDS
    assignments: dict = field(default_factory=lambda: {"A": (1, 2, 3, 4), "B": (5, 6, 7, 8)})
    profile: SolarProfile = field(default_factory=SolarProfile)
    seed: int = 0
    accuracy_band: float = 0.01  # fixed per-meter calibration offset, +-1%
    producer_id: str = "plant-1"

    @classmethod
    def from_dict(cls, raw: dict) -> "FleetConfig":
        profile = SolarProfile(**raw.get("profile", {}))
        cfg = cls(
            meters=tuple(raw.get("meters", METER_IDS)),
            profile=profile,
            seed=int(raw.get("seed", 0)),
            accuracy_band=float(raw.get("accuracy_band", 0.01)),
            producer_id=raw.get("producer_id", "plant-1"),
        )
        if "assignments" in raw:
            cfg.assignments = {k: tuple(v) for k, v in raw["assignments"].items()}
        return cfg


class TransportMessage(NamedTuple):
    reading: PhaseReading
    delivery_attempt: int


def clear_sky_power(t: float, profile: SolarProfile) -> float:
    """Plant power at second-of-day t: half-sine bump between sunrise and sunset."""
    if not 0 <= t < SECONDS_PER_DAY:
        raise ValueError(f"second-of-day out of range: {t}")
    if t <= profile.sunrise or t >= profile.sunset:
        return 0.0
    span = profile.sunset - profile.sunrise
    return profile.peak_plant_power * math.sin(math.pi * (t - profile.sunrise) / span)


_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_POW_NEG53 = 2.0**-53


def _meter_bias(seed: int, meter_id: int, band: float) -> float:
    h = ((seed * 1_000_003 + meter_id) * 2654435761) % (2**32)
    return (h / 2**31 - 1.0) * band


def _sample_block(
    meter_id: int,
    ts_arr: "np.ndarray",
    profile: SolarProfile,
    seed: int,
    accuracy_band: float,
) -> dict:
    """Vectorized sample kernel: noise is a splitmix64 hash of (seed, meter, ts),
    so any subset of timestamps reproduces the same values in any order.

    Returns per-phase arrays keyed active/voltage/current/power_factor/apparent
    (each a 3-tuple of arrays) plus the shared frequency array.
    """
    n = ts_arr.shape[0]
    x0 = (
        ts_arr.astype(np.uint64)
        + np.uint64((seed * _GOLDEN) & _MASK64)
        + np.uint64((meter_id * 0xC2B2AE3D27D4EB4F) & _MASK64)
    )
    u = np.empty((11, n))
    for k in range(11):
        x = x0 + np.uint64(((k + 1) * _GOLDEN) & _MASK64)
        z = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z ^= z >> np.uint64(31)
        u[k] = (z >> np.uint64(11)).astype(np.float64) * _TWO_POW_NEG53
    np.maximum(u, _TWO_POW_NEG53, out=u)

    g = np.empty((8, n))  # Box-Muller pairs; g[0..2] power, g[3..5] voltage, g[6] frequency
    for pair in range(4):
        r = np.sqrt(-2.0 * np.log(u[2 * pair]))
        a = (2.0 * math.pi) * u[2 * pair + 1]
        g[2 * pair] = r * np.cos(a)
        g[2 * pair + 1] = r * np.sin(a)
    np.clip(g, -3.0, 3.0, out=g)

    tod = ts_arr % SECONDS_PER_DAY
    span = profile.sunset - profile.sunrise
    inside = (tod > profile.sunrise) & (tod < profile.sunset)
    nominal = np.where(
        inside,
        profile.peak_plant_power * np.sin(math.pi * (tod - profile.sunrise) / span),
        0.0,
    ) / TOTAL_PHASES
    scale = (1.0 + _meter_bias(seed, meter_id, accuracy_band)) * nominal
    sigma = profile.noise_stddev_fraction

    frequency = NOMINAL_FREQUENCY + FREQUENCY_NOISE_STDDEV * g[6]
    active, voltage, current, power_factor, apparent = [], [], [], [], []
    for idx in range(3):
        act = scale * (1.0 + sigma * g[idx])
        volt = NOMINAL_VOLTAGE * (1.0 + VOLTAGE_NOISE_FRACTION * g[3 + idx])
        pf = 0.97 + (u[8 + idx] * 2.0 - 1.0) * 0.02
        app = act / pf
        active.append(act)
        voltage.append(volt)
        power_factor.append(pf)
        apparent.append(app)
        current.append(app / volt)
    return {
        "active": active,
        "voltage": voltage,
        "current": current,
        "power_factor": power_factor,
        "apparent": apparent,
        "frequency": frequency,
    }


def sample_meter(
    meter_id: int,
    ts: int,
    profile: SolarProfile,
    seed: int,
    accuracy_band: float = 0.01,
) -> List[PhaseReading]:
    """Three phase readings for one meter at one second, deterministic in (seed, meter, ts).

    Gaussian noise is clipped at three standard deviations so per-phase power
    stays inside the physical sanity envelope.
    """
    if meter_id not in METER_IDS:
        raise InvalidMeter(f"meter_id must be in 1..8, got {meter_id}")
    block = _sample_block(meter_id, np.array([ts], dtype=np.int64), profile, seed, accuracy_band)
    return [
        PhaseReading(
            meter_id,
            idx + 1,
            ts,
            float(block["active"][idx][0]),
            float(block["voltage"][idx][0]),
            float(block["current"][idx][0]),
            float(block["power_factor"][idx][0]),
            float(block["frequency"][0]),
            float(block["apparent"][idx][0]),
        )
        for idx in range(3)
    ]


def meter_sample_times(fleet: FleetConfig, meter_id: int, date: str) -> List[int]:
    """Sampling instants for one meter; period drawn per-message from {1 s, 2 s}."""
    day0 = parse_date(date)
    end = day0 + SECONDS_PER_DAY
    sched = random.Random(fleet.seed * 2**48 + meter_id * 2**44 + 7_777_777)
    choice = sched.choice
    times = []
    t = day0
    while t < end:
        times.append(t)
        t += choice((1, 2))
    return times


def generate_day_readings(fleet: FleetConfig, date: str) -> List[PhaseReading]:
    """All readings for the simulated day, grouped (meter, phase, time-ordered).

    The per-meter values are identical to calling sample_meter at each instant.
    """
    out: List[PhaseReading] = []
    for meter_id in fleet.meters:
        if meter_id not in METER_IDS:
            raise InvalidMeter(f"meter_id must be in 1..8, got {meter_id}")
        times = meter_sample_times(fleet, meter_id, date)
        ts_arr = np.array(times, dtype=np.int64)
        block = _sample_block(meter_id, ts_arr, fleet.profile, fleet.seed, fleet.accuracy_band)
        freq = block["frequency"].tolist()
        for idx in range(3):
            out.extend(
                map(
                    PhaseReading._make,
                    zip(
                        repeat(meter_id),
                        repeat(idx + 1),
                        times,
                        block["active"][idx].tolist(),
                        block["voltage"][idx].tolist(),
                        block["current"][idx].tolist(),
                        block["power_factor"][idx].tolist(),
                        freq,
                        block["apparent"][idx].tolist(),
                    ),
                )
            )
    return out


def run_day(fleet: FleetConfig, date: str, faults: FaultConfig) -> List[TransportMessage]:
    """Deliver a day of telemetry through the at-least-once transport.

    Every generated reading is delivered at least once; drops are always
    retried (attempt 2), duplicates are redelivered with an incremented
    attempt, and reordering is bounded by reorder_jitter_max seconds.
    """
    readings = generate_day_readings(fleet, date)
    dup_p = faults.duplicate_probability
    drop_p = faults.drop_then_retry_probability
    jitter = faults.reorder_jitter_max
    if dup_p == 0.0 and drop_p == 0.0 and jitter == 0.0:
        readings.sort(key=operator.itemgetter(2, 0, 1))  # (ts, meter_id, phase)
        return [TransportMessage(r, 1) for r in readings]
    frng = random.Random(faults.rng_seed)
    rand = frng.random
    deliveries = []
    append = deliveries.append
    for r in readings:
        u = rand()
        if u < drop_p:
            attempts = (2,)  # first attempt lost, redelivery succeeds
        elif u < drop_p + dup_p:
            attempts = (1, 2)
        else:
            attempts = (1,)
        for attempt in attempts:
            offset = rand() * jitter if jitter > 0 else 0.0
            append((r.ts + offset, r.meter_id, r.phase, attempt, r))
    deliveries.sort()
    return [TransportMessage(d[4], d[3]) for d in deliveries]
