"""Seeded three-phase motor-current simulator.

Stands in for the robot test bench: every cycle is a pure function of
``(seed, axis, speed, fault, cycle_id)`` so a whole ISMD dataset can be
described by its manifest and regenerated on demand.

Fault model (MCSA style):

* ``Normal``    balanced sinusoids at the electrical carrier plus white noise.
* ``Faulty``    amplitude modulation at multiples of the mechanical rotation
                frequency, i.e. sidebands at ``carrier +/- k * f_rot``
                (eccentric bearing in the reducer).
* ``FaultyAge`` broadband low-frequency amplitude jitter, 5th/7th harmonic
                distortion and a raised white-noise floor (worn reducer).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy import signal as sps


class ConfigurationError(ValueError):
    """Raised for parameter combinations the simulator cannot honour."""


class FaultClass(enum.Enum):
    NORMAL = "Normal"
    FAULTY = "Faulty"
    FAULTY_AGE = "FaultyAge"

    @property
    def index(self) -> int:
        return _FAULT_ORDER.index(self)

    @classmethod
    def parse(cls, value: "FaultClass | str | int") -> "FaultClass":
        if isinstance(value, FaultClass):
            return value
        if isinstance(value, int):
            return _FAULT_ORDER[value]
        return cls(value)


_FAULT_ORDER = (FaultClass.NORMAL, FaultClass.FAULTY, FaultClass.FAULTY_AGE)
FAULT_CLASSES = _FAULT_ORDER


@dataclass(frozen=True, order=True)
class SpeedDomain:
    """Operating regime at ``percent`` of rated speed (index = percent / 10)."""

    percent: int

    def __post_init__(self):
        if not isinstance(self.percent, (int, np.integer)) or isinstance(self.percent, bool):
            raise ConfigurationError(f"speed percent must be an integer, got {self.percent!r}")
        if self.percent % 10 or not 10 <= self.percent <= 100:
            raise ConfigurationError(f"speed percent must be a multiple of 10 in [10, 100], got {self.percent}")

    @property
    def index(self) -> int:
        return self.percent // 10

    @classmethod
    def from_index(cls, index: int) -> "SpeedDomain":
        return cls(int(index) * 10)

    def __str__(self):
        return f"{self.percent}%"


ALL_DOMAINS = tuple(SpeedDomain(p) for p in range(10, 101, 10))


@dataclass(frozen=True)
class MotorSpec:
    power_kw: float
    rated_speed_rpm: float
    voltage_v: float
    rated_current_a: float
    rated_frequency_hz: float

    def __post_init__(self):
        for name in ("power_kw", "rated_speed_rpm", "voltage_v", "rated_current_a", "rated_frequency_hz"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"MotorSpec.{name} must be > 0")

    def electrical_frequency(self, speed: SpeedDomain) -> float:
        return self.rated_frequency_hz * speed.percent / 100.0

    def rotation_frequency(self, speed: SpeedDomain) -> float:
        """Mechanical shaft frequency in Hz."""
        return self.rated_speed_rpm / 60.0 * speed.percent / 100.0


# Servo motors of the six robot axes.
_SPEC_123 = MotorSpec(5.9, 2000.0, 200.0, 25.1, 166.0)
_SPEC_456 = MotorSpec(2.0, 3000.0, 200.0, 11.7, 250.0)
AXIS_SPECS: Mapping[int, MotorSpec] = {1: _SPEC_123, 2: _SPEC_123, 3: _SPEC_123,
                                       4: _SPEC_456, 5: _SPEC_456, 6: _SPEC_456}
FAULT_AXIS = 4


@dataclass(frozen=True)
class FaultParams:
    """Shipped fault-signature defaults.

    Levels are relative to the carrier peak amplitude; frequencies that
    scale with speed are given as multiples of the shaft frequency.
    """

    load_fraction: float = 0.5
    noise_level: float = 0.02
    sideband_orders: tuple[float, ...] = (1.0, 2.0)
    faulty_indices: tuple[float, ...] = (0.03, 0.015)
    age_noise_factor: float = 2.0
    age_am_level: float = 0.03
    age_am_cutoff_orders: float = 3.0
    harmonic_orders: tuple[int, ...] = (5, 7)
    age_harmonic_levels: tuple[float, ...] = (0.02, 0.015)

    def __post_init__(self):
        if len(self.sideband_orders) != len(self.faulty_indices):
            raise ConfigurationError("sideband_orders and faulty_indices differ in length")
        if len(self.harmonic_orders) != len(self.age_harmonic_levels):
            raise ConfigurationError("harmonic_orders and age_harmonic_levels differ in length")
        if self.load_fraction <= 0:
            raise ConfigurationError("load_fraction must be > 0")
        for name in ("noise_level", "age_noise_factor", "age_am_level", "age_am_cutoff_orders"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


DEFAULT_FAULT_PARAMS = FaultParams()


@dataclass(frozen=True)
class Signature:
    """Modulation descriptor of one (fault, speed, motor) combination."""

    carrier_hz: float
    amplitude_a: float
    sideband_offsets_hz: tuple[float, ...]
    modulation_indices: tuple[float, ...]
    noise_std_a: float
    harmonic_orders: tuple[int, ...]
    harmonic_levels: tuple[float, ...]
    am_noise_level: float
    am_noise_cutoff_hz: float

    @property
    def max_frequency_hz(self) -> float:
        top = self.carrier_hz
        if any(self.harmonic_levels):
            top = max(top, self.carrier_hz * max(self.harmonic_orders))
        if any(self.modulation_indices):
            top = max(top, self.carrier_hz + max(self.sideband_offsets_hz))
        return top


def fault_signature(fault, speed: SpeedDomain, spec: MotorSpec,
                    params: FaultParams = DEFAULT_FAULT_PARAMS) -> Signature:
    fault = FaultClass.parse(fault)
    carrier = spec.electrical_frequency(speed)
    f_rot = spec.rotation_frequency(speed)
    amplitude = math.sqrt(2.0) * spec.rated_current_a * params.load_fraction
    offsets = tuple(o * f_rot for o in params.sideband_orders)
    zeros_sb = tuple(0.0 for _ in params.sideband_orders)
    zeros_h = tuple(0.0 for _ in params.harmonic_orders)
    noise = params.noise_level * amplitude

    if fault is FaultClass.NORMAL:
        indices, harmonics, am_level = zeros_sb, zeros_h, 0.0
    elif fault is FaultClass.FAULTY:
        indices, harmonics, am_level = tuple(params.faulty_indices), zeros_h, 0.0
    else:
        indices, harmonics, am_level = zeros_sb, tuple(params.age_harmonic_levels), params.age_am_level
        noise *= params.age_noise_factor

    return Signature(
        carrier_hz=carrier,
        amplitude_a=amplitude,
        sideband_offsets_hz=offsets,
        modulation_indices=indices,
        noise_std_a=noise,
        harmonic_orders=tuple(params.harmonic_orders),
        harmonic_levels=harmonics,
        am_noise_level=am_level,
        am_noise_cutoff_hz=params.age_am_cutoff_orders * f_rot,
    )


@dataclass(frozen=True)
class ThreePhaseCycle:
    i_a: np.ndarray
    i_b: np.ndarray
    i_c: np.ndarray
    sample_rate: float
    speed: SpeedDomain
    fault: FaultClass
    axis: int
    cycle_id: int
    seed: int
    # carrier of the generating signature, None for cycles read from disk
    carrier_hz: float | None = None

    def __post_init__(self):
        n = len(self.i_a)
        if len(self.i_b) != n or len(self.i_c) != n:
            raise ConfigurationError("phase sequences differ in length")
        if n < 64:
            raise ConfigurationError(f"cycle must contain at least 64 samples, got {n}")

    @property
    def n_samples(self) -> int:
        return len(self.i_a)

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate

    def phases(self) -> np.ndarray:
        return np.vstack([self.i_a, self.i_b, self.i_c])

    def metadata(self) -> dict:
        return {
            "axis": int(self.axis),
            "speed_percent": int(self.speed.percent),
            "fault": self.fault.value,
            "cycle_id": int(self.cycle_id),
            "seed": int(self.seed),
            "sample_rate_hz": float(self.sample_rate),
        }


PHASE_SHIFTS = (0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0)


def cycle_rng(seed: int, axis: int, speed: SpeedDomain, fault: FaultClass, cycle_id: int) -> np.random.Generator:
    """Counter-based stream keyed on the cycle identity (spawn-key split)."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(int(axis), int(speed.percent), fault.index, int(cycle_id)))
    return np.random.Generator(np.random.Philox(ss))


def _lowpass_noise(rng, n, cutoff_hz, sample_rate):
    white = rng.standard_normal(n)
    wn = min(cutoff_hz / (sample_rate / 2.0), 0.99)
    sos = sps.butter(4, wn, output="sos")
    colored = sps.sosfiltfilt(sos, white)
    std = colored.std()
    return colored / std if std > 0 else colored


def gen_cycle(spec: MotorSpec, speed: SpeedDomain, fault, axis: int, cycle_id: int, seed: int,
              sample_rate: float = 12800.0, ref_duration: float = 2.0,
              params: FaultParams = DEFAULT_FAULT_PARAMS) -> ThreePhaseCycle:
    fault = FaultClass.parse(fault)
    if not ref_duration > 0:
        raise ConfigurationError("ref_duration must be > 0")
    if not 1 <= int(axis) <= 6:
        raise ConfigurationError(f"axis must be in 1..6, got {axis}")
    sig = fault_signature(fault, speed, spec, params)
    if not sample_rate > 4.0 * sig.max_frequency_hz:
        raise ConfigurationError(
            f"sample_rate {sample_rate} Hz must exceed 4 x {sig.max_frequency_hz:g} Hz "
            f"(highest signature frequency for {fault.value} at {speed})")

    n = int(round(ref_duration * 100.0 / speed.percent * sample_rate))
    t = np.arange(n) / sample_rate
    theta = 2.0 * np.pi * sig.carrier_hz * t
    rng = cycle_rng(seed, axis, speed, fault, cycle_id)

    envelope = np.ones(n)
    for offset, m in zip(sig.sideband_offsets_hz, sig.modulation_indices):
        if m:
            envelope += m * np.cos(2.0 * np.pi * offset * t)
    # fixed draw order keeps streams aligned across classes
    eta = _lowpass_noise(rng, n, sig.am_noise_cutoff_hz, sample_rate)
    white = rng.standard_normal((3, n))
    if sig.am_noise_level:
        envelope += sig.am_noise_level * eta

    phases = []
    for k, shift in enumerate(PHASE_SHIFTS):
        x = sig.amplitude_a * envelope * np.sin(theta + shift)
        for order, level in zip(sig.harmonic_orders, sig.harmonic_levels):
            if level:
                x += sig.amplitude_a * level * np.sin(order * (theta + shift))
        if sig.noise_std_a:
            x += sig.noise_std_a * white[k]
        phases.append(x)

    return ThreePhaseCycle(phases[0], phases[1], phases[2], float(sample_rate), speed, fault,
                           int(axis), int(cycle_id), int(seed), carrier_hz=sig.carrier_hz)


@dataclass(frozen=True)
class CycleRecord:
    """Manifest row for one simulated cycle."""

    axis: int
    speed_percent: int
    fault: str
    cycle_id: int
    seed: int
    sample_rate_hz: float
    n_samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CycleRecord":
        return cls(int(d["axis"]), int(d["speed_percent"]), str(d["fault"]), int(d["cycle_id"]),
                   int(d["seed"]), float(d["sample_rate_hz"]), int(d["n_samples"]))


@dataclass(frozen=True)
class SimulationConfig:
    counts: Mapping[str, int] = field(default_factory=lambda: {"Normal": 30, "Faulty": 27, "FaultyAge": 24})
    domains: Sequence[int] = tuple(range(10, 101, 10))
    axes: Sequence[int] = (1, 2, 3, 4, 5, 6)
    sample_rate: float = 12800.0
    ref_duration: float = 2.0
    params: FaultParams = DEFAULT_FAULT_PARAMS

    def __post_init__(self):
        for name, c in self.counts.items():
            FaultClass.parse(name)
            if int(c) <= 0:
                raise ConfigurationError(f"cycle count for {name} must be positive, got {c}")
        if not self.domains:
            raise ConfigurationError("at least one speed domain is required")
        if not self.axes:
            raise ConfigurationError("at least one axis is required")


class SimulatedDataset:
    """Manifest of simulated cycles; cycles are regenerated lazily from it."""

    def __init__(self, records: list[CycleRecord], config: SimulationConfig,
                 specs: Mapping[int, MotorSpec] = AXIS_SPECS):
        self.records = records
        self.config = config
        self.specs = specs

    def __len__(self):
        return len(self.records)

    def cycle(self, rec: CycleRecord) -> ThreePhaseCycle:
        return gen_cycle(self.specs[rec.axis], SpeedDomain(rec.speed_percent), rec.fault, rec.axis,
                         rec.cycle_id, rec.seed, self.config.sample_rate, self.config.ref_duration,
                         self.config.params)

    def cycles(self) -> Iterator[ThreePhaseCycle]:
        for rec in self.records:
            yield self.cycle(rec)

    def counts(self) -> dict[tuple[int, int, str], int]:
        out: dict[tuple[int, int, str], int] = {}
        for r in self.records:
            key = (r.axis, r.speed_percent, r.fault)
            out[key] = out.get(key, 0) + 1
        return out


def gen_dataset(seed: int, config: SimulationConfig | None = None,
                specs: Mapping[int, MotorSpec] = AXIS_SPECS) -> SimulatedDataset:
    """Enumerate every cycle of the configured ISMD layout.

    Ordering is (axis, domain, class, cycle_id). The sample count of each
    cycle is computed without synthesizing the waveform, and the Nyquist
    guard is checked once per (axis, domain, class).
    """
    config = config or SimulationConfig()
    records = []
    for axis in config.axes:
        if axis not in specs:
            raise ConfigurationError(f"no motor spec for axis {axis}")
        spec = specs[axis]
        for pct in config.domains:
            speed = SpeedDomain(int(pct))
            n = int(round(config.ref_duration * 100.0 / speed.percent * config.sample_rate))
            for fault in FAULT_CLASSES:
                count = int(config.counts.get(fault.value, 0))
                if count <= 0:
                    raise ConfigurationError(f"cycle count for {fault.value} must be positive")
                sig = fault_signature(fault, speed, spec, config.params)
                if not config.sample_rate > 4.0 * sig.max_frequency_hz:
                    raise ConfigurationError(
                        f"sample_rate {config.sample_rate} Hz below Nyquist guard for axis {axis} {speed}")
                for cid in range(count):
                    records.append(CycleRecord(int(axis), speed.percent, fault.value, cid, int(seed),
                                               float(config.sample_rate), n))
    return SimulatedDataset(records, config, specs)
