"""Synthetic ECG source and ADC path.

Generates millivolt-domain waveforms from a parametric PQRST template
(sum of five Gaussians over a wrapped beat phase), adds configurable
noise, models electrode lead-off as rail saturation plus status flags,
and converts between millivolts and ADC codes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

LO_PLUS = 0x01
LO_MINUS = 0x02

# Canonical PQRST template: ~1 mV R peak, visually standard morphology.
DEFAULT_WAVES = (
    ("P", 0.15, -math.pi / 3, 0.25),
    ("Q", -0.25, -math.pi / 12, 0.1),
    ("R", 1.0, 0.0, 0.1),
    ("S", -0.3, math.pi / 12, 0.1),
    ("T", 0.35, 5 * math.pi / 12, 0.4),
)


class SignalError(ValueError):
    """Invalid signal or ADC parameters."""


@dataclass(frozen=True)
class WaveParams:
    """One component wave of the beat template."""

    amplitude_mv: float
    center_rad: float
    width_rad: float

    def __post_init__(self):
        if not self.width_rad > 0:
            raise SignalError(f"wave width must be > 0, got {self.width_rad}")
        if not -math.pi <= self.center_rad < math.pi:
            raise SignalError(f"wave center must lie in [-pi, pi), got {self.center_rad}")


@dataclass(frozen=True)
class NoiseConfig:
    """Additive disturbances: white noise, baseline wander, mains hum."""

    white_sigma_mv: float = 0.0
    baseline_wander_amp_mv: float = 0.0
    baseline_wander_hz: float = 0.3
    mains_amp_mv: float = 0.0
    mains_hz: float = 50.0

    def __post_init__(self):
        if self.white_sigma_mv < 0 or self.baseline_wander_amp_mv < 0 or self.mains_amp_mv < 0:
            raise SignalError("noise amplitudes must be non-negative")
        if not self.baseline_wander_hz > 0:
            raise SignalError("baseline wander frequency must be > 0")
        if self.mains_hz not in (50.0, 60.0):
            raise SignalError(f"mains frequency must be 50 or 60 Hz, got {self.mains_hz}")


@dataclass(frozen=True)
class LeadEvent:
    """Electrode detachment interval, seconds from session start, [start, end)."""

    start_s: float
    end_s: float
    which: str  # "plus", "minus", or "both"

    def __post_init__(self):
        if self.start_s < 0:
            raise SignalError("lead event start must be >= 0")
        if not self.end_s > self.start_s:
            raise SignalError("lead event end must be after start")
        if self.which not in ("plus", "minus", "both"):
            raise SignalError(f"lead event polarity must be plus/minus/both, got {self.which!r}")

    @property
    def flag_bits(self) -> int:
        if self.which == "plus":
            return LO_PLUS
        if self.which == "minus":
            return LO_MINUS
        return LO_PLUS | LO_MINUS


def default_waves(gain: float = 1.0) -> tuple[WaveParams, ...]:
    """Canonical PQRST morphology, amplitudes scaled by `gain`.

    The unscaled template has a ~1 mV R peak, which spans barely one LSB
    of the default 12-bit/3.3 V converter; pass a front-end gain (a few
    hundred) when the digitized shape itself matters.
    """
    if not gain > 0:
        raise SignalError(f"gain must be > 0, got {gain}")
    return tuple(WaveParams(a * gain, c, w) for _, a, c, w in DEFAULT_WAVES)


def _default_waves() -> tuple[WaveParams, ...]:
    return default_waves(1.0)


@dataclass(frozen=True)
class SynthParams:
    """Full description of one simulated recording's analog signal."""

    heart_rate_bpm: float = 60.0
    waves: tuple[WaveParams, ...] = field(default_factory=_default_waves)
    baseline_mv: float = 0.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    lead_events: tuple[LeadEvent, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not 20.0 <= self.heart_rate_bpm <= 300.0:
            raise SignalError(f"heart rate must be in [20, 300] bpm, got {self.heart_rate_bpm}")
        if len(self.waves) != 5:
            raise SignalError(f"exactly 5 waves (P,Q,R,S,T) required, got {len(self.waves)}")
        centers = [w.center_rad for w in self.waves]
        if any(b <= a for a, b in zip(centers, centers[1:])):
            raise SignalError("wave centers must be strictly increasing P < Q < R < S < T")
        if not 0 <= self.seed < 2**64:
            raise SignalError("seed must fit in 64 bits unsigned")
        object.__setattr__(self, "waves", tuple(self.waves))
        object.__setattr__(self, "lead_events", tuple(self.lead_events))


@dataclass(frozen=True)
class AdcConfig:
    """Reference voltage, resolution, and mid-rail bias of the converter."""

    vref_v: float = 3.3
    bits: int = 12
    baseline_v: float | None = None  # defaults to vref_v / 2

    def __post_init__(self):
        if not self.vref_v > 0:
            raise SignalError("vref must be > 0")
        if not isinstance(self.bits, int) or not 8 <= self.bits <= 16:
            raise SignalError(f"adc bits must be an integer in [8, 16], got {self.bits}")
        if self.baseline_v is None:
            object.__setattr__(self, "baseline_v", self.vref_v / 2)
        if not 0 <= self.baseline_v <= self.vref_v:
            raise SignalError("adc baseline must lie in [0, vref]")

    @property
    def code_max(self) -> int:
        return 2**self.bits - 1

    @property
    def lsb_mv(self) -> float:
        return self.vref_v / 2**self.bits * 1000.0

    def to_dict(self) -> dict:
        return {"vref_v": self.vref_v, "bits": self.bits, "baseline_v": self.baseline_v}

    @classmethod
    def from_dict(cls, d: dict) -> "AdcConfig":
        return cls(vref_v=float(d["vref_v"]), bits=int(d["bits"]), baseline_v=float(d["baseline_v"]))


@dataclass(frozen=True)
class AnalogSample:
    t_s: float
    value_mv: float
    lead_state: int


@dataclass
class AnalogTrace:
    """Column-oriented sequence of analog samples."""

    t_s: np.ndarray
    value_mv: np.ndarray
    lead_state: np.ndarray

    def __len__(self) -> int:
        return len(self.t_s)

    def __getitem__(self, i: int) -> AnalogSample:
        return AnalogSample(float(self.t_s[i]), float(self.value_mv[i]), int(self.lead_state[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def wrap_phase(x):
    """Map any angle to [-pi, pi)."""
    return np.mod(np.asarray(x) + math.pi, TWO_PI) - math.pi


def beat_value(params: SynthParams, phase) -> float | np.ndarray:
    """Noise-free template value at a beat phase in [-pi, pi).

    Sum of the five wave Gaussians, each evaluated at the wrapped
    angular distance from its center, plus the baseline offset.
    """
    phase = np.asarray(phase, dtype=np.float64)
    total = np.full(phase.shape, params.baseline_mv, dtype=np.float64)
    for w in params.waves:
        d = wrap_phase(phase - w.center_rad)
        total += w.amplitude_mv * np.exp(-(d * d) / (2.0 * w.width_rad * w.width_rad))
    if total.ndim == 0:
        return float(total)
    return total


def lead_state_at(events, t: np.ndarray) -> np.ndarray:
    """Per-sample lead flags: OR of all events whose [start, end) covers t."""
    flags = np.zeros(len(t), dtype=np.uint8)
    for ev in events:
        mask = (t >= ev.start_s) & (t < ev.end_s)
        flags[mask] |= ev.flag_bits
    return flags


def generate_analog(
    params: SynthParams,
    rate_hz: float,
    duration_s: float,
    adc: AdcConfig | None = None,
) -> AnalogTrace:
    """Sample the synthetic signal at a uniform rate.

    Produces exactly floor(rate_hz * duration_s) samples. Noise terms are
    drawn from a generator seeded by params.seed, so identical parameters
    give bit-identical output. While any lead event is active the output
    is pinned to the positive rail implied by `adc` (the front-end output
    floats to its supply when an electrode detaches).
    """
    if not rate_hz > 0:
        raise SignalError(f"sample rate must be > 0, got {rate_hz}")
    if not duration_s > 0:
        raise SignalError(f"duration must be > 0, got {duration_s}")
    adc = adc or AdcConfig()

    n = int(math.floor(rate_hz * duration_s))
    idx = np.arange(n, dtype=np.float64)
    t = idx / rate_hz

    # Beat phase from the sample index, not an accumulating sum: exact
    # periodicity, no drift over long sessions. Phase starts at -pi.
    beats = t * (params.heart_rate_bpm / 60.0)
    phase = -math.pi + TWO_PI * (beats - np.floor(beats))
    mv = np.asarray(beat_value(params, phase), dtype=np.float64)

    noise = params.noise
    if noise.white_sigma_mv > 0:
        rng = np.random.default_rng(params.seed)
        mv = mv + rng.normal(0.0, noise.white_sigma_mv, n)
    if noise.baseline_wander_amp_mv > 0:
        mv = mv + noise.baseline_wander_amp_mv * np.sin(TWO_PI * noise.baseline_wander_hz * t)
    if noise.mains_amp_mv > 0:
        mv = mv + noise.mains_amp_mv * np.sin(TWO_PI * noise.mains_hz * t)

    flags = lead_state_at(params.lead_events, t)
    detached = flags != 0
    if detached.any():
        rail_mv = (adc.vref_v - adc.baseline_v) * 1000.0
        mv = np.where(detached, rail_mv, mv)

    return AnalogTrace(t_s=t, value_mv=np.asarray(mv, dtype=np.float64), lead_state=flags)


def quantize(value_mv, adc: AdcConfig):
    """Millivolts to ADC code: floor((baseline + mv/1000) / vref * 2^bits), clamped.

    Saturates at the rails instead of raising; midscale input maps exactly
    to 2^(bits-1).
    """
    v = adc.baseline_v + np.asarray(value_mv, dtype=np.float64) / 1000.0
    code = np.floor(v / adc.vref_v * 2**adc.bits)
    code = np.clip(code, 0, adc.code_max).astype(np.int64)
    if code.ndim == 0:
        return int(code)
    return code


def dequantize(code, adc: AdcConfig):
    """ADC code back to millivolts at the cell midpoint (half-LSB offset)."""
    code_arr = np.asarray(code, dtype=np.int64)
    if np.any(code_arr < 0) or np.any(code_arr >= 2**adc.bits):
        raise SignalError(f"code out of range for {adc.bits}-bit ADC")
    mv = ((code_arr + 0.5) / 2**adc.bits * adc.vref_v - adc.baseline_v) * 1000.0
    if mv.ndim == 0:
        return float(mv)
    return mv


def write_analog_text(trace: AnalogTrace, fp) -> None:
    """Debug export: two columns (t_s, value_mv) per line, '.' decimal separator."""
    for i in range(len(trace)):
        fp.write(f"{trace.t_s[i]:.6f} {trace.value_mv[i]:.6f}\n")


def read_analog_text(fp) -> AnalogTrace:
    """Parse the two-column export back into a trace (lead flags all clear)."""
    ts, mvs = [], []
    for line_no, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise SignalError(f"line {line_no}: expected two columns, got {len(parts)}")
        ts.append(float(parts[0]))
        mvs.append(float(parts[1]))
    t = np.asarray(ts, dtype=np.float64)
    return AnalogTrace(t_s=t, value_mv=np.asarray(mvs, dtype=np.float64),
                       lead_state=np.zeros(len(t), dtype=np.uint8))
