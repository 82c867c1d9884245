"""PDN voltage-drop model and 256-stage delay-line sensor.

Activity couples into the supply as v[t] = attenuation * stressor_gain *
r_pdn * power[t] plus an optional low-frequency envelope.  A drop slows the
whole delay line by the factor (1 + k_delay * v), so the captured Hamming
weight falls as the drop grows:

  hw[t] = floor((T_clk - D0 * (1 + k v)) / (d0 * (1 + k v)))

where D0 is the calibrated initial delay placing the zero-drop reading at
the calibration target (128 by default).  Gaussian noise is injected on the
Hamming-weight output and rounded, then clamped to [0, stages].
"""

import hashlib
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import TRACE_LEN


class CalibrationError(ValueError):
    """Raised when no initial delay can satisfy the calibration target."""


@dataclass(frozen=True)
class EnvelopeSpec:
    """Low-frequency supply envelope added to the per-cycle drops (volts)."""

    kind: str = "none"  # none | exponential | sinusoidal
    amplitude: float = 0.0
    time_constant: float = 200.0  # cycles (exponential)
    period: float = 400.0  # cycles (sinusoidal)

    def __post_init__(self):
        if self.kind not in ("none", "exponential", "sinusoidal"):
            raise ValueError(f"unknown envelope kind {self.kind!r}")
        if self.amplitude < 0 or self.time_constant <= 0 or self.period <= 0:
            raise ValueError("envelope parameters must be positive")

    def values(self, n_cycles):
        t = np.arange(n_cycles, dtype=np.float64)
        if self.kind == "none" or self.amplitude == 0.0:
            return np.zeros(n_cycles)
        if self.kind == "exponential":
            return self.amplitude * np.exp(-t / self.time_constant)
        return self.amplitude * 0.5 * (1.0 + np.sin(2.0 * np.pi * t / self.period))


@dataclass(frozen=True)
class SensorConfig:
    """Physical parameters of the sensor and its coupling to the victim."""

    stages: int = 256
    stage_delay_ps: float = 10.0
    clock_mhz: float = 120.0
    r_pdn: float = 7e-4  # volts of drop per activity unit
    k_delay: float = 2.0  # fractional delay increase per volt of drop
    attenuation: float = 1.0
    noise_sigma: float = 34.0  # Hamming-weight counts
    stressor_gain: float = 1.0
    calibration_target: int = 128
    envelope: EnvelopeSpec = field(default_factory=EnvelopeSpec)
    misalignment_cycles: int = 0

    def __post_init__(self):
        if self.stages < 8:
            raise ValueError("stage count too small")
        if not 5.0 <= self.stage_delay_ps <= 25.0:
            raise ValueError("per-stage delay must be within 5-25 ps")
        if not 0.0 < self.attenuation <= 1.0:
            raise ValueError("attenuation must be in (0, 1]")
        if self.noise_sigma < 0 or self.stressor_gain < 1.0:
            raise ValueError("noise_sigma >= 0 and stressor_gain >= 1 required")
        if not 0 < self.calibration_target <= self.stages:
            raise ValueError("calibration target must be in (0, stages]")

    @property
    def clock_period_ps(self):
        return 1e6 / self.clock_mhz

    def config_hash(self):
        digest = hashlib.sha256(repr(self).encode()).hexdigest()
        return digest[:12]


# Board presets: system clocks of the four evaluation targets; the Artix-7
# carry chain is close to 25 ps per stage, the UltraScale+ parts are faster
# and default to 10 ps (documented assumption, configurable).
BOARD_PRESETS = {
    "chipwhisperer": dict(clock_mhz=50.0, stage_delay_ps=25.0),
    "zcu104": dict(clock_mhz=120.0, stage_delay_ps=10.0),
    "vcu118": dict(clock_mhz=100.0, stage_delay_ps=10.0),
    "aws-f1": dict(clock_mhz=120.0, stage_delay_ps=10.0),
}

# Placement quality enters purely as coupling attenuation.
PLACEMENT_ATTENUATION = {
    "adjacent": 1.0,
    "cross-die": 0.34,
    "cross-slr": 0.24,
}


def board_config(board="zcu104", placement="adjacent", **overrides):
    """SensorConfig for a board preset and sensor placement."""
    if board not in BOARD_PRESETS:
        raise ValueError(f"unknown board {board!r}; choose from {sorted(BOARD_PRESETS)}")
    if placement not in PLACEMENT_ATTENUATION:
        raise ValueError(
            f"unknown placement {placement!r}; choose from {sorted(PLACEMENT_ATTENUATION)}"
        )
    params = dict(BOARD_PRESETS[board])
    params["attenuation"] = PLACEMENT_ATTENUATION[placement]
    params.update(overrides)
    return SensorConfig(**params)


def voltage_drop(power_trace, config):
    """Per-cycle supply drops in volts (pre-noise, all non-negative)."""
    samples = np.asarray(getattr(power_trace, "samples", power_trace), dtype=np.float64)
    if config.misalignment_cycles:
        shifted = np.zeros_like(samples)
        m = config.misalignment_cycles
        if m > 0:
            shifted[m:] = samples[: samples.size - m]
        else:
            shifted[:m] = samples[-m:]
        samples = shifted
    drops = config.attenuation * config.stressor_gain * config.r_pdn * samples
    return drops + config.envelope.values(samples.size)


def calibrate(config, nominal_drop=0.0):
    """Initial delay (ps) placing the nominal reading at the target weight."""
    t_clk = config.clock_period_ps
    factor = 1.0 + config.k_delay * nominal_drop
    d0 = t_clk - config.calibration_target * config.stage_delay_ps * factor
    if d0 <= 0:
        raise CalibrationError(
            "clock period too short for the stage count and calibration target"
        )
    if d0 >= t_clk:
        raise CalibrationError("calibration target unreachable: delay exceeds clock period")
    return d0


def hamming_weights_pre_noise(drops, config, initial_delay=None):
    """Deterministic Hamming weights for a drop sequence (no noise)."""
    if initial_delay is None:
        initial_delay = calibrate(config)
    drops = np.asarray(drops, dtype=np.float64)
    factor = 1.0 + config.k_delay * drops
    stage_delay = config.stage_delay_ps * factor
    hw = np.floor((config.clock_period_ps - initial_delay * factor) / stage_delay + 1e-9)
    return np.clip(hw, 0, config.stages).astype(np.int64)


@dataclass(frozen=True)
class TdcTrace:
    """One captured run: 784 Hamming weights in [0, stages]."""

    hamming_weights: np.ndarray
    run_id: int = 0
    config_hash: str = ""

    def __post_init__(self):
        arr = np.asarray(self.hamming_weights)
        if arr.shape != (TRACE_LEN,):
            raise ValueError(f"trace must have length {TRACE_LEN}")
        object.__setattr__(self, "hamming_weights", arr.astype(np.int64))


def sample_tdc(drops, config, rng=None, run_id=0, initial_delay=None):
    """One noisy TDC capture of a voltage-drop sequence."""
    hw = hamming_weights_pre_noise(drops, config, initial_delay).astype(np.float64)
    if config.noise_sigma > 0:
        if rng is None:
            raise ValueError("rng required when noise_sigma > 0")
        hw = hw + np.round(rng.normal(0.0, config.noise_sigma, size=hw.shape))
    hw = np.clip(hw, 0, config.stages)
    return TdcTrace(hamming_weights=hw, run_id=run_id, config_hash=config.config_hash())


def run_rng(seed, run_id):
    """Independent, reproducible RNG stream for one run."""
    return np.random.default_rng([int(seed), int(run_id)])


def capture_runs_from_power(power_trace, config, n_runs, seed):
    """n_runs noisy captures of one deterministic power trace."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    drops = voltage_drop(power_trace, config)
    delay = calibrate(config)
    return [
        sample_tdc(drops, config, run_rng(seed, run), run_id=run, initial_delay=delay)
        for run in range(n_runs)
    ]


def capture_runs(image, kernel, config, n_runs, seed, activity_config=None):
    """Simulate the victim once, then capture n_runs noisy sensor traces."""
    from .activity import simulate_first_kernel_trace

    power = simulate_first_kernel_trace(image, kernel, activity_config)
    return capture_runs_from_power(power, config, n_runs, seed)


def capture_perturbed_runs(power_matrix, config, seed):
    """One capture per row of a power matrix (per-run re-perturbed inputs)."""
    drops_base = [voltage_drop(row, config) for row in np.asarray(power_matrix)]
    delay = calibrate(config)
    return [
        sample_tdc(d, config, run_rng(seed, run), run_id=run, initial_delay=delay)
        for run, d in enumerate(drops_base)
    ]


TDC_BATCH_MAGIC = b"TDCB"


def write_tdc_csv(trace, path):
    with open(path, "w") as fh:
        fh.write(f"# run_id={trace.run_id} config_hash={trace.config_hash}\n")
        fh.write("cycle,hw\n")
        for i, v in enumerate(trace.hamming_weights):
            fh.write(f"{i},{int(v)}\n")


def read_tdc_csv(path):
    hw = np.zeros(TRACE_LEN, dtype=np.int64)
    run_id, config_hash = 0, ""
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "run_id":
                        run_id = int(val)
                    elif key == "config_hash":
                        config_hash = val
                continue
            if line.startswith("cycle"):
                continue
            idx, val = line.strip().split(",")
            hw[int(idx)] = int(val)
    return TdcTrace(hamming_weights=hw, run_id=run_id, config_hash=config_hash)


def write_tdc_batch(traces, path):
    """Binary batch: magic, run count, then 784 u16 weights per run."""
    with open(path, "wb") as fh:
        fh.write(TDC_BATCH_MAGIC)
        fh.write(struct.pack("<I", len(traces)))
        for t in traces:
            fh.write(t.hamming_weights.astype("<u2").tobytes())


def read_tdc_batch(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TDC_BATCH_MAGIC:
        raise ValueError("bad magic: not a TDC batch file")
    (n_runs,) = struct.unpack("<I", blob[4:8])
    expected = 8 + n_runs * TRACE_LEN * 2
    if len(blob) < expected:
        raise ValueError("truncated TDC batch file")
    traces = []
    for run in range(n_runs):
        start = 8 + run * TRACE_LEN * 2
        hw = np.frombuffer(blob[start : start + TRACE_LEN * 2], dtype="<u2")
        traces.append(TdcTrace(hamming_weights=hw.astype(np.int64), run_id=run))
    return traces


def scale_noise(config, factor):
    """Convenience for calibration sweeps."""
    return replace(config, noise_sigma=config.noise_sigma * factor)
