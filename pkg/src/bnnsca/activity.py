"""Cycle-accurate switching-activity model of the line-buffer convolution unit.

The unit streams one pixel per cycle through a 3x28 shift-register line
buffer; the window tap columns sit at the entry of each row, so a pixel is
multiplied by kernel weight K9 on the cycle it arrives.  Per-cycle power is
modeled from the adder-tree node values (nine signed products followed by a
balanced 4+2+1+1 tree with a final accumulate):

  power[t] = alpha * ( operand activity of the newly arrived product m9
                     + toggle_weight * sum over nodes of
                       HammingDistance(node[t], node[t-1]) )

Operand activity is zero for an idle (zero) operand and otherwise grows
linearly with magnitude, value_base + value_span * |m9| / 255: a nonzero
operand wakes the datapath and larger magnitudes drive proportionally more
adder switching.  The node-toggle term adds the transition component of the
datapath.  Node values are masked to two's-complement `node_width` bits
before Hamming distances are taken.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import TRACE_LEN, as_pixel_array, check_kernel

# Window tap lags: flat window index i (row-major, P1..P9) -> pixel-stream lag.
# P9 (index 8) is the newly inserted pixel.
_TAP_LAGS = np.array([28 * (2 - a) + (2 - b) for a in range(3) for b in range(3)])

N_TREE_NODES = 17  # 9 products + 4 + 2 + 1 + 1 partial sums


@dataclass(frozen=True)
class ActivityModelConfig:
    """Knobs of the switching-activity power proxy."""

    alpha: float = 1.0
    node_width: int = 12
    value_base: float = 2.0  # datapath wake-up cost for a nonzero operand
    value_span: float = 6.0  # magnitude-proportional adder activity
    toggle_weight: float = 0.004
    background_activity: float = 0.0  # constant extra power from the other 63 kernels

    def __post_init__(self):
        if self.alpha <= 0 or self.node_width < 4 or self.node_width > 32:
            raise ValueError("alpha must be > 0 and node_width in [4, 32]")
        for w in (self.value_base, self.value_span, self.toggle_weight,
                  self.background_activity):
            if w < 0:
                raise ValueError("activity weights must be non-negative")


@dataclass(frozen=True)
class LineBufferState:
    """Three 28-word shift rows; row 0 receives the input pixel stream."""

    rows: np.ndarray = field(default_factory=lambda: np.zeros((3, 28), dtype=np.int32))
    cycle: int = 0

    def __post_init__(self):
        if self.rows.shape != (3, 28):
            raise ValueError(f"line buffer must be 3x28, got {self.rows.shape}")


def step_line_buffer(state, pixel):
    """Shift one pixel in; returns (new state, 3x3 window).

    The word leaving each row enters the next row, and the oldest word of the
    last row is discarded.  The returned window is oriented like the image:
    window[2][2] holds the pixel inserted this cycle (location P9).
    """
    if not 0 <= int(pixel) <= 255:
        raise ValueError("pixel must be in [0, 255]")
    rows = state.rows
    new = np.empty_like(rows)
    new[0, 0] = int(pixel)
    new[0, 1:] = rows[0, :-1]
    new[1, 0] = rows[0, -1]
    new[1, 1:] = rows[1, :-1]
    new[2, 0] = rows[1, -1]
    new[2, 1:] = rows[2, :-1]
    window = new[::-1, :3][:, ::-1].copy()
    return LineBufferState(rows=new, cycle=state.cycle + 1), window


def window_tap_values(pixel_stream, cycle):
    """Window contents at a cycle, from the delayed-stream formulation.

    Tap i holds pixel_stream[cycle - lag_i] (zero before the stream starts);
    equivalent to driving step_line_buffer with the same stream.
    """
    idx = cycle - _TAP_LAGS
    vals = np.where(idx >= 0, pixel_stream[np.clip(idx, 0, None)], 0)
    return vals.reshape(3, 3)


def adder_tree_nodes(window, kernel):
    """All seventeen node values for one window/kernel evaluation."""
    w = np.asarray(window).reshape(-1).astype(np.int64)
    k = np.asarray(kernel).reshape(-1).astype(np.int64)
    m = k * w
    s = np.array([m[0] + m[1], m[2] + m[3], m[4] + m[5], m[6] + m[7]])
    t = np.array([s[0] + s[1], s[2] + s[3]])
    u = t[0] + t[1]
    final = u + m[8]
    return np.concatenate([m, s, t, [u], [final]])


def _node_matrix(pixel_stream, kernel):
    """(17, n_cycles) node values for a full pixel stream."""
    x = np.asarray(pixel_stream, dtype=np.int64)
    n = x.shape[0]
    taps = np.zeros((9, n), dtype=np.int64)
    for i, lag in enumerate(_TAP_LAGS):
        if lag < n:
            taps[i, lag:] = x[: n - lag]
    k = np.asarray(kernel).reshape(-1).astype(np.int64)
    m = k[:, None] * taps
    s = np.stack([m[0] + m[1], m[2] + m[3], m[4] + m[5], m[6] + m[7]])
    t = np.stack([s[0] + s[1], s[2] + s[3]])
    u = t[0] + t[1]
    final = u + m[8]
    return np.concatenate([m, s, t, u[None, :], final[None, :]])


def _popcount(arr):
    return np.bitwise_count(arr.astype(np.uint64))


def power_from_stream(pixel_stream, kernel, config):
    """Per-cycle power for an arbitrary pixel stream (vectorized)."""
    nodes = _node_matrix(pixel_stream, kernel)
    mask = np.uint64((1 << config.node_width) - 1)
    coded = nodes.astype(np.uint64) & mask
    prev = np.zeros_like(coded)
    prev[:, 1:] = coded[:, :-1]
    toggles = _popcount(coded ^ prev).sum(axis=0).astype(np.float64)
    magnitude = np.abs(nodes[8]).astype(np.float64)
    value = np.where(
        magnitude > 0, config.value_base + config.value_span * magnitude / 255.0, 0.0
    )
    power = config.alpha * (value + config.toggle_weight * toggles)
    return power + config.background_activity


@dataclass(frozen=True)
class PowerTrace:
    """784 per-cycle activity samples, cycle i aligned with row-major pixel i."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.shape != (TRACE_LEN,):
            raise ValueError(f"power trace must have length {TRACE_LEN}")
        if np.any(arr < 0):
            raise ValueError("power samples must be non-negative")
        object.__setattr__(self, "samples", arr)


def simulate_first_kernel_trace(image, kernel, config=None):
    """Power trace of the first kernel of the first convolution layer."""
    config = config or ActivityModelConfig()
    pixels = as_pixel_array(image).reshape(-1)
    kernel = check_kernel(kernel)
    return PowerTrace(samples=power_from_stream(pixels, kernel, config))


def simulate_traces_batch(images, kernel, config=None):
    """(n_images, 784) power matrix; used when every run perturbs the input."""
    config = config or ActivityModelConfig()
    kernel = check_kernel(kernel)
    flat = np.stack([as_pixel_array(im).reshape(-1) for im in images])
    return np.stack([power_from_stream(row, kernel, config) for row in flat])


def foreground_cycle_set(image, threshold=0):
    """Cycle indices whose pixel exceeds the intensity threshold."""
    if not 0 <= threshold <= 255:
        raise ValueError("threshold must be in [0, 255]")
    pixels = as_pixel_array(image).reshape(-1)
    return set(int(i) for i in np.flatnonzero(pixels > threshold))


def write_power_csv(trace, path, config_hash=""):
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("cycle,power\n")
        for i, v in enumerate(trace.samples):
            fh.write(f"{i},{v!r}\n")


def read_power_csv(path):
    samples = np.zeros(TRACE_LEN)
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("cycle"):
                continue
            idx, val = line.strip().split(",")
            samples[int(idx)] = float(val)
    return PowerTrace(samples=samples)
