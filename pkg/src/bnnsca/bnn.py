"""Binarized CNN inference: 13-layer stack with +1/-1 kernels.

Layer schedule: conv(28x28, 64 kernels) -> pool -> batch norm -> sign ->
conv(14x14x64, 64x64 kernels) -> pool -> batch norm -> sign -> fully
connected (500) -> batch norm -> sign -> fully connected (10) -> batch norm.

Normalized activations use Q1.8 fixed point clamped to [-1, +1]; batch-norm
parameters use Q16.16.  Model files are a self-describing binary container
with packed weight bitplanes (+1 -> bit 1, -1 -> bit 0) and a CRC32 guard.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ._validation import as_pixel_array, check_binary_pm1, check_kernel

MODEL_MAGIC = b"BNNM"
MODEL_VERSION = 1

CONV1_KERNELS = 64
CONV2_KERNELS = 64
FC1_UNITS = 500
FC1_INPUTS = 7 * 7 * 64
FC2_UNITS = 10

# Worst-case input magnitude per batch-norm layer, used to scale random params
_BN_INPUT_BOUND = {1: 9 * 255, 2: 9 * 64, 3: FC1_INPUTS, 4: FC1_UNITS}

ACT_FRAC_BITS = 8
PARAM_FRAC_BITS = 16


class ModelFormatError(ValueError):
    """Raised when a model file fails structural or checksum validation."""


def quantize_activation(x):
    """Clamp to [-1, +1] and round to Q1.8 (8 fractional bits)."""
    scaled = np.clip(np.round(np.asarray(x, dtype=np.float64) * 256.0), -256, 256)
    return scaled / 256.0


def quantize_param(x):
    """Round to Q16.16; batch-norm parameters are stored in this format."""
    return np.round(np.asarray(x, dtype=np.float64) * 65536.0) / 65536.0


def conv2d_first_layer(image, kernel):
    """Same-size convolution of a grayscale image with one binary kernel.

    Zero padding of width 1; output[x, y] = sum over the 3x3 window of
    kernel * image with out-of-range pixels treated as 0.
    """
    pixels = as_pixel_array(image).astype(np.int32)
    k = check_kernel(kernel).astype(np.int32)
    padded = np.zeros((30, 30), dtype=np.int32)
    padded[1:29, 1:29] = pixels
    out = np.zeros((28, 28), dtype=np.int32)
    for a in range(3):
        for b in range(3):
            out += k[a, b] * padded[a : a + 28, b : b + 28]
    return out


def conv2d_binary_layer(fmap, kernels):
    """Zero-padded convolution of a binary (14,14,64) map with 64x64 kernels.

    kernels has shape (out_channels, in_channels, 3, 3); output is the
    integer sum over all input maps for each output channel.
    """
    fmap = np.asarray(fmap)
    if fmap.shape != (14, 14, CONV2_KERNELS):
        raise ValueError(f"expected input shape (14, 14, 64), got {fmap.shape}")
    fmap = check_binary_pm1(fmap, "conv input").astype(np.int32)
    kernels = np.asarray(kernels)
    if kernels.shape != (CONV2_KERNELS, CONV2_KERNELS, 3, 3):
        raise ValueError(f"expected kernels shape (64, 64, 3, 3), got {kernels.shape}")
    padded = np.zeros((16, 16, CONV2_KERNELS), dtype=np.int32)
    padded[1:15, 1:15, :] = fmap
    out = np.zeros((14, 14, CONV2_KERNELS), dtype=np.int32)
    for a in range(3):
        for b in range(3):
            # (14,14,in) x (in,out) summed over input channels
            out += padded[a : a + 14, b : b + 14, :] @ kernels[:, :, a, b].T.astype(np.int32)
    return out


def max_pool_2x2(fmap):
    """Disjoint 2x2 window maximum; halves both spatial dimensions."""
    arr = np.asarray(fmap)
    h, w = arr.shape[0], arr.shape[1]
    if h % 2 or w % 2:
        raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
    if arr.ndim == 2:
        return arr.reshape(h // 2, 2, w // 2, 2).max(axis=(1, 3))
    return arr.reshape(h // 2, 2, w // 2, 2, arr.shape[2]).max(axis=(1, 3))


def batch_norm(fmap, scale, shift):
    """Per-channel affine normalization into Q1.8 fixed point on [-1, +1]."""
    arr = np.asarray(fmap, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    return quantize_activation(arr * scale + shift)


def sign_nonlinearity(fmap):
    """Binarize to +1 for values >= 0, else -1."""
    return np.where(np.asarray(fmap) >= 0, 1, -1).astype(np.int8)


def fully_connected(vec, weights):
    """Integer dot products of a binary vector against binary weight rows."""
    vec = check_binary_pm1(vec, "fc input").astype(np.int32)
    weights = np.asarray(weights)
    if weights.ndim != 2 or weights.shape[1] != vec.shape[0]:
        raise ValueError(f"weight shape {weights.shape} does not match input {vec.shape}")
    return weights.astype(np.int32) @ vec


@dataclass(frozen=True)
class BnnModel:
    """Weights and normalization parameters for the 13-layer network."""

    conv1: np.ndarray  # (64, 3, 3) in {-1, +1}
    conv2: np.ndarray  # (64, 64, 3, 3) out x in
    fc1: np.ndarray  # (500, 3136)
    fc2: np.ndarray  # (10, 500)
    bn_scale: dict  # layer index (1..4) -> per-channel scales
    bn_shift: dict

    def __post_init__(self):
        shapes = {
            "conv1": (self.conv1, (CONV1_KERNELS, 3, 3)),
            "conv2": (self.conv2, (CONV2_KERNELS, CONV2_KERNELS, 3, 3)),
            "fc1": (self.fc1, (FC1_UNITS, FC1_INPUTS)),
            "fc2": (self.fc2, (FC2_UNITS, FC1_UNITS)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            check_binary_pm1(arr, name)
        widths = {1: CONV1_KERNELS, 2: CONV2_KERNELS, 3: FC1_UNITS, 4: FC2_UNITS}
        for idx, width in widths.items():
            for params in (self.bn_scale, self.bn_shift):
                if idx not in params or np.asarray(params[idx]).shape != (width,):
                    raise ValueError(f"batch-norm layer {idx} needs {width} parameters")

    def first_kernel(self):
        """Kernel instrumented by the power model (kernel 1 of layer 1)."""
        return self.conv1[0]


def generate_random_model(seed):
    """Draw a model with uniform +1/-1 weights; deterministic per seed.

    Batch-norm scales are sized so pre-normalization integers land mostly
    inside [-1, +1]: magnitude uniform in [0.25, 1.0] divided by the layer's
    worst-case input bound, random sign; shifts uniform in [-0.5, 0.5].
    """
    rng = np.random.default_rng(seed)

    def pm1(shape):
        return (rng.integers(0, 2, size=shape, dtype=np.int8) * 2 - 1).astype(np.int8)

    bn_scale, bn_shift = {}, {}
    for idx, bound in _BN_INPUT_BOUND.items():
        width = {1: CONV1_KERNELS, 2: CONV2_KERNELS, 3: FC1_UNITS, 4: FC2_UNITS}[idx]
        mag = rng.uniform(0.25, 1.0, size=width) / bound
        sign = rng.integers(0, 2, size=width) * 2 - 1
        bn_scale[idx] = quantize_param(mag * sign)
        bn_shift[idx] = quantize_param(rng.uniform(-0.5, 0.5, size=width))
    return BnnModel(
        conv1=pm1((CONV1_KERNELS, 3, 3)),
        conv2=pm1((CONV2_KERNELS, CONV2_KERNELS, 3, 3)),
        fc1=pm1((FC1_UNITS, FC1_INPUTS)),
        fc2=pm1((FC2_UNITS, FC1_UNITS)),
        bn_scale=bn_scale,
        bn_shift=bn_shift,
    )


def infer(model, image):
    """Run the full 13-layer stack; returns (integer scores, predicted class).

    Scores are the second fully-connected layer's integer outputs; the
    predicted class is the argmax of the final normalized outputs with ties
    resolved toward the lowest index.
    """
    x = np.stack(
        [conv2d_first_layer(image, model.conv1[i]) for i in range(CONV1_KERNELS)], axis=-1
    )
    x = max_pool_2x2(x)
    x = sign_nonlinearity(batch_norm(x, model.bn_scale[1], model.bn_shift[1]))
    x = conv2d_binary_layer(x, model.conv2)
    x = max_pool_2x2(x)
    x = sign_nonlinearity(batch_norm(x, model.bn_scale[2], model.bn_shift[2]))
    x = fully_connected(x.reshape(-1), model.fc1)
    x = sign_nonlinearity(batch_norm(x, model.bn_scale[3], model.bn_shift[3]))
    scores = fully_connected(x, model.fc2)
    normalized = batch_norm(scores, model.bn_scale[4], model.bn_shift[4])
    return scores, int(np.argmax(normalized))


def _pack_pm1(arr):
    return np.packbits((arr.reshape(-1) > 0).astype(np.uint8))


def _unpack_pm1(buf, shape):
    n = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=n)
    return (bits.astype(np.int8) * 2 - 1).reshape(shape)


_WEIGHT_SHAPES = (
    ("conv1", (CONV1_KERNELS, 3, 3)),
    ("conv2", (CONV2_KERNELS, CONV2_KERNELS, 3, 3)),
    ("fc1", (FC1_UNITS, FC1_INPUTS)),
    ("fc2", (FC2_UNITS, FC1_UNITS)),
)


def save_model(model, path):
    """Write the binary model container: magic, version, CRC32, bitplanes."""
    payload = bytearray()
    for name, _ in _WEIGHT_SHAPES:
        payload += _pack_pm1(getattr(model, name)).tobytes()
    for idx in (1, 2, 3, 4):
        for params in (model.bn_scale[idx], model.bn_shift[idx]):
            fixed = np.round(np.asarray(params) * 65536.0).astype("<i4")
            payload += fixed.tobytes()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HI", MODEL_VERSION, zlib.crc32(payload)))
        fh.write(payload)


def load_model(path):
    """Read and validate a model container written by save_model."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != MODEL_MAGIC:
        raise ModelFormatError("bad magic: not a model container")
    version, crc = struct.unpack("<HI", blob[4:10])
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    payload = blob[10:]
    if zlib.crc32(payload) != crc:
        raise ModelFormatError("checksum mismatch: model file corrupted")
    offset = 0
    weights = {}
    for name, shape in _WEIGHT_SHAPES:
        nbytes = (int(np.prod(shape)) + 7) // 8
        weights[name] = _unpack_pm1(payload[offset : offset + nbytes], shape)
        offset += nbytes
    widths = {1: CONV1_KERNELS, 2: CONV2_KERNELS, 3: FC1_UNITS, 4: FC2_UNITS}
    bn_scale, bn_shift = {}, {}
    for idx in (1, 2, 3, 4):
        w = widths[idx]
        for target in (bn_scale, bn_shift):
            raw = np.frombuffer(payload[offset : offset + 4 * w], dtype="<i4")
            if raw.size != w:
                raise ModelFormatError("truncated batch-norm parameter block")
            target[idx] = raw.astype(np.float64) / 65536.0
            offset += 4 * w
    if offset != len(payload):
        raise ModelFormatError("trailing bytes after model payload")
    return BnnModel(bn_scale=bn_scale, bn_shift=bn_shift, **weights)
