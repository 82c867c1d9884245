"""IDX dataset ingestion, input perturbations, and portable image output.

Reads MNIST-style IDX image/label files, applies the two supported input
perturbations (constant background fill, probabilistic low-bit flips), and
writes grayscale grids as binary PGM (P5).  A deterministic synthetic
generator for digit- and garment-style images is included so the toolkit
can run end to end without external dataset downloads.
"""

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import IMAGE_SHAPE, as_pixel_array, check_grid

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised for malformed magic numbers, bad dimensions, or truncated files."""


@dataclass(frozen=True)
class Image:
    """A 28x28 grayscale image with an optional class label."""

    pixels: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "pixels", as_pixel_array(self.pixels))
        if self.label is not None and not 0 <= int(self.label) <= 9:
            raise ValueError(f"label must be in [0, 9], got {self.label}")

    def foreground_mask(self, threshold=0):
        return self.pixels > threshold


@dataclass(frozen=True)
class PixelPerturbation:
    """Input perturbation: none, constant background fill, or low-bit flips."""

    kind: str = "none"
    value: int = 0
    probability: float = 0.0
    bits: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "constant-background", "lsb-flip"):
            raise ValueError(f"unknown perturbation kind: {self.kind!r}")
        if not 0 <= self.value <= 255:
            raise ValueError("background value must be in [0, 255]")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("flip probability must be in [0, 1]")
        if self.bits not in (1, 2):
            raise ValueError("bit count must be 1 or 2")


def load_idx_images(path, count):
    """Load the first `count` images from an IDX image file."""
    if count < 1:
        raise ValueError("count must be positive")
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise IdxFormatError("truncated file: incomplete IDX image header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(
                f"malformed magic: expected {IDX_IMAGE_MAGIC:#010x}, got {magic:#010x}"
            )
        if (rows, cols) != IMAGE_SHAPE:
            raise IdxFormatError(f"dimension mismatch: expected 28x28, got {rows}x{cols}")
        if count > n:
            raise IdxFormatError(f"truncated read: file holds {n} images, asked for {count}")
        payload = fh.read(count * rows * cols)
    if len(payload) < count * rows * cols:
        raise IdxFormatError("truncated file: image payload shorter than header claims")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    return [Image(pixels=data[i]) for i in range(count)]


def load_idx_labels(path, count):
    """Load the first `count` labels from an IDX label file."""
    if count < 1:
        raise ValueError("count must be positive")
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise IdxFormatError("truncated file: incomplete IDX label header")
        magic, n = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(
                f"malformed magic: expected {IDX_LABEL_MAGIC:#010x}, got {magic:#010x}"
            )
        if count > n:
            raise IdxFormatError(f"truncated read: file holds {n} labels, asked for {count}")
        payload = fh.read(count)
    if len(payload) < count:
        raise IdxFormatError("truncated file: label payload shorter than header claims")
    labels = list(np.frombuffer(payload, dtype=np.uint8))
    if any(l > 9 for l in labels):
        raise IdxFormatError("label out of range [0, 9]")
    return [int(l) for l in labels]


def load_labeled_images(image_path, label_path, count):
    """Load images and attach their labels."""
    images = load_idx_images(image_path, count)
    labels = load_idx_labels(label_path, count)
    return [Image(pixels=im.pixels, label=lb) for im, lb in zip(images, labels)]


def write_idx_images(images, path):
    """Write images as a standard IDX image file (big-endian header)."""
    arrs = [as_pixel_array(im) for im in images]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(arrs), *IMAGE_SHAPE))
        for a in arrs:
            fh.write(a.tobytes())


def write_idx_labels(labels, path):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)))
        fh.write(bytes(int(l) for l in labels))


def perturb(image, p: PixelPerturbation):
    """Apply a perturbation to an image; deterministic under a fixed seed."""
    pixels = as_pixel_array(image)
    label = getattr(image, "label", None)
    if p.kind == "none":
        return Image(pixels=pixels.copy(), label=label)
    if p.kind == "constant-background":
        out = pixels.copy()
        out[out == 0] = p.value
        return Image(pixels=out, label=label)
    # lsb-flip: each pixel's selected low bit(s) flip together with probability p
    rng = np.random.default_rng(p.seed)
    triggered = rng.random(pixels.shape) < p.probability
    mask = 0b1 if p.bits == 1 else 0b11
    out = np.where(triggered, pixels ^ mask, pixels).astype(np.uint8)
    return Image(pixels=out, label=label)


def write_pgm(grid, path):
    """Write a grayscale grid as binary PGM (P5), maxval 255, row-major."""
    arr = check_grid(grid, name="pgm grid")
    data = np.rint(arr).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        fh.write(data.tobytes())


def read_pgm(path):
    """Read a binary PGM (P5) file written by write_pgm."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    parts = blob.split(b"\n", 3)
    if len(parts) < 4:
        raise ValueError("malformed PGM header")
    width, height = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    payload = parts[3][: width * height]
    if len(payload) < width * height:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


# ---------------------------------------------------------------------------
# Synthetic stand-in datasets (no network access required).


def _render_paths(paths, thickness=1.3, supersample=4, peak=255.0):
    """Rasterize polyline paths with anti-aliasing onto a 28x28 grid.

    Each path is a list of (row, col) vertices in 28x28 coordinates.  The
    curve is drawn on a supersampled grid using the distance to the nearest
    segment, then box-downsampled, which yields soft stroke borders similar
    to scanned handwriting.
    """
    n = IMAGE_SHAPE[0] * supersample
    yy, xx = np.mgrid[0:n, 0:n]
    py = (yy + 0.5) / supersample
    px = (xx + 0.5) / supersample
    dist = np.full((n, n), np.inf)
    for path in paths:
        pts = np.asarray(path, dtype=float)
        for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
            dy, dx = r1 - r0, c1 - c0
            seg_len2 = dy * dy + dx * dx
            if seg_len2 == 0:
                d = np.hypot(py - r0, px - c0)
            else:
                t = np.clip(((py - r0) * dy + (px - c0) * dx) / seg_len2, 0.0, 1.0)
                d = np.hypot(py - (r0 + t * dy), px - (c0 + t * dx))
            dist = np.minimum(dist, d)
    intensity = np.clip(1.0 - (dist - thickness * 0.45) / (thickness * 0.75), 0.0, 1.0)
    coarse = intensity.reshape(28, supersample, 28, supersample).mean(axis=(1, 3))
    out = np.rint(coarse * peak)
    out[out < 16] = 0  # clean background, as in scanned digit datasets
    return out.astype(np.uint8)


def _arc(cy, cx, ry, rx, a0, a1, steps=40):
    ang = np.linspace(np.radians(a0), np.radians(a1), steps)
    return [(cy + ry * np.sin(a), cx + rx * np.cos(a)) for a in ang]


def _digit_paths(digit, jr):
    """Stroke skeleton for one digit class; jr jitters geometry slightly.

    Bars are slanted and loops kept open, as in unconstrained handwriting.
    """
    j = lambda s: s * jr  # noqa: E731
    if digit == 0:
        return [_arc(14 + j(0.4), 14, 7.8 + j(0.3), 5.9 + j(0.2), 0, 360, 72)]
    if digit == 1:
        return [[(6 + j(0.5), 15.5), (22, 13.5 + j(0.4))]]
    if digit == 2:
        return [
            _arc(9.5, 14, 3.7, 4.9 + j(0.3), 175, 385, 36)
            + [(20.2, 9.2 + j(0.3)), (22.6, 19.5 + j(0.4))]
        ]
    if digit == 3:
        return [
            _arc(9.3, 13.8, 3.4, 4.9, 155, 390, 30),
            _arc(17.6 + j(0.3), 13.6, 4.3, 5.3, 252, 492, 30),
        ]
    if digit == 4:
        return [
            [(6.5, 17.5 + j(0.3)), (15.2, 9.2), (16.4, 19.8 + j(0.3))],
            [(7.5 + j(0.4), 17.2), (21.8, 15.8)],
        ]
    if digit == 5:
        return [
            [(6.4, 18.5 + j(0.3)), (7.6, 10.3), (12.8, 10.1)]
            + _arc(16.9, 13.8, 4.5 + j(0.2), 5.2, 252, 440, 30)
        ]
    if digit == 6:
        return [
            [(6.2, 16.8 + j(0.4)), (11.5, 11.0)]
            + _arc(16.9, 13.9, 4.7, 5.2 + j(0.2), 90, 450, 48)
        ]
    if digit == 7:
        return [[(8.6, 9.3 + j(0.3)), (6.8, 18.7), (14.5, 14.8), (21.8, 12 + j(0.4))]]
    if digit == 8:
        return [
            _arc(9.8, 14, 3.5 + j(0.2), 4.6, 0, 360, 48),
            _arc(17.9, 14, 4.3, 5.3 + j(0.2), 0, 360, 48),
        ]
    if digit == 9:
        return [
            _arc(10.3, 13.7, 4.1, 5.1 + j(0.2), -90, 270, 48)
            + [(14.4, 17.4), (21.6, 13.7 + j(0.4))]
        ]
    raise ValueError(f"digit must be 0-9, got {digit}")


def synthetic_digit(digit, seed=0):
    """Render one digit-style image; deterministic per (digit, seed)."""
    rng = np.random.default_rng((seed, digit))
    jr = float(rng.uniform(-1.0, 1.0))
    thickness = 0.9 + 0.15 * float(rng.random())
    pixels = _render_paths(_digit_paths(digit, jr), thickness=thickness)
    # pen-pressure texture: per-pixel intensity variation along the stroke
    texture = rng.uniform(0.78, 1.0, size=pixels.shape)
    textured = np.rint(pixels * texture).astype(np.uint8)
    textured[pixels == 0] = 0
    return Image(pixels=textured, label=digit)


def synthetic_digit_set(count_per_class=1, seed=0):
    """A digit battery ordered class 0..9, repeated count_per_class times."""
    images = []
    for rep in range(count_per_class):
        for d in range(10):
            images.append(synthetic_digit(d, seed=seed + 1000 * rep))
    return images


_GARMENT_CLASSES = {"tshirt": 0, "pullover": 2, "dress": 3, "coat": 4}


def _garment_mask(name):
    yy, xx = np.mgrid[0:28, 0:28].astype(float)
    body = np.zeros((28, 28), dtype=bool)
    if name in ("tshirt", "pullover", "coat"):
        torso_half = {"tshirt": 6.3, "pullover": 6.0, "coat": 6.5}[name]
        body |= (yy >= 7) & (yy <= 24) & (np.abs(xx - 13.5) <= torso_half)
        sleeve_len = {"tshirt": 15, "pullover": 19, "coat": 19}[name]
        sleeve = (yy >= 7) & (yy <= sleeve_len)
        spread = 0.28 if name == "tshirt" else 0.18
        body |= sleeve & (np.abs(xx - 13.5) <= torso_half + 2.2 + spread * (yy - 7))
        body &= np.abs(xx - 13.5) <= 10.5
        body |= (yy >= 5) & (yy < 7) & (np.abs(xx - 13.5) <= 3.2)
    elif name == "dress":
        body |= (yy >= 5) & (yy <= 11) & (np.abs(xx - 13.5) <= 4.6)
        body |= (yy > 11) & (yy <= 25) & (np.abs(xx - 13.5) <= 4.6 + 0.5 * (yy - 11))
    else:
        raise ValueError(f"unknown garment {name!r}")
    return body


def synthetic_garment(name, seed=0):
    """Render one garment-style image with deep woven interior texture.

    The interior alternates bright and near-dark knit ribs so that, like the
    garment photographs this stands in for, texture variation dominates the
    interior rather than a flat fill.
    """
    if name not in _GARMENT_CLASSES:
        raise ValueError(f"garment must be one of {sorted(_GARMENT_CLASSES)}")
    rng = np.random.default_rng((seed, _GARMENT_CLASSES[name]))
    mask = _garment_mask(name)
    yy, xx = np.mgrid[0:28, 0:28].astype(float)
    base = 126.0 + 15.0 * rng.random()
    # hard vertical knit ribs: alternating bright/dark columns, so the
    # texture varies along the pixel scan order rather than across it
    ribs = 118.0 * np.sign(
        np.sin(2 * np.pi * (xx / (2.6 + 0.6 * rng.random())) + rng.uniform(0, 6))
    )
    weave = (
        24.0 * np.sin(2 * np.pi * (yy / (3.2 + rng.random())) + rng.uniform(0, 6))
        + rng.normal(0.0, 14.0, size=(28, 28))
    )
    pixels = np.where(mask, np.clip(base + ribs + weave, 12, 255), 0.0)
    return Image(pixels=pixels.astype(np.uint8), label=None)


def synthetic_garment_set(seed=0):
    return {name: synthetic_garment(name, seed=seed) for name in sorted(_GARMENT_CLASSES)}
