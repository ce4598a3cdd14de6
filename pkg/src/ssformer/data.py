"""Samples, the synthetic shapes dataset and binary Netpbm I/O.

On-disk dataset layout::

    root/index.txt          one sample id per line
    root/images/<id>.ppm    binary P6, maxval 255
    root/labels/<id>.pgm    binary P5, raw class ids, 255 = ignore
"""
from __future__ import annotations

import colorsys
import os
import re
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import ContractError, DataError, FormatError

IGNORE_INDEX = 255
NOISE_SIGMA = 0.05


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    label: np.ndarray  # (H, W) int64

    def __post_init__(self):
        if self.image.shape[:2] != self.label.shape:
            raise DataError(f"image {self.image.shape[:2]} and label {self.label.shape} sizes differ")


# ---------------------------------------------------------------- synthetic data

def class_palette(n_classes: int) -> np.ndarray:
    """Base RGB colour per class; background is dark grey, shapes get evenly spaced hues."""
    colors = [(0.15, 0.15, 0.15)]
    for c in range(1, n_classes):
        colors.append(colorsys.hsv_to_rgb((c - 1) / max(n_classes - 1, 1), 0.8, 0.9))
    return np.array(colors, dtype=np.float32)


def synth_sample(rng: np.random.Generator, height: int, width: int, n_classes: int) -> Sample:
    label = np.zeros((height, width), dtype=np.int64)
    rows, cols = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(1, 5)):
        cls = int(rng.integers(1, n_classes))
        if rng.random() < 0.5:
            sh = int(rng.integers(height // 4, height // 2 + 1))
            sw = int(rng.integers(width // 4, width // 2 + 1))
            top = int(rng.integers(0, height - sh + 1))
            left = int(rng.integers(0, width - sw + 1))
            label[top:top + sh, left:left + sw] = cls
        else:
            r = rng.uniform(min(height, width) / 8, min(height, width) / 4)
            cy, cx = rng.uniform(r, height - r), rng.uniform(r, width - r)
            label[(rows + 0.5 - cy) ** 2 + (cols + 0.5 - cx) ** 2 <= r * r] = cls
    image = class_palette(n_classes)[label]
    image = image + rng.normal(0.0, NOISE_SIGMA, size=image.shape)
    return Sample(np.clip(image, 0.0, 1.0).astype(np.float32), label)


def synth_dataset(seed: int, n_samples: int, height: int, width: int, n_classes: int) -> List[Sample]:
    """Deterministic images of 1-4 coloured rectangles and discs on a background."""
    if n_classes < 2:
        raise ContractError("n_classes must be >= 2 (class 0 is background)")
    if height < 8 or width < 8:
        raise ContractError(f"synthetic images must be at least 8x8, got {height}x{width}")
    rng = np.random.default_rng(seed)
    return [synth_sample(rng, height, width, n_classes) for _ in range(n_samples)]


# ---------------------------------------------------------------- netpbm

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*")


def _read_header(buf: bytes):
    if len(buf) < 2:
        raise FormatError("file too short for a Netpbm header", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported Netpbm magic {magic!r}; expected P5 or P6", 0)
    pos = 2
    values = []
    for field_name in ("width", "height", "maxval"):
        pos = _TOKEN.match(buf, pos).end()
        m = re.compile(rb"\d+").match(buf, pos)
        if m is None:
            raise FormatError(f"expected integer {field_name}", pos)
        values.append(int(m.group()))
        pos = m.end()
    if pos >= len(buf) or buf[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise FormatError("missing whitespace after maxval", pos)
    width, height, maxval = values
    if width < 1 or height < 1:
        raise FormatError(f"non-positive dimensions {width}x{height}", 2)
    if not 0 < maxval <= 255:
        raise FormatError(f"maxval {maxval} unsupported (must be 1..255)", pos)
    return magic, width, height, maxval, pos + 1


def read_netpbm(path) -> tuple:
    """Return (magic, array, maxval); array is uint8 (H, W) for P5 or (H, W, 3) for P6."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, maxval, offset = _read_header(buf)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise FormatError(f"truncated payload: need {need} bytes, found {len(payload)}", offset + len(payload))
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 3:
        return magic, arr.reshape(height, width, 3).copy(), maxval
    return magic, arr.reshape(height, width).copy(), maxval


def load_image_pgm_ppm(path) -> np.ndarray:
    """Float image in [0, 1]: (H, W, 3) from P6, (H, W, 1) from P5."""
    magic, arr, maxval = read_netpbm(path)
    img = arr.astype(np.float32) / np.float32(maxval)
    return img if magic == b"P6" else img[:, :, None]


def load_label_pgm(path) -> np.ndarray:
    magic, arr, _ = read_netpbm(path)
    if magic != b"P5":
        raise FormatError(f"label maps must be P5 graymaps, got {magic.decode()}", 0)
    return arr.astype(np.int64)


def write_netpbm(path, array: np.ndarray, maxval: int = 255) -> None:
    array = np.asarray(array)
    if array.ndim == 3 and array.shape[2] == 3:
        magic = b"P6"
    elif array.ndim == 2:
        magic = b"P5"
    else:
        raise DataError(f"cannot write array of shape {array.shape} as Netpbm")
    if array.min(initial=0) < 0 or array.max(initial=0) > maxval:
        raise DataError(f"values outside [0, {maxval}]")
    header = b"%s\n%d %d\n%d\n" % (magic, array.shape[1], array.shape[0], maxval)
    with open(path, "wb") as fh:
        fh.write(header + array.astype(np.uint8).tobytes())


def write_image_ppm(path, image: np.ndarray) -> None:
    write_netpbm(path, np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8))


def write_label_pgm(path, label: np.ndarray) -> None:
    write_netpbm(path, np.asarray(label).astype(np.int64))


# ---------------------------------------------------------------- dataset directories

def load_dataset(root) -> List[Sample]:
    index = os.path.join(root, "index.txt")
    if not os.path.isfile(index):
        raise DataError(f"{index} not found")
    with open(index) as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if not ids:
        raise DataError(f"{index} lists no samples")
    samples = []
    for sid in ids:
        img_path = os.path.join(root, "images", f"{sid}.ppm")
        lab_path = os.path.join(root, "labels", f"{sid}.pgm")
        for p in (img_path, lab_path):
            if not os.path.isfile(p):
                raise DataError(f"sample {sid!r}: missing {p}")
        image = load_image_pgm_ppm(img_path)
        if image.shape[2] != 3:
            raise DataError(f"sample {sid!r}: image must be a P6 pixmap")
        samples.append(Sample(image, load_label_pgm(lab_path)))
    return samples


def save_dataset(root, samples: Sequence[Sample], ids: Sequence[str] = ()) -> None:
    ids = list(ids) or [f"{i:05d}" for i in range(len(samples))]
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "labels"), exist_ok=True)
    for sid, s in zip(ids, samples):
        write_image_ppm(os.path.join(root, "images", f"{sid}.ppm"), s.image)
        write_label_pgm(os.path.join(root, "labels", f"{sid}.pgm"), s.label)
    with open(os.path.join(root, "index.txt"), "w") as fh:
        fh.write("\n".join(ids) + "\n")
