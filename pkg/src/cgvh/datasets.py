"""Synthetic amplitude patterns, the close-pair task, and PGM/manifest import."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classify import LabeledPattern
from .errors import FormatError
from .field import AmplitudeField

__all__ = [
    "bar_pattern",
    "corner_blob",
    "SHAPES",
    "synthetic_dataset",
    "CloseTask",
    "close_pair_task",
    "read_pgm",
    "write_pgm",
    "load_manifest",
    "pattern_from_image",
]


def bar_pattern(n, orientation, width=None):
    """Binary bar through the grid centre: ``h``, ``v``, ``d`` or ``a`` (anti-diagonal)."""
    width = width or max(1, n // 4)
    img = np.zeros((n, n))
    r0 = (n - width) // 2
    idx = np.arange(n)
    if orientation == "h":
        img[r0:r0 + width, :] = 1.0
    elif orientation == "v":
        img[:, r0:r0 + width] = 1.0
    elif orientation in ("d", "a"):
        rr, cc = np.meshgrid(idx, idx, indexing="ij")
        off = rr - cc if orientation == "d" else rr + cc - (n - 1)
        img[np.abs(off) <= width // 2] = 1.0
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    return img


def corner_blob(n, corner, radius=None):
    """Gaussian blob centred in one quadrant (0..3, row-major)."""
    radius = radius or n / 8
    rr, cc = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cy = n / 4 if corner in (0, 1) else 3 * n / 4
    cx = n / 4 if corner in (0, 2) else 3 * n / 4
    return np.exp(-((rr - cy + 0.5) ** 2 + (cc - cx + 0.5) ** 2) / (2 * radius ** 2))


SHAPES = {
    "bar_h": lambda n: bar_pattern(n, "h"),
    "bar_v": lambda n: bar_pattern(n, "v"),
    "bar_d": lambda n: bar_pattern(n, "d"),
    "bar_a": lambda n: bar_pattern(n, "a"),
    "blob_0": lambda n: corner_blob(n, 0),
    "blob_1": lambda n: corner_blob(n, 1),
    "blob_2": lambda n: corner_blob(n, 2),
    "blob_3": lambda n: corner_blob(n, 3),
}


def pattern_from_image(img, label, pixel_pitch=1.0):
    """Non-negative real amplitude image -> unit-norm labelled pattern."""
    img = np.asarray(img, dtype=np.float64)
    if np.any(img < 0):
        raise ValueError("amplitude images must be non-negative")
    norm = np.linalg.norm(img)
    if norm == 0:
        raise ValueError("amplitude image is all zeros")
    return LabeledPattern(AmplitudeField(img / norm, pixel_pitch), int(label))


def synthetic_dataset(rng, grid_side, samples_per_class, shapes=("bar_h", "bar_v"), jitter=0.1, pixel_pitch=1.0):
    """Shape prototypes with multiplicative amplitude jitter; label = shape index."""
    out = []
    for label, name in enumerate(shapes):
        proto = SHAPES[name](grid_side)
        for _ in range(samples_per_class):
            img = proto * (1.0 + jitter * rng.uniform(-1.0, 1.0, proto.shape))
            out.append(pattern_from_image(img, label, pixel_pitch))
    return out


@dataclass
class CloseTask:
    """Two classes of unit-norm patterns at a fixed cross-class distance.

    Class ``c`` samples are ``(base + delta * u) / sqrt(1 + delta^2)`` with
    ``u`` a random unit vector in subspace ``c``. The two subspaces are
    orthogonal to each other and to ``base``, so every class-0/class-1 pair
    sits at exactly ``epsilon`` and every sample has the same overlap with
    ``base``; no linear functional separates the classes by their means.
    """

    train: list
    test: list
    base: AmplitudeField
    subspaces: np.ndarray
    epsilon: float
    delta: float


def _orthonormal_on_support(rng, base, count):
    support = np.flatnonzero(base.ravel())
    if count + 1 > support.size:
        raise ValueError("subspace too large for the base pattern's support")
    g = rng.standard_normal((support.size, count + 1))
    g[:, 0] = base.ravel()[support]
    q, _ = np.linalg.qr(g)
    # first column spans base; drop it
    vecs = np.zeros((count, base.size))
    vecs[:, support] = q[:, 1:].T
    return vecs


def close_pair_task(
    rng,
    grid_side=16,
    epsilon=0.02,
    train_per_class=256,
    test_per_class=1000,
    subspace_dim=6,
    pixel_pitch=1.0,
):
    base_img = bar_pattern(grid_side, "h")
    base = base_img / np.linalg.norm(base_img)
    delta = epsilon / np.sqrt(2.0 - epsilon ** 2)
    vecs = _orthonormal_on_support(rng, base, 2 * subspace_dim)
    subspaces = vecs.reshape(2, subspace_dim, -1)
    if np.any(base.ravel()[np.flatnonzero(base)] <= delta):
        raise ValueError("epsilon too large to keep amplitudes non-negative")
    scale = 1.0 / np.sqrt(1.0 + delta ** 2)

    def draw(per_class):
        out = []
        for label in (0, 1):
            coef = rng.standard_normal((per_class, subspace_dim))
            coef /= np.linalg.norm(coef, axis=1, keepdims=True)
            dirs = coef @ subspaces[label]
            for d in dirs:
                img = (base.ravel() + delta * d) * scale
                out.append(LabeledPattern(AmplitudeField(img.reshape(grid_side, grid_side), pixel_pitch), label))
        return out

    train = draw(train_per_class)
    test = draw(test_per_class)
    return CloseTask(train, test, AmplitudeField(base, pixel_pitch), subspaces, epsilon, delta)


def read_pgm(path):
    """Read a single-channel PGM (P2 or P5, maxval <= 255) as floats in [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    tokens = []
    pos = 0
    line = 1
    # header: magic, width, height, maxval, with '#' comments
    while len(tokens) < 4:
        if pos >= len(raw):
            raise FormatError("truncated PGM header", path, line)
        ch = raw[pos:pos + 1]
        if ch == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            if ch == b"\n":
                line += 1
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos:pos + 1].isspace():
                pos += 1
            tokens.append(raw[start:pos].decode("ascii", "replace"))
    magic, w, h, maxval = tokens
    if magic not in ("P2", "P5"):
        raise FormatError(f"unsupported PGM magic {magic!r}", path, 1)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("non-integer PGM header field", path, line) from None
    if not 0 < maxval <= 255:
        raise FormatError(f"maxval {maxval} outside 1..255", path, line)
    if magic == "P5":
        data = raw[pos + 1:pos + 1 + w * h]
        if len(data) != w * h:
            raise FormatError("truncated PGM pixel data", path)
        img = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
    else:
        vals = raw[pos:].split()
        if len(vals) < w * h:
            raise FormatError("too few PGM pixel values", path)
        img = np.array([int(v) for v in vals[: w * h]], dtype=np.float64)
    return img.reshape(h, w) / maxval


def write_pgm(path, img):
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    h, w = img.shape
    data = np.round(img * 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def load_manifest(path, pixel_pitch=1.0):
    """Read ``<pgm path> <label>`` lines; '#' starts a comment.

    Relative paths resolve against the manifest's directory. Images must be
    square.
    """
    path = Path(path)
    out = []
    for lineno, text in enumerate(path.read_text().splitlines(), start=1):
        text = text.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise FormatError("expected '<file> <label>'", path, lineno)
        try:
            label = int(parts[1])
        except ValueError:
            raise FormatError(f"label {parts[1]!r} is not an integer", path, lineno) from None
        img_path = Path(parts[0])
        if not img_path.is_absolute():
            img_path = path.parent / img_path
        try:
            img = read_pgm(img_path)
        except OSError as exc:
            raise FormatError(f"cannot read {img_path}: {exc.strerror}", path, lineno) from None
        if img.shape[0] != img.shape[1]:
            raise FormatError(f"image {img_path} is not square", path, lineno)
        try:
            out.append(pattern_from_image(img, label, pixel_pitch))
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
    return out
