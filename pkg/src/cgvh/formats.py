"""Binary field/panel/matrix files and the JSON stack definition.

All binary files share a 16-byte little-endian header::

    magic (4 bytes) | version u16 | grid_side u32 | 6 reserved bytes

followed by float64 payload in row-major order:

    AFLD  N^2 (real, imag) pairs           amplitude field
    AINT  N^2 values                        intensity image
    APNL  N^2 (absorption, phase) pairs     diffractive panel
    AMTX  N^4 (real, imag) pairs            system matrix, N^2 x N^2
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .field import AmplitudeField, IntensityImage
from .optics import DiffractivePanel, OpticalStack, PropagationSpec, SystemMatrix

__all__ = [
    "write_field",
    "read_field",
    "write_intensity",
    "read_intensity",
    "write_panel",
    "read_panel",
    "write_matrix",
    "read_matrix",
    "save_stack",
    "load_stack",
    "stack_from_dict",
]

_HEADER = struct.Struct("<4sHI6x")
VERSION = 1


def _write(path, magic, grid_side, payload):
    payload = np.ascontiguousarray(payload, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, VERSION, grid_side))
        fh.write(payload.tobytes())


def _read(path, magic, count_fn, width):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than header", path)
    got, version, n = _HEADER.unpack_from(raw)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", path)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", path)
    if n < 1:
        raise FormatError("grid_side must be positive", path)
    count = count_fn(n) * width
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise FormatError(f"payload is {len(body)} bytes, expected {8 * count}", path)
    return n, np.frombuffer(body, dtype="<f8").astype(np.float64)


def write_field(path, field):
    pairs = np.stack([field.vector.real, field.vector.imag], axis=1)
    _write(path, b"AFLD", field.grid_side, pairs)


def read_field(path, pixel_pitch=1.0):
    n, v = _read(path, b"AFLD", lambda n: n * n, 2)
    return AmplitudeField((v[0::2] + 1j * v[1::2]).reshape(n, n), pixel_pitch)


def write_intensity(path, image):
    _write(path, b"AINT", image.grid_side, image.vector)


def read_intensity(path):
    n, v = _read(path, b"AINT", lambda n: n * n, 1)
    return IntensityImage(v.reshape(n, n))


def write_panel(path, panel):
    pairs = np.stack([panel.absorption.ravel(), panel.phase.ravel()], axis=1)
    _write(path, b"APNL", panel.grid_side, pairs)


def read_panel(path):
    n, v = _read(path, b"APNL", lambda n: n * n, 2)
    return DiffractivePanel(v[0::2].reshape(n, n), v[1::2].reshape(n, n))


def write_matrix(path, matrix):
    e = matrix.entries.ravel()
    _write(path, b"AMTX", matrix.grid_side, np.stack([e.real, e.imag], axis=1))


def read_matrix(path):
    n, v = _read(path, b"AMTX", lambda n: n ** 4, 2)
    return SystemMatrix((v[0::2] + 1j * v[1::2]).reshape(n * n, n * n), n)


STACK_KEYS = {
    "format", "version", "grid_side", "wavelength", "pixel_pitch",
    "evanescent_mode", "pad_factor", "spacings", "panels",
}


def save_stack(stack, path):
    """Write ``path`` (JSON) plus one APNL file per panel beside it."""
    path = Path(path)
    names = []
    for i, panel in enumerate(stack.panels, start=1):
        name = f"{path.stem}_panel_{i:02d}.apnl"
        write_panel(path.parent / name, panel)
        names.append(name)
    first = stack.propagations[0]
    doc = {
        "format": "cgvh-stack",
        "version": VERSION,
        "grid_side": stack.grid_side,
        "wavelength": first.wavelength,
        "pixel_pitch": first.pixel_pitch,
        "evanescent_mode": first.evanescent_mode,
        "pad_factor": first.pad_factor,
        "spacings": [s.spacing for s in stack.propagations],
        "panels": names,
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def stack_from_dict(doc, base_dir=".", source=None):
    unknown = set(doc) - STACK_KEYS
    if unknown:
        raise FormatError(f"unknown stack keys: {sorted(unknown)}", source)
    try:
        n = int(doc["grid_side"])
        spacings = [float(s) for s in doc["spacings"]]
        panel_refs = list(doc.get("panels", []))
    except KeyError as exc:
        raise FormatError(f"missing stack key {exc}", source) from None
    specs = [
        PropagationSpec(
            spacing=s,
            wavelength=float(doc.get("wavelength", 0.75)),
            pixel_pitch=float(doc.get("pixel_pitch", 0.4)),
            evanescent_mode=doc.get("evanescent_mode", "decay"),
            pad_factor=int(doc.get("pad_factor", 1)),
        )
        for s in spacings
    ]
    panels = [read_panel(Path(base_dir) / ref) for ref in panel_refs]
    return OpticalStack(n, panels, specs)


def load_stack(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path, exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != "cgvh-stack":
        raise FormatError("not a cgvh-stack document", path)
    return stack_from_dict(doc, path.parent, path)
