"""Complex amplitude fields on an N x N grid and the metrics defined on them.

Fields are stored as ``(N, N)`` complex128 arrays, row-major, so that the
flattened vector view is the N^2-dimensional state acted on by the optical
system matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidField, ShapeMismatch, ZeroField

__all__ = [
    "AmplitudeField",
    "IntensityImage",
    "l2_norm",
    "normalize",
    "unitary_fft2",
    "unitary_ifft2",
    "centered",
    "intensity",
    "tvd_component",
    "tvd_intensity",
]


def _as_grid(data, grid_side, dtype):
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.ndim == 1:
        if grid_side is None:
            n = int(round(np.sqrt(arr.size)))
            if n * n != arr.size:
                raise InvalidField(f"length {arr.size} is not a perfect square")
            grid_side = n
        if arr.size != grid_side * grid_side:
            raise InvalidField(
                f"data length {arr.size} != grid_side^2 = {grid_side * grid_side}"
            )
        arr = arr.reshape(grid_side, grid_side)
    elif arr.ndim == 2:
        if arr.shape[0] != arr.shape[1]:
            raise InvalidField(f"grid must be square, got {arr.shape}")
        if grid_side is not None and arr.shape[0] != grid_side:
            raise InvalidField(f"grid side {arr.shape[0]} != {grid_side}")
    else:
        raise InvalidField(f"expected 1-D or 2-D data, got ndim={arr.ndim}")
    if arr.shape[0] < 1:
        raise InvalidField("grid_side must be positive")
    if not np.all(np.isfinite(arr)):
        raise InvalidField("field contains NaN or Inf")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AmplitudeField:
    """Complex amplitude on one plane of the optical stack.

    Parameters
    ----------
    data : array_like
        Either a flat length-N^2 sequence (row-major) or an ``(N, N)`` array.
    pixel_pitch : float
        Sampling pitch in the user's length unit.
    grid_side : int, optional
        Required only to disambiguate flat input; inferred otherwise.
    """

    data: np.ndarray
    pixel_pitch: float = 1.0
    grid_side: int = None

    def __init__(self, data, pixel_pitch=1.0, grid_side=None):
        arr = _as_grid(data, grid_side, np.complex128)
        if not pixel_pitch > 0:
            raise InvalidField("pixel_pitch must be positive")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "pixel_pitch", float(pixel_pitch))
        object.__setattr__(self, "grid_side", arr.shape[0])

    @property
    def vector(self):
        """Flattened N^2 view (row-major)."""
        return self.data.reshape(-1)

    def with_data(self, data):
        return AmplitudeField(data, self.pixel_pitch)

    def __len__(self):
        return self.data.size

    def __repr__(self):
        return f"AmplitudeField(grid_side={self.grid_side}, pixel_pitch={self.pixel_pitch})"


@dataclass(frozen=True, eq=False)
class IntensityImage:
    """Non-negative detector intensities on an N x N grid."""

    data: np.ndarray
    grid_side: int = None

    def __init__(self, data, grid_side=None):
        arr = _as_grid(data, grid_side, np.float64)
        if np.any(arr < 0):
            raise InvalidField("intensity values must be non-negative")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "grid_side", arr.shape[0])

    @property
    def vector(self):
        return self.data.reshape(-1)

    def __repr__(self):
        return f"IntensityImage(grid_side={self.grid_side})"


def _check_pair(a, b):
    if a.grid_side != b.grid_side:
        raise ShapeMismatch(f"grid sides differ: {a.grid_side} vs {b.grid_side}")


def l2_norm(field):
    """Square root of the total optical power ``sum_j |psi(j)|^2``."""
    return float(np.linalg.norm(field.vector))


def normalize(field):
    norm = l2_norm(field)
    if norm == 0.0:
        raise ZeroField("cannot normalize a zero field")
    return field.with_data(field.data / norm)


def unitary_fft2(field):
    """2-D DFT scaled by 1/N per axis, so the transform matrix is unitary.

    Output uses the standard DFT layout (zero frequency at index ``[0, 0]``);
    see :func:`centered` for a shifted view.
    """
    return field.with_data(np.fft.fft2(field.data, norm="ortho"))


def unitary_ifft2(field):
    return field.with_data(np.fft.ifft2(field.data, norm="ortho"))


def centered(field):
    """Spectrum with zero frequency moved to the grid centre, for display."""
    return np.fft.fftshift(field.data)


def intensity(field):
    re = field.data.real
    im = field.data.imag
    return IntensityImage(re * re + im * im)


def _component_squares(z):
    re = z.real
    im = z.imag
    return re * re, im * im


def tvd_component(psi, phi):
    """L1 distance between squared real and imaginary components.

    ``sum_{j,p} |psi(j,p)^2 - phi(j,p)^2|`` with ``p`` running over the real
    and imaginary parts separately. This is the quantity bounded by the
    Cauchy-Schwarz / contraction chain in :mod:`cgvh.analysis`.
    """
    _check_pair(psi, phi)
    pr, pi = _component_squares(psi.data)
    qr, qi = _component_squares(phi.data)
    return float(np.sum(np.abs(pr - qr)) + np.sum(np.abs(pi - qi)))


def tvd_intensity(psi_img, phi_img):
    """L1 distance between two intensity images.

    Never exceeds :func:`tvd_component` for the generating fields, by the
    triangle inequality applied pixel by pixel.
    """
    _check_pair(psi_img, phi_img)
    return float(np.sum(np.abs(psi_img.data - phi_img.data)))
