"""Passive multilayer diffractive stack: panels, free-space propagation and
the collapsed system matrix.

A stack with ``L`` panels applies ``P_{L+1} Q_L P_L ... Q_1 P_1`` to the
input field, where each ``P`` is an angular-spectrum propagation
``F^-1 diag(exp(i beta(k) D)) F`` and each ``Q`` a diagonal pixel
transmission ``exp(-a + i b)``.
"""
from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DimensionCap, InvalidField, NumericalFailure, ShapeMismatch
from .field import AmplitudeField

__all__ = [
    "MAX_ABSORPTION",
    "DEFAULT_ASSEMBLY_CAP",
    "DiffractivePanel",
    "PropagationSpec",
    "OpticalStack",
    "SystemMatrix",
    "ContractionReport",
    "angular_frequencies",
    "axial_wavenumber",
    "beta_axial",
    "transfer_function",
    "propagate",
    "modulate",
    "forward",
    "assemble_system_matrix",
    "singular_spectrum",
    "is_contraction",
    "quantize_phase",
    "random_stack",
]

# amplitude factor exp(-46) ~ 1e-20; keeps products clear of denormals
MAX_ABSORPTION = 46.0
DEFAULT_ASSEMBLY_CAP = 4096
_ASSEMBLY_CHUNK = 64
EVANESCENT_MODES = ("decay", "truncate")


class DiffractivePanel:
    """Pixel-wise absorption ``a`` (nepers) and phase delay ``b`` (radians).

    ``a`` must be non-negative so that ``|exp(-a + i b)| <= 1``; values
    above :data:`MAX_ABSORPTION` are clamped.
    """

    __slots__ = ("absorption", "phase", "transmission", "grid_side")

    def __init__(self, absorption, phase, *, _check=True):
        a = np.array(absorption, dtype=np.float64)
        b = np.array(phase, dtype=np.float64)
        if a.ndim == 1:
            n = int(round(np.sqrt(a.size)))
            if n * n != a.size:
                raise InvalidField(f"length {a.size} is not a perfect square")
            a = a.reshape(n, n)
        if b.shape != a.shape:
            b = b.reshape(a.shape)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidField(f"panel must be a square grid, got {a.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidField("panel contains NaN or Inf")
        if _check:
            if np.any(a < 0):
                raise InvalidField("absorption must be >= 0 (passive panel)")
            a = np.minimum(a, MAX_ABSORPTION)
        a.setflags(write=False)
        b.setflags(write=False)
        t = np.exp(-a + 1j * b)
        t.setflags(write=False)
        self.absorption = a
        self.phase = b
        self.transmission = t
        self.grid_side = a.shape[0]

    @classmethod
    def unchecked(cls, absorption, phase):
        """Build a panel without the passivity check (negative controls only)."""
        return cls(absorption, phase, _check=False)

    @classmethod
    def identity(cls, grid_side):
        z = np.zeros((grid_side, grid_side))
        return cls(z, z)

    @classmethod
    def phase_only(cls, phase):
        phase = np.asarray(phase, dtype=np.float64)
        return cls(np.zeros_like(phase), phase)

    @property
    def is_passive(self):
        return bool(np.all(self.absorption >= 0))

    def __repr__(self):
        return f"DiffractivePanel(grid_side={self.grid_side})"


@dataclass(frozen=True)
class PropagationSpec:
    """Free-space gap between two planes.

    ``pad_factor`` > 1 zero-pads the field before the FFT and crops after,
    which suppresses periodic wraparound at the cost of making the operator
    differ from the bare ``F^-1 H F`` form.
    """

    spacing: float = 30.0
    wavelength: float = 0.75
    pixel_pitch: float = 0.4
    evanescent_mode: str = "decay"
    pad_factor: int = 1

    def __post_init__(self):
        for name in ("spacing", "wavelength", "pixel_pitch"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidField(f"{name} must be positive, got {v!r}")
        if self.evanescent_mode not in EVANESCENT_MODES:
            raise InvalidField(f"evanescent_mode must be one of {EVANESCENT_MODES}")
        if int(self.pad_factor) != self.pad_factor or self.pad_factor < 1:
            raise InvalidField("pad_factor must be a positive integer")


def angular_frequencies(n, pixel_pitch):
    """Physical angular frequencies (rad / length) of the DFT bins, DFT order."""
    return 2 * np.pi * np.fft.fftfreq(n, d=pixel_pitch)


def axial_wavenumber(kx, ky, wavelength):
    """``sqrt(k0^2 - kx^2 - ky^2)``; imaginary (positive) past the light cone."""
    k0 = 2 * np.pi / wavelength
    arg = k0 * k0 - np.asarray(kx) ** 2 - np.asarray(ky) ** 2
    root = np.sqrt(np.abs(arg))
    return np.where(arg >= 0, root + 0j, 1j * root)


def beta_axial(k_index, spec, grid_side):
    """Axial wavenumber of DFT bin ``k_index = (row, col)`` on an N-grid."""
    row, col = k_index
    f = angular_frequencies(grid_side, spec.pixel_pitch)
    return complex(axial_wavenumber(f[col], f[row], spec.wavelength))


@functools.lru_cache(maxsize=256)
def transfer_function(spec, grid_side):
    """Diagonal of the propagation operator on the (padded) frequency grid."""
    n = grid_side * spec.pad_factor
    f = angular_frequencies(n, spec.pixel_pitch)
    beta = axial_wavenumber(f[None, :], f[:, None], spec.wavelength)
    propagating = beta.imag == 0
    h = np.where(propagating, np.exp(1j * beta.real * spec.spacing), 0j)
    if spec.evanescent_mode == "decay":
        h = np.where(propagating, h, np.exp(-beta.imag * spec.spacing))
    h.setflags(write=False)
    return h


def _propagate_array(u, spec, adjoint=False):
    """Propagate a batch ``(..., N, N)`` of fields; ``adjoint`` applies P^H."""
    n = u.shape[-1]
    h = transfer_function(spec, n)
    if adjoint:
        h = h.conj()
    if spec.pad_factor == 1:
        return np.fft.ifft2(np.fft.fft2(u, norm="ortho") * h, norm="ortho")
    big = n * spec.pad_factor
    off = (big - n) // 2
    padded = np.zeros(u.shape[:-2] + (big, big), dtype=np.complex128)
    padded[..., off:off + n, off:off + n] = u
    out = np.fft.ifft2(np.fft.fft2(padded, norm="ortho") * h, norm="ortho")
    return out[..., off:off + n, off:off + n]


def _check_grid(field, grid_side):
    if field.grid_side != grid_side:
        raise ShapeMismatch(f"field grid {field.grid_side} != {grid_side}")


def propagate(field, spec):
    return field.with_data(_propagate_array(field.data, spec))


def modulate(field, panel):
    _check_grid(field, panel.grid_side)
    return field.with_data(field.data * panel.transmission)


@dataclass(frozen=True)
class OpticalStack:
    """Input plane, ``L`` panels, detector plane.

    ``propagations[0]`` is the gap before the first panel and
    ``propagations[-1]`` the gap to the detector.
    """

    grid_side: int
    panels: tuple
    propagations: tuple

    def __init__(self, grid_side, panels, propagations):
        panels = tuple(panels)
        propagations = tuple(propagations)
        if len(propagations) != len(panels) + 1:
            raise InvalidField(
                f"need len(panels)+1 propagations, got {len(propagations)} for {len(panels)} panels"
            )
        for p in panels:
            if p.grid_side != grid_side:
                raise ShapeMismatch(f"panel grid {p.grid_side} != {grid_side}")
        first = propagations[0]
        for s in propagations[1:]:
            if s.wavelength != first.wavelength or s.pixel_pitch != first.pixel_pitch:
                raise InvalidField("all propagations must share wavelength and pixel_pitch")
        object.__setattr__(self, "grid_side", int(grid_side))
        object.__setattr__(self, "panels", panels)
        object.__setattr__(self, "propagations", propagations)

    @property
    def depth(self):
        return len(self.panels)

    @property
    def wavelength(self):
        return self.propagations[0].wavelength

    @property
    def pixel_pitch(self):
        return self.propagations[0].pixel_pitch

    @property
    def is_passive(self):
        return all(p.is_passive for p in self.panels)

    def with_panels(self, panels):
        return OpticalStack(self.grid_side, panels, self.propagations)

    def then(self, other):
        """Stack equivalent to ``self`` followed by ``other``.

        The detector plane of ``self`` becomes the input plane of ``other``;
        an identity panel joins the two adjacent gaps.
        """
        if other.grid_side != self.grid_side:
            raise ShapeMismatch("stacks have different grid sides")
        panels = self.panels + (DiffractivePanel.identity(self.grid_side),) + other.panels
        return OpticalStack(self.grid_side, panels, self.propagations + other.propagations)

    def __repr__(self):
        gaps = ", ".join(f"{s.spacing:g}" for s in self.propagations)
        return f"OpticalStack(N={self.grid_side}, L={self.depth}, spacings=[{gaps}])"


def _forward_array(stack, u):
    u = _propagate_array(u, stack.propagations[0])
    for panel, spec in zip(stack.panels, stack.propagations[1:]):
        u = _propagate_array(u * panel.transmission, spec)
    return u


def forward(stack, field):
    """Field on the detector plane for input ``field``."""
    _check_grid(field, stack.grid_side)
    return field.with_data(_forward_array(stack, field.data))


@dataclass(eq=False)
class SystemMatrix:
    """Dense ``N^2 x N^2`` operator equivalent to a whole stack."""

    entries: np.ndarray
    grid_side: int
    _singular_values: np.ndarray = dc_field(default=None, repr=False)

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def sv_max(self):
        if self._singular_values is None:
            return None
        return float(self._singular_values[0])

    def apply(self, field):
        _check_grid(field, self.grid_side)
        return field.with_data((self.entries @ field.vector).reshape(field.data.shape))

    def __matmul__(self, other):
        if isinstance(other, SystemMatrix):
            return SystemMatrix(self.entries @ other.entries, self.grid_side)
        return self.entries @ other


def assemble_system_matrix(stack, cap=DEFAULT_ASSEMBLY_CAP, threads=1):
    """Collapse the stack into one matrix by probing unit basis fields.

    Column ``j`` is ``forward(stack, e_j)``. Columns are evaluated in fixed
    chunks, so the result is bitwise independent of ``threads``.
    """
    n = stack.grid_side
    dim = n * n
    if dim > cap:
        raise DimensionCap(f"N^2 = {dim} exceeds assembly cap {cap}")
    out = np.empty((dim, dim), dtype=np.complex128)
    starts = range(0, dim, _ASSEMBLY_CHUNK)

    def run(start):
        stop = min(start + _ASSEMBLY_CHUNK, dim)
        probes = np.zeros((stop - start, n, n), dtype=np.complex128)
        idx = np.arange(start, stop)
        probes[np.arange(stop - start), idx // n, idx % n] = 1.0
        out[:, start:stop] = _forward_array(stack, probes).reshape(stop - start, dim).T

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return SystemMatrix(out, n)


def singular_spectrum(matrix):
    """All singular values, descending. Caches the result on ``matrix``."""
    if matrix._singular_values is None:
        try:
            sv = np.linalg.svd(matrix.entries, compute_uv=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"SVD did not converge: {exc}") from exc
        matrix._singular_values = sv
    return matrix._singular_values.copy()


@dataclass(frozen=True)
class ContractionReport:
    is_contraction: bool
    sv_max: float
    sv_min: float
    near_unity: int
    tol: float

    def __bool__(self):
        return self.is_contraction


def is_contraction(matrix, tol=1e-9):
    sv = singular_spectrum(matrix)
    return ContractionReport(
        is_contraction=bool(sv[0] <= 1 + tol),
        sv_max=float(sv[0]),
        sv_min=float(sv[-1]),
        near_unity=int(np.sum(np.abs(sv - 1) <= 1e-6)),
        tol=tol,
    )


def quantize_phase(panel, levels):
    """Round phases to ``levels`` equally spaced values in ``[0, 2 pi)``."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    step = 2 * np.pi / levels
    b = np.mod(np.round(np.mod(panel.phase, 2 * np.pi) / step) * step, 2 * np.pi)
    return DiffractivePanel(panel.absorption, b)


def random_stack(
    rng,
    grid_side,
    depth,
    *,
    wavelength=0.75,
    pixel_pitch=0.4,
    spacing_range=(1.0, 60.0),
    max_absorption=1.0,
    evanescent_mode="decay",
    pad_factor=1,
):
    """Stack with uniform random phases, absorptions and spacings."""
    panels = []
    for _ in range(depth):
        a = rng.uniform(0.0, max_absorption, (grid_side, grid_side)) if max_absorption > 0 else np.zeros((grid_side, grid_side))
        b = rng.uniform(0.0, 2 * np.pi, (grid_side, grid_side))
        panels.append(DiffractivePanel(a, b))
    specs = [
        PropagationSpec(
            spacing=float(rng.uniform(*spacing_range)),
            wavelength=wavelength,
            pixel_pitch=pixel_pitch,
            evanescent_mode=evanescent_mode,
            pad_factor=pad_factor,
        )
        for _ in range(depth + 1)
    ]
    return OpticalStack(grid_side, panels, specs)
