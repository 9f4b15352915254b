import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgvh.errors import DimensionCap, InvalidField, ShapeMismatch
from cgvh.field import AmplitudeField, l2_norm, unitary_fft2
from cgvh.optics import (
    MAX_ABSORPTION,
    DiffractivePanel,
    OpticalStack,
    PropagationSpec,
    SystemMatrix,
    angular_frequencies,
    assemble_system_matrix,
    axial_wavenumber,
    beta_axial,
    forward,
    is_contraction,
    modulate,
    propagate,
    quantize_phase,
    random_stack,
    singular_spectrum,
    transfer_function,
)

from conftest import random_field

TINY = 1e-30


def power_iteration_norm(M, rng, iters=500):
    """Largest singular value by maximising ||Mx|| / ||x|| (power iteration on M^H M)."""
    x = rng.standard_normal(M.shape[1]) + 1j * rng.standard_normal(M.shape[1])
    for _ in range(iters):
        x = M.conj().T @ (M @ x)
        x /= np.linalg.norm(x)
    return np.linalg.norm(M @ x)


def identity_stack(n, depth=0, spacing=TINY, mode="decay"):
    spec = PropagationSpec(spacing=spacing, evanescent_mode=mode)
    return OpticalStack(n, [DiffractivePanel.identity(n)] * depth, [spec] * (depth + 1))


# ---------------------------------------------------------------- types


def test_panel_validation():
    with pytest.raises(InvalidField):
        DiffractivePanel(-np.ones((2, 2)), np.zeros((2, 2)))
    p = DiffractivePanel(np.full((2, 2), 100.0), np.zeros((2, 2)))
    assert np.all(p.absorption == MAX_ABSORPTION)
    gain = DiffractivePanel.unchecked(-np.ones((2, 2)), np.zeros((2, 2)))
    assert not gain.is_passive


def test_spec_validation():
    for bad in (dict(spacing=0), dict(wavelength=-1), dict(pixel_pitch=0), dict(evanescent_mode="x"), dict(pad_factor=0)):
        with pytest.raises(InvalidField):
            PropagationSpec(**bad)


def test_stack_validation():
    spec = PropagationSpec()
    with pytest.raises(InvalidField):
        OpticalStack(2, [DiffractivePanel.identity(2)], [spec])
    with pytest.raises(ShapeMismatch):
        OpticalStack(2, [DiffractivePanel.identity(3)], [spec, spec])
    with pytest.raises(InvalidField):
        OpticalStack(2, [], [spec, PropagationSpec(wavelength=0.5)][:1] + [PropagationSpec(wavelength=0.5)])


# ---------------------------------------------------------------- beta


def test_beta_examples():
    lam = 0.75
    k0 = 2 * np.pi / lam
    assert axial_wavenumber(0.0, 0.0, lam) == pytest.approx(k0)
    assert axial_wavenumber(k0, 0.0, lam) == 0
    assert axial_wavenumber(k0 / np.sqrt(2), k0 / np.sqrt(2), lam) == pytest.approx(0, abs=1e-6)
    b = axial_wavenumber(k0, k0, lam)
    assert b.real == 0
    assert b.imag == pytest.approx(k0, rel=1e-15)


def test_beta_axial_on_dft_bins():
    spec = PropagationSpec(wavelength=0.75, pixel_pitch=0.4)
    n = 8
    assert beta_axial((0, 0), spec, n) == pytest.approx(2 * np.pi / 0.75)
    f = angular_frequencies(n, 0.4)
    k0 = 2 * np.pi / 0.75
    expected = np.sqrt(k0**2 - f[3] ** 2 - f[1] ** 2 + 0j)
    assert beta_axial((1, 3), spec, n) == pytest.approx(expected)
    # Nyquist corner is evanescent at the default sampling
    corner = beta_axial((n // 2, n // 2), spec, n)
    assert corner.real == 0 and corner.imag > 0


def test_transfer_function_is_contractive():
    for mode in ("decay", "truncate"):
        h = transfer_function(PropagationSpec(evanescent_mode=mode), 16)
        assert np.max(np.abs(h)) <= 1 + 1e-15
    h = transfer_function(PropagationSpec(evanescent_mode="truncate"), 16)
    beta = axial_wavenumber(*np.meshgrid(angular_frequencies(16, 0.4), angular_frequencies(16, 0.4)), 0.75)
    assert np.all(h[beta.imag > 0] == 0)


# ---------------------------------------------------------------- propagate / modulate


def propagating_mask(spec, n):
    f = angular_frequencies(n * spec.pad_factor, spec.pixel_pitch)
    return axial_wavenumber(f[None, :], f[:, None], spec.wavelength).imag == 0


def test_zero_distance_is_identity(rng):
    f = random_field(rng, 8)
    for pad in (1, 2):
        out = propagate(f, PropagationSpec(spacing=TINY, pad_factor=pad))
        assert np.linalg.norm(out.data - f.data) <= 1e-10 * l2_norm(f)


def test_truncate_mode_drops_evanescent_content_at_any_distance(rng):
    spec = PropagationSpec(spacing=TINY, evanescent_mode="truncate")
    f = random_field(rng, 8)
    keep = propagating_mask(spec, 8)
    band_limited = f.with_data(np.fft.ifft2(np.fft.fft2(f.data, norm="ortho") * keep, norm="ortho"))
    out = propagate(f, spec)
    assert np.linalg.norm(out.data - band_limited.data) <= 1e-10 * l2_norm(f)


def test_band_limited_propagation_preserves_norm(rng):
    n = 16
    spec = PropagationSpec(spacing=37.0)
    spectrum = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * propagating_mask(spec, n)
    f = AmplitudeField(np.fft.ifft2(spectrum, norm="ortho"))
    assert abs(l2_norm(propagate(f, spec)) - l2_norm(f)) <= 1e-12 * l2_norm(f)


def test_plane_wave_picks_up_axial_phase():
    n, lam, d = 8, 0.75, 30.0
    f = AmplitudeField(np.full((n, n), 0.3 - 0.1j))
    out = propagate(f, PropagationSpec(spacing=d, wavelength=lam))
    expected = f.data * np.exp(1j * 2 * np.pi / lam * d)
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def test_propagation_matches_explicit_operator(rng):
    # P = F^-1 diag(H) F with F the explicit unitary DFT matrix
    n = 4
    spec = PropagationSpec(spacing=12.0)
    j = np.arange(n)
    F1 = np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)
    F = np.kron(F1, F1)
    P = F.conj().T @ np.diag(transfer_function(spec, n).ravel()) @ F
    f = random_field(rng, n)
    np.testing.assert_allclose(propagate(f, spec).vector, P @ f.vector, atol=1e-13)


def test_modulate_examples(rng):
    f = random_field(rng, 4)
    ident = DiffractivePanel.identity(4)
    np.testing.assert_array_equal(modulate(f, ident).data, f.data)
    a = np.zeros((4, 4))
    a[1, 2] = math.log(2)
    out = modulate(f, DiffractivePanel(a, np.zeros((4, 4))))
    assert out.data[1, 2] == pytest.approx(0.5 * f.data[1, 2], rel=1e-15)
    phase = DiffractivePanel.phase_only(rng.uniform(0, 2 * np.pi, (4, 4)))
    assert abs(l2_norm(modulate(f, phase)) - l2_norm(f)) <= 1e-13 * l2_norm(f)
    with pytest.raises(ShapeMismatch):
        modulate(f, DiffractivePanel.identity(3))


# ---------------------------------------------------------------- forward


def test_forward_degenerate_stack(rng):
    f = random_field(rng, 8)
    out = forward(identity_stack(8), f)
    assert np.linalg.norm(out.data - f.data) <= 1e-10 * l2_norm(f)
    zero = forward(random_stack(rng, 8, 3), AmplitudeField(np.zeros((8, 8))))
    assert np.all(zero.data == 0)


def test_forward_applies_layers_in_order(rng):
    stack = random_stack(rng, 4, 2)
    f = random_field(rng, 4)
    g = propagate(f, stack.propagations[0])
    for panel, spec in zip(stack.panels, stack.propagations[1:]):
        g = propagate(modulate(g, panel), spec)
    np.testing.assert_array_equal(forward(stack, f).data, g.data)
    with pytest.raises(ShapeMismatch):
        forward(stack, random_field(rng, 8))


def test_forward_linearity(rng):
    for pad in (1, 2):
        stack = random_stack(rng, 8, 3, pad_factor=pad)
        psi, phi = random_field(rng, 8), random_field(rng, 8)
        a, b = 0.7 - 1.3j, -2.1 + 0.4j
        lhs = forward(stack, psi.with_data(a * psi.data + b * phi.data)).data
        rhs = a * forward(stack, psi).data + b * forward(stack, phi).data
        assert np.linalg.norm(lhs - rhs) <= 1e-11 * np.linalg.norm(lhs)


# ---------------------------------------------------------------- system matrix


def test_assembly_examples(rng):
    M = assemble_system_matrix(identity_stack(4))
    np.testing.assert_allclose(M.entries, np.eye(16), atol=1e-10)
    b = rng.uniform(0, 2 * np.pi, (4, 4))
    stack = OpticalStack(4, [DiffractivePanel.phase_only(b)], [PropagationSpec(spacing=TINY)] * 2)
    np.testing.assert_allclose(assemble_system_matrix(stack).entries, np.diag(np.exp(1j * b.ravel())), atol=1e-10)


def test_assembly_reproduces_forward(rng):
    stack = random_stack(rng, 4, 2)
    M = assemble_system_matrix(stack)
    for _ in range(20):
        f = random_field(rng, 4)
        err = np.linalg.norm(M.apply(f).data - forward(stack, f).data)
        assert err <= 1e-10 * l2_norm(f)


def test_assembly_cap():
    with pytest.raises(DimensionCap):
        assemble_system_matrix(identity_stack(8), cap=63)
    with pytest.raises(DimensionCap):
        assemble_system_matrix(identity_stack(65))


def test_assembly_independent_of_threads(rng):
    stack = random_stack(rng, 16, 2)
    a = assemble_system_matrix(stack, threads=1).entries
    b = assemble_system_matrix(stack, threads=4).entries
    assert a.tobytes() == b.tobytes()


def test_composition_order(rng):
    a = random_stack(rng, 4, 2)
    b = random_stack(rng, 4, 1)
    Mab = assemble_system_matrix(a.then(b)).entries
    expected = assemble_system_matrix(b).entries @ assemble_system_matrix(a).entries
    assert np.linalg.norm(Mab - expected) <= 1e-10 * np.linalg.norm(expected)


# ---------------------------------------------------------------- singular values


def test_singular_spectrum_examples(rng):
    sv = singular_spectrum(SystemMatrix(np.eye(9, dtype=complex), 3))
    np.testing.assert_allclose(sv, 1.0)
    d = 0.5 * np.exp(1j * rng.uniform(0, 2 * np.pi, 9))
    np.testing.assert_allclose(singular_spectrum(SystemMatrix(np.diag(d), 3)), 0.5)


def test_singular_spectrum_matches_power_iteration(rng):
    for _ in range(3):
        M = assemble_system_matrix(random_stack(rng, 4, 2))
        sv = singular_spectrum(M)
        assert np.all(np.diff(sv) <= 0)
        assert M.sv_max == sv[0]
        assert sv[0] <= 1 + 1e-9
        assert power_iteration_norm(M.entries, rng) == pytest.approx(sv[0], rel=1e-6)


def test_contraction_examples():
    n = 8
    rep = is_contraction(SystemMatrix(np.eye(n * n, dtype=complex), n))
    assert rep and rep.sv_max == pytest.approx(1.0)
    # lossless, truncated evanescent modes: unit singular values on propagating bins only
    stack = identity_stack(n, depth=2, spacing=25.0, mode="truncate")
    rep = is_contraction(assemble_system_matrix(stack))
    assert rep.is_contraction
    assert rep.near_unity == int(np.sum(propagating_mask(stack.propagations[0], n)))
    sv = singular_spectrum(assemble_system_matrix(stack))
    assert np.all((np.abs(sv - 1) <= 1e-9) | (sv <= 1e-9))
    # uniformly absorbing panel bounds the operator norm by exp(-a)
    absorbing = OpticalStack(
        n, [DiffractivePanel(np.full((n, n), math.log(10)), np.zeros((n, n)))], [PropagationSpec()] * 2
    )
    rep = is_contraction(assemble_system_matrix(absorbing))
    assert rep.sv_max <= 0.1 + 1e-9


def test_gain_panel_breaks_contraction():
    n = 4
    gain = DiffractivePanel.unchecked(np.full((n, n), -0.2), np.zeros((n, n)))
    stack = OpticalStack(n, [gain], [PropagationSpec(spacing=TINY)] * 2)
    assert not is_contraction(assemble_system_matrix(stack))


def test_quantize_phase():
    p = DiffractivePanel.phase_only(np.array([[0.1, 1.7], [3.0, 6.2]]))
    q = quantize_phase(p, 4)
    np.testing.assert_allclose(q.phase, [[0, np.pi / 2], [np.pi, 0]], atol=1e-15)


# ---------------------------------------------------------------- properties


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.sampled_from([2, 4, 8]),
    depth=st.integers(0, 5),
    mode=st.sampled_from(["decay", "truncate"]),
    pad=st.sampled_from([1, 2]),
)
def test_layer_collapse_property(seed, n, depth, mode, pad):
    rng = np.random.default_rng(seed)
    stack = random_stack(rng, n, depth, evanescent_mode=mode, pad_factor=pad, max_absorption=2.0)
    M = assemble_system_matrix(stack)
    X = rng.standard_normal((5, n, n)) + 1j * rng.standard_normal((5, n, n))
    for x in X:
        f = AmplitudeField(x)
        assert np.linalg.norm(M.apply(f).data - forward(stack, f).data) <= 1e-10 * l2_norm(f)
    assert singular_spectrum(M)[0] <= 1 + 1e-9
