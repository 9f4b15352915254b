import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgvh.errors import InvalidField, ShapeMismatch, ZeroField
from cgvh.field import (
    AmplitudeField,
    IntensityImage,
    centered,
    intensity,
    l2_norm,
    normalize,
    tvd_component,
    tvd_intensity,
    unitary_fft2,
    unitary_ifft2,
)

from conftest import random_field


def dft2_by_summation(x):
    """Unitary 2-D DFT evaluated term by term."""
    n = x.shape[0]
    out = np.zeros_like(x, dtype=complex)
    j = np.arange(n)
    for k1 in range(n):
        for k2 in range(n):
            w = np.exp(-2j * np.pi * (np.outer(j, np.ones(n)) * k1 + np.outer(np.ones(n), j) * k2) / n)
            out[k1, k2] = np.sum(x * w) / n
    return out


def test_construction_validates():
    with pytest.raises(InvalidField):
        AmplitudeField([1, 2, 3])
    with pytest.raises(InvalidField):
        AmplitudeField([[1, np.nan], [0, 0]])
    with pytest.raises(InvalidField):
        AmplitudeField(np.ones((2, 3)))
    with pytest.raises(InvalidField):
        AmplitudeField(np.ones(4), grid_side=3)
    with pytest.raises(InvalidField):
        IntensityImage([1.0, -1.0, 0.0, 0.0])
    f = AmplitudeField([1, 2, 3, 4])
    assert f.grid_side == 2
    assert f.data[1, 0] == 3
    with pytest.raises(ValueError):
        f.data[0, 0] = 5


def test_l2_norm_examples():
    assert l2_norm(AmplitudeField(np.zeros(4))) == 0
    assert l2_norm(AmplitudeField([1, 0, 0, 0])) == 1
    assert l2_norm(AmplitudeField([1, 1j, -1, -1j])) == pytest.approx(2.0, abs=1e-15)


def test_normalize_examples():
    np.testing.assert_array_equal(normalize(AmplitudeField([2, 0, 0, 0])).vector, [1, 0, 0, 0])
    np.testing.assert_allclose(normalize(AmplitudeField([1, 1, 1, 1])).vector, [0.5] * 4, rtol=0, atol=1e-15)
    unit = AmplitudeField([0.6, 0.8j, 0, 0])
    np.testing.assert_allclose(normalize(unit).vector, unit.vector, atol=1e-15)
    with pytest.raises(ZeroField):
        normalize(AmplitudeField(np.zeros(9)))


def test_normalize_unit_norm(rng):
    for n in (1, 3, 8):
        f = random_field(rng, n)
        g = normalize(f)
        assert abs(l2_norm(g) - 1) <= 1e-12
        np.testing.assert_allclose(g.data * l2_norm(f), f.data, rtol=1e-13)


def test_fft_dc_component():
    n = 4
    spec = unitary_fft2(AmplitudeField(np.full((n, n), 1 / n)))
    expected = np.zeros((n, n))
    expected[0, 0] = 1
    np.testing.assert_allclose(spec.data, expected, atol=1e-15)
    back = unitary_ifft2(AmplitudeField(expected))
    np.testing.assert_allclose(back.data, np.full((n, n), 1 / n), atol=1e-15)


def test_fft_matches_direct_summation(rng):
    for n in (1, 2, 5, 6):
        f = random_field(rng, n)
        direct = dft2_by_summation(f.data)
        np.testing.assert_allclose(unitary_fft2(f).data, direct, atol=1e-12)
        assert abs(np.linalg.norm(direct) - l2_norm(f)) <= 1e-12 * l2_norm(f)


def test_fft_round_trips(rng):
    f = random_field(rng, 8)
    np.testing.assert_allclose(unitary_ifft2(unitary_fft2(f)).data, f.data, rtol=0, atol=1e-13 * l2_norm(f))
    np.testing.assert_allclose(unitary_fft2(unitary_ifft2(f)).data, f.data, rtol=0, atol=1e-13 * l2_norm(f))
    assert abs(l2_norm(unitary_ifft2(f)) - l2_norm(f)) <= 1e-13 * l2_norm(f)


def test_centered_view_puts_dc_in_middle():
    n = 4
    spec = unitary_fft2(AmplitudeField(np.full((n, n), 1 / n)))
    c = centered(spec)
    assert abs(c[n // 2, n // 2] - 1) < 1e-15


def test_intensity_examples():
    np.testing.assert_array_equal(intensity(AmplitudeField(np.zeros(4))).vector, np.zeros(4))
    img = intensity(AmplitudeField([1 + 1j, 0, 0, 0]))
    assert img.vector[0] == 2.0
    assert np.all(img.vector[1:] == 0)


def test_tvd_component_examples():
    psi = AmplitudeField([1, 0, 0, 0])
    assert tvd_component(psi, psi) == 0
    assert tvd_component(psi, AmplitudeField(np.zeros(4))) == 1
    # (1, 0) against (0, i): real part of pixel 0 and imaginary part of pixel 1
    assert tvd_component(AmplitudeField([1, 0, 0, 0]), AmplitudeField([0, 1j, 0, 0])) == 2
    with pytest.raises(ShapeMismatch):
        tvd_component(psi, AmplitudeField(np.zeros(9)))


def test_tvd_component_differs_from_intensity_tvd():
    # same intensity, different split between real and imaginary parts
    psi = AmplitudeField([1, 0, 0, 0])
    phi = AmplitudeField([1j, 0, 0, 0])
    assert tvd_intensity(intensity(psi), intensity(phi)) == 0
    assert tvd_component(psi, phi) == 2


def test_tvd_intensity_examples():
    a = IntensityImage([1.0, 0, 0, 0])
    z = IntensityImage(np.zeros(4))
    assert tvd_intensity(a, a) == 0
    assert tvd_intensity(a, z) == 1
    with pytest.raises(ShapeMismatch):
        tvd_intensity(a, IntensityImage(np.zeros(9)))


seeds = st.integers(0, 2**32 - 1)
sides = st.sampled_from([1, 2, 3, 4, 8, 16])


@settings(max_examples=60, deadline=None)
@given(seed=seeds, n=sides, scale=st.floats(1e-6, 1e6))
def test_parseval_and_round_trip(seed, n, scale):
    f = random_field(np.random.default_rng(seed), n)
    f = f.with_data(f.data * scale)
    norm = l2_norm(f)
    spec = unitary_fft2(f)
    assert abs(l2_norm(spec) - norm) <= 1e-12 * norm
    assert np.linalg.norm(unitary_ifft2(spec).data - f.data) <= 1e-12 * norm


@settings(max_examples=60, deadline=None)
@given(seed=seeds, n=sides)
def test_tvd_symmetry_and_ordering(seed, n):
    rng = np.random.default_rng(seed)
    psi, phi = random_field(rng, n), random_field(rng, n)
    t = tvd_component(psi, phi)
    assert t == tvd_component(phi, psi)
    assert t >= 0
    ti = tvd_intensity(intensity(psi), intensity(phi))
    assert ti - t <= 1e-12 * max(t, 1.0)


def test_tvd_zero_iff_component_moduli_equal(rng):
    psi = random_field(rng, 4)
    # flip signs of real and imaginary parts independently
    signs_r = rng.choice([-1, 1], (4, 4))
    signs_i = rng.choice([-1, 1], (4, 4))
    phi = AmplitudeField(signs_r * psi.data.real + 1j * signs_i * psi.data.imag)
    assert tvd_component(psi, phi) == 0
    bumped = phi.data.copy()
    bumped[0, 0] += 0.1
    assert tvd_component(psi, AmplitudeField(bumped)) > 0


@settings(max_examples=40, deadline=None)
@given(seed=seeds, n=sides, theta=st.floats(0, 2 * np.pi))
def test_intensity_global_phase_invariance(seed, n, theta):
    f = random_field(np.random.default_rng(seed), n)
    a = intensity(f).data
    b = intensity(f.with_data(np.exp(1j * theta) * f.data)).data
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12 * a.max())
