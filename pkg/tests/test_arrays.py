"""Array geometry, steering vectors, and subcarrier grid."""

import numpy as np
import pytest

from bisac.arrays import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    Direction,
    SubcarrierGrid,
    steering_derivatives,
    steering_vector,
    wavenumber,
    wavenumber_derivatives,
)

LAM = SPEED_OF_LIGHT / 28e9


def test_direction_unit_vector():
    d = Direction(np.pi / 2, np.pi / 2)
    assert np.allclose(d.unit_vector(), [0.0, 1.0, 0.0], atol=1e-15)
    d = Direction(0.0, 0.3)
    assert np.allclose(d.unit_vector(), [0.0, 0.0, 1.0], atol=1e-15)


def test_direction_validation():
    with pytest.raises(ValueError):
        Direction(-0.1, 0.0)
    with pytest.raises(ValueError):
        Direction(0.5, 4.0)


def test_direction_from_vector_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.standard_normal(3)
        d = Direction.from_vector(v)
        assert np.allclose(d.unit_vector(), v / np.linalg.norm(v), atol=1e-12)


def test_wavenumber_norm():
    k = wavenumber(Direction(1.1, -0.4), LAM)
    assert np.isclose(np.linalg.norm(k), 2 * np.pi / LAM, rtol=1e-12)


def test_wavenumber_derivatives_match_finite_differences():
    th, ph, h = 1.0, 0.7, 1e-7
    dk_dt, dk_dp = wavenumber_derivatives(Direction(th, ph), LAM)
    fd_t = (wavenumber(Direction(th + h, ph), LAM) - wavenumber(Direction(th - h, ph), LAM)) / (2 * h)
    fd_p = (wavenumber(Direction(th, ph + h), LAM) - wavenumber(Direction(th, ph - h), LAM)) / (2 * h)
    assert np.allclose(dk_dt, fd_t, atol=1e-5)
    assert np.allclose(dk_dp, fd_p, atol=1e-5)


def test_uspa_centered_and_spaced():
    g = ArrayGeometry.uspa(36, LAM)
    assert g.num_elements == 36
    assert np.abs(g.coords.sum(axis=1)).max() < 1e-12
    # neighboring elements along each grid axis sit half a wavelength apart
    xs = np.unique(np.round(g.coords[0], 12))
    assert np.allclose(np.diff(xs), LAM / 2)
    assert np.allclose(g.coords[1], 0.0)  # xz plane


def test_uspa_rejects_non_square():
    with pytest.raises(ValueError):
        ArrayGeometry.uspa(10, LAM)


def test_geometry_rejects_uncentered():
    coords = np.zeros((3, 4))
    coords[0] = [0.0, 1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        ArrayGeometry(coords, LAM)


def test_steering_vector_unit_norm():
    g = ArrayGeometry.uspa(16, LAM)
    a = steering_vector(g, Direction(1.2, 0.5))
    assert np.isclose(np.linalg.norm(a), 1.0, rtol=1e-12)
    assert np.allclose(np.abs(a), 1.0 / 4.0, rtol=1e-12)


def test_steering_derivative_orthogonality_centered():
    # a^H a_dot = sum of phase slopes / N = 0 for a centered array
    g = ArrayGeometry.uspa(25, LAM)
    a, ad_t, ad_p = steering_derivatives(g, Direction(0.9, -1.3))
    assert abs(np.vdot(a, ad_t)) < 1e-12
    assert abs(np.vdot(a, ad_p)) < 1e-12


def test_steering_derivative_matches_finite_differences():
    # true derivative of the steering vector is -j * a_dot
    g = ArrayGeometry.uspa(9, LAM)
    th, ph, h = 1.1, 0.4, 1e-7
    a, ad_t, ad_p = steering_derivatives(g, Direction(th, ph))
    fd_t = (steering_vector(g, Direction(th + h, ph)) - steering_vector(g, Direction(th - h, ph))) / (2 * h)
    fd_p = (steering_vector(g, Direction(th, ph + h)) - steering_vector(g, Direction(th, ph - h))) / (2 * h)
    assert np.allclose(-1j * ad_t, fd_t, atol=1e-6)
    assert np.allclose(-1j * ad_p, fd_p, atol=1e-6)


def test_rotated_geometry_preserves_moment_trace():
    g = ArrayGeometry.uspa(16, LAM)
    alpha = 0.7
    R = np.array(
        [
            [np.cos(alpha), 0.0, np.sin(alpha)],
            [0.0, 1.0, 0.0],
            [-np.sin(alpha), 0.0, np.cos(alpha)],
        ]
    )
    g2 = g.rotated(R)
    assert np.isclose(g2.moments.sum(), g.moments.sum(), rtol=1e-12)


def test_subcarrier_grid_symmetry():
    grid = SubcarrierGrid(128, 240e3, 28e9)
    f = grid.baseband_frequencies
    assert np.isclose(f.sum(), 0.0, atol=1e-6)
    assert np.allclose(f, -f[::-1], atol=1e-6)
    assert np.isclose(grid.bandwidth, 128 * 240e3)


def test_sum_freq_squared_exact():
    grid = SubcarrierGrid(16, 1.92e6, 28e9)
    f = grid.baseband_frequencies
    assert np.isclose(grid.sum_freq_squared, (f ** 2).sum(), rtol=1e-12)
    # equals B^2 (K^2 - 1) / (12 K)
    K, B = 16, grid.bandwidth
    assert np.isclose(grid.sum_freq_squared, B ** 2 * (K ** 2 - 1) / (12 * K), rtol=1e-12)


def test_grid_validation():
    with pytest.raises(ValueError):
        SubcarrierGrid(0, 240e3, 28e9)
    with pytest.raises(ValueError):
        SubcarrierGrid(4, -1.0, 28e9)
