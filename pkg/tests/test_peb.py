"""Fisher information, CRBs, and the position error bound chain."""

import numpy as np
import pytest

from bisac.arrays import SPEED_OF_LIGHT, ArrayGeometry, Direction, SubcarrierGrid
from bisac.channel import PathParams, path_parameters
from bisac.peb import (
    ad_ratio,
    beamforming_gains,
    crb_toa_equal_gain,
    crbs,
    efim,
    efim_aoa_toa,
    fim_bundle,
    fim_submatrix,
    geometric_coeffs,
    kappa_threshold,
    position_from_aoa_toa,
    position_jacobian,
    speb,
)
from bisac.arrays import steering_derivatives, steering_vector

from oracles import (
    equal_gain_beamformer,
    finite_difference_fim,
    finite_difference_jacobian,
    random_instance,
    section_six_scene,
)


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------

def test_fim_matches_finite_difference_oracle():
    rng = np.random.default_rng(42)
    for trial in range(6):
        n_tx = 1 if trial == 5 else 4
        path, scene, grid, tx, rx, F = random_instance(
            rng, n_tx=n_tx, n_rx=4, num_subcarriers=3, num_streams=2
        )
        J = fim_submatrix(path, scene, grid, tx, rx, F)
        J_fd = finite_difference_fim(path, scene, grid, tx, rx, F)
        err = np.linalg.norm(J - J_fd) / np.linalg.norm(J_fd)
        assert err < 1e-6, f"trial {trial}: rel Frobenius error {err:.2e}"


def test_fim_symmetric_psd():
    rng = np.random.default_rng(7)
    path, scene, grid, tx, rx, F = random_instance(rng)
    J = fim_submatrix(path, scene, grid, tx, rx, F)
    assert np.allclose(J, J.T, atol=0.0)
    eigs = np.linalg.eigvalsh(J)
    assert eigs.min() > -1e-10 * np.linalg.norm(J)


def test_fim_gain_quadratic_scaling():
    # doubling |beta| quadruples every gain-bearing entry
    rng = np.random.default_rng(8)
    path, scene, grid, tx, rx, F = random_instance(rng)
    J1 = fim_submatrix(path, scene, grid, tx, rx, F)
    path2 = PathParams(path.arrival, path.departure, path.delay, 2.0 * path.gain)
    J2 = fim_submatrix(path2, scene, grid, tx, rx, F)
    # beta-linear rows/cols scale by 2, |beta|^2 blocks by 4, constant block by 1
    assert np.isclose(J2[0, 0], 4.0 * J1[0, 0], rtol=1e-12)
    assert np.isclose(J2[2, 5], 2.0 * J1[2, 5], rtol=1e-12)
    assert np.isclose(J2[5, 5], J1[5, 5], rtol=1e-12)


def test_beamforming_gains_match_direct_sum():
    rng = np.random.default_rng(9)
    _, _, grid, tx, _, F = random_instance(rng)
    a = steering_vector(tx, Direction(1.0, 0.2))
    G = beamforming_gains(F, a)
    for k in range(grid.num_subcarriers):
        assert np.isclose(G[k], np.linalg.norm(F[k].conj().T @ a) ** 2, rtol=1e-12)


# ---------------------------------------------------------------------------
# EFIM
# ---------------------------------------------------------------------------

def test_efim_schur_against_inverse_block():
    # inv(EFIM) equals the kept block of the full inverse
    rng = np.random.default_rng(11)
    A = rng.standard_normal((7, 7))
    fim = A @ A.T + 7 * np.eye(7)
    keep = (0, 1, 4)
    je = efim(fim, keep)
    full_inv = np.linalg.inv(fim)
    assert np.allclose(np.linalg.inv(je), full_inv[np.ix_(keep, keep)], atol=1e-10)


def test_efim_schur_keeps_aoa_block_for_centered_arrays():
    # centered arrays null the AOA-to-nuisance coupling, so the Schur
    # reduction leaves the angle block untouched and only shrinks the
    # delay information; the diagonal shortcut then differs solely by the
    # theta-phi cross term and that delay shrinkage
    scene, _ = section_six_scene()
    grid = SubcarrierGrid(16, 1.92e6, 28e9)
    tx = ArrayGeometry.uspa(64, grid.wavelength)
    rx = ArrayGeometry.uspa(64, grid.wavelength)
    rng = np.random.default_rng(13)
    F = rng.standard_normal((16, 64, 2)) + 1j * rng.standard_normal((16, 64, 2))
    path = path_parameters(scene, 1, seed=0)
    J = fim_submatrix(path, scene, grid, tx, rx, F)
    s = efim_aoa_toa(J, "schur")
    assert np.isclose(s[0, 0], J[0, 0], rtol=1e-12)
    assert np.isclose(s[1, 1], J[1, 1], rtol=1e-12)
    assert np.isclose(s[0, 1], J[0, 1], rtol=1e-12)
    assert abs(s[0, 2]) < 1e-9 * J[4, 4] and abs(s[1, 2]) < 1e-9 * J[4, 4]
    assert s[2, 2] <= J[4, 4] * (1.0 + 1e-12)
    # in-sector arrival: the cross term is a small fraction of the diagonal
    assert abs(J[0, 1]) / np.sqrt(J[0, 0] * J[1, 1]) < 0.1


def test_efim_requires_7x7():
    with pytest.raises(ValueError):
        efim_aoa_toa(np.eye(3))


# ---------------------------------------------------------------------------
# AOA information structure
# ---------------------------------------------------------------------------

def test_ad_ratio_closed_form_equals_raw_products():
    grid = SubcarrierGrid(4, 240e3, 28e9)
    for n in (16, 64):
        for plane in ("xz", "xy"):
            g = ArrayGeometry.uspa(n, grid.wavelength, plane=plane)
            d = Direction(np.pi / 3, np.pi / 5)
            b, bd_t, bd_p = steering_derivatives(g, d)
            num = np.real(np.vdot(bd_t, bd_p))
            den = np.real(np.vdot(bd_t, bd_t)) + np.real(np.vdot(bd_p, bd_p))
            raw = 2.0 * num / den
            assert abs(ad_ratio(g, d) - raw) < 1e-10


def test_ad_ratio_vanishes_for_xy_uspa():
    # square xy-plane array has sum x^2 = sum y^2, so the cross term cancels
    g = ArrayGeometry.uspa(36, 0.0107, plane="xy")
    assert abs(ad_ratio(g, Direction(np.pi / 3, np.pi / 5))) < 1e-12


def test_ad_ratio_independent_of_element_count_for_xz_uspa():
    # the moment sums cancel in the ratio: delta^2 is the same for any N
    g16, g64, g256 = (ArrayGeometry.uspa(n, 0.0107) for n in (16, 64, 256))
    d = Direction(np.pi / 3, np.pi / 5)
    v16, v64, v256 = ad_ratio(g16, d), ad_ratio(g64, d), ad_ratio(g256, d)
    assert np.isclose(v16, v64, rtol=1e-12)
    assert np.isclose(v64, v256, rtol=1e-12)
    # small in the operating sector because cos(theta) is small near broadside
    assert abs(ad_ratio(g64, Direction(1.65, 1.03))) < 0.1


# ---------------------------------------------------------------------------
# CRBs
# ---------------------------------------------------------------------------

def test_crbs_reciprocal_and_sentinel():
    je = np.diag([4.0, 0.25, 0.0])
    out = crbs(je)
    assert np.isclose(out[0], 0.25)
    assert np.isclose(out[1], 4.0)
    assert np.isinf(out[2])


def test_crb_toa_equal_gain_matches_general_path():
    # identical F on every subcarrier: the general sum reduces to the closed form
    rng = np.random.default_rng(17)
    path, scene, grid, tx, rx, F = random_instance(rng, num_subcarriers=4)
    F[:] = F[0]
    bundle = fim_bundle(path, scene, grid, tx, rx, F)
    G = bundle.gains[0]
    crb_tau_general = crbs(efim_aoa_toa(bundle.fim, "diagonal"))[2]
    b2 = abs(path.gain) ** 2
    closed = crb_toa_equal_gain(bundle.snr_factor, b2, grid, G)
    assert abs(closed - crb_tau_general) / crb_tau_general < 1e-9
    # large-K form differs by exactly K^2 / (K^2 - 1)
    large = crb_toa_equal_gain(bundle.snr_factor, b2, grid, G, large_k=True)
    K = grid.num_subcarriers
    assert abs(large / closed - (K * K - 1) / (K * K)) < 1e-9
    assert abs(large - closed) / closed < 2.0 / K ** 2


# ---------------------------------------------------------------------------
# position recovery
# ---------------------------------------------------------------------------

def _forward(p, baseline):
    p = np.asarray(p, dtype=float)
    d1 = np.linalg.norm(p)
    d0 = np.linalg.norm(p - np.array([0.0, baseline, 0.0]))
    return Direction.from_vector(p), (d0 + d1) / SPEED_OF_LIGHT


def test_position_on_axis_above_receiver():
    p = np.array([0.0, 0.0, 100.0])
    arr, tau = _forward(p, 200.0)
    rec = position_from_aoa_toa(arr, tau, 200.0)
    assert np.allclose(rec, p, atol=1e-9)


def test_position_roundtrip_section_six_target():
    p = np.array([60.0, 100.0, -10.0])
    arr, tau = _forward(p, 200.0)
    rec = position_from_aoa_toa(arr, tau, 200.0)
    assert np.linalg.norm(rec - p) < 1e-9


def test_position_roundtrip_random():
    rng = np.random.default_rng(23)
    for _ in range(50):
        p = np.array([rng.uniform(-150, 150), rng.uniform(10, 190), rng.uniform(-40, 40)])
        arr, tau = _forward(p, 200.0)
        rec = position_from_aoa_toa(arr, tau, 200.0)
        assert np.linalg.norm(rec - p) < 1e-8 * max(1.0, np.linalg.norm(p))


def test_position_infeasible_delay():
    with pytest.raises(ValueError, match="delay"):
        position_from_aoa_toa(Direction(1.0, 1.0), 100.0 / SPEED_OF_LIGHT, 200.0)


def test_position_baseline_singularity():
    # target on the segment between the stations: c tau -> D, direction +y
    arr = Direction(np.pi / 2, np.pi / 2)
    tau = 200.0 * (1.0 + 1e-15) / SPEED_OF_LIGHT
    with pytest.raises(ValueError, match="singularity"):
        position_from_aoa_toa(arr, tau, 200.0)


def test_position_jacobian_matches_finite_differences():
    rng = np.random.default_rng(29)
    for _ in range(50):
        p = np.array([rng.uniform(-120, 120), rng.uniform(30, 180), rng.uniform(-40, 40)])
        if abs(p[0]) < 5.0:
            p[0] = 5.0  # keep clear of the singular ridge for FD stability
        arr, tau = _forward(p, 200.0)
        J = position_jacobian(arr, tau, 200.0)

        def fn(x):
            return position_from_aoa_toa(Direction(x[0], x[1]), x[2], 200.0)

        J_fd = finite_difference_jacobian(
            fn, [arr.theta, arr.phi, tau], [1e-7, 1e-7, 1e-13]
        )
        assert np.abs(J - J_fd).max() / np.abs(J).max() < 1e-5


def test_geometric_coeffs_match_jacobian_columns():
    rng = np.random.default_rng(31)
    for _ in range(20):
        p = np.array([rng.uniform(-120, 120), rng.uniform(30, 180), rng.uniform(-40, 40)])
        arr, tau = _forward(p, 200.0)
        J = position_jacobian(arr, tau, 200.0)
        g = geometric_coeffs(arr, tau, 200.0)
        scale = 4.0 * g.omega ** 4
        assert np.isclose(g.o / scale, J[:, 0] @ J[:, 0], rtol=1e-8)
        assert np.isclose(g.p / scale, J[:, 1] @ J[:, 1], rtol=1e-8)
        assert np.isclose(g.q / scale, J[:, 2] @ J[:, 2], rtol=1e-8)
        assert np.isclose(g.upsilon ** 2, g.q, rtol=1e-12)


# ---------------------------------------------------------------------------
# SPEB and kappa
# ---------------------------------------------------------------------------

def _speb_instance(rng, n_tx=16, n_rx=16, K=8):
    scene, _ = section_six_scene()
    grid = SubcarrierGrid(K, 1.92e6, 28e9)
    tx = ArrayGeometry.uspa(n_tx, grid.wavelength)
    rx = ArrayGeometry.uspa(n_rx, grid.wavelength)
    p = np.array([rng.uniform(-120, 120), rng.uniform(30, 180), rng.uniform(-40, 40)])
    arr, tau = _forward(p, scene.baseline)
    d1 = np.linalg.norm(p)
    d0 = np.linalg.norm(p - scene.tx_center)
    dep = Direction.from_vector(p - scene.tx_center)
    gain = np.sqrt(
        scene.wavelength ** 2 * scene.rcs / ((4 * np.pi) ** 3 * (d0 * d1) ** 2)
    ) * np.exp(1j * rng.uniform(0, 2 * np.pi))
    path = PathParams(arr, dep, tau, complex(gain))
    F = rng.standard_normal((K, n_tx, 2)) + 1j * rng.standard_normal((K, n_tx, 2))
    return path, scene, grid, tx, rx, F


def test_speb_two_paths_agree():
    rng = np.random.default_rng(37)
    for _ in range(30):
        path, scene, grid, tx, rx, F = _speb_instance(rng)
        s1, p1 = speb(path, scene, grid, tx, rx, F, method="closed-form")
        s2, p2 = speb(path, scene, grid, tx, rx, F, method="trace")
        assert abs(s1 - s2) / s2 < 1e-8
        assert np.isclose(p1, np.sqrt(s1))


def test_speb_zero_gain_gives_inf():
    rng = np.random.default_rng(41)
    path, scene, grid, tx, rx, F = _speb_instance(rng)
    s, p = speb(path, scene, grid, tx, rx, np.zeros_like(F))
    assert np.isinf(s) and np.isinf(p)


def test_speb_rotation_about_baseline_invariant():
    # rotating scene and arrays about the station axis leaves the bound
    # unchanged exactly on the full-EFIM path. The diagonal shortcut drops
    # the theta-phi cross information, which grows as the rotated arrival
    # leaves the near-broadside sector, so it is only frame-stable to within
    # that cross term (tight in the operating sector, loose far outside it)
    rng = np.random.default_rng(43)
    path, scene, grid, tx, rx, F = _speb_instance(rng)
    s_full, _ = speb(path, scene, grid, tx, rx, F, method="trace-full")
    s_diag, _ = speb(path, scene, grid, tx, rx, F, method="closed-form")
    for alpha in (0.3, -0.8):
        R = np.array(
            [
                [np.cos(alpha), 0.0, np.sin(alpha)],
                [0.0, 1.0, 0.0],
                [-np.sin(alpha), 0.0, np.cos(alpha)],
            ]
        )
        p_old = position_from_aoa_toa(path.arrival, path.delay, scene.baseline)
        p_new = R @ p_old
        t_new = R @ (p_old - scene.tx_center)
        path_r = PathParams(
            Direction.from_vector(p_new),
            Direction.from_vector(t_new),
            path.delay,
            path.gain,
        )
        s_full_r, _ = speb(path_r, scene, grid, tx.rotated(R), rx.rotated(R), F,
                           method="trace-full")
        s_diag_r, _ = speb(path_r, scene, grid, tx.rotated(R), rx.rotated(R), F,
                           method="closed-form")
        assert abs(s_full_r - s_full) / s_full < 1e-8
        assert abs(s_diag_r - s_diag) / s_diag < 0.60


def test_kappa_quarter_scaling():
    scene, grid = section_six_scene()
    tx = ArrayGeometry.uspa(36, grid.wavelength)
    rx = ArrayGeometry.uspa(36, grid.wavelength)
    path = path_parameters(scene, 1, seed=0)
    k1 = kappa_threshold(path, scene, grid, tx, rx, 2, 0.1)
    k2 = kappa_threshold(path, scene, grid, tx, rx, 2, 0.2)
    assert np.isclose(k2, k1 / 4.0, rtol=1e-12)


def test_kappa_roundtrip_exact_mode():
    # a beamformer with gain kappa on every subcarrier attains PEB = Gamma
    scene, _ = section_six_scene()
    grid = SubcarrierGrid(16, 1.92e6, 28e9)
    tx = ArrayGeometry.uspa(36, grid.wavelength)
    rx = ArrayGeometry.uspa(36, grid.wavelength)
    path = path_parameters(scene, 1, seed=0)
    for target in (0.1, 0.5):
        kap = kappa_threshold(path, scene, grid, tx, rx, 2, target)
        a = steering_vector(tx, path.departure)
        F = equal_gain_beamformer(a, kap, grid.num_subcarriers, 2)
        _, peb = speb(path, scene, grid, tx, rx, F)
        assert abs(peb - target) / target < 1e-6


def test_kappa_roundtrip_large_k_mode():
    scene, _ = section_six_scene()
    grid = SubcarrierGrid(16, 1.92e6, 28e9)
    tx = ArrayGeometry.uspa(36, grid.wavelength)
    rx = ArrayGeometry.uspa(36, grid.wavelength)
    path = path_parameters(scene, 1, seed=0)
    kap = kappa_threshold(path, scene, grid, tx, rx, 2, 0.1, large_k=True)
    a = steering_vector(tx, path.departure)
    F = equal_gain_beamformer(a, kap, grid.num_subcarriers, 2)
    _, peb = speb(path, scene, grid, tx, rx, F)
    K = grid.num_subcarriers
    assert abs(peb - 0.1) / 0.1 < 2.0 / K ** 2


def test_kappa_regression_snapshot():
    # frozen on first computation; guards the full constant chain
    # (link budget, gain model, geometry weights, TOA term)
    scene, grid = section_six_scene()
    tx = ArrayGeometry.uspa(100, grid.wavelength)
    rx = ArrayGeometry.uspa(100, grid.wavelength)
    path = path_parameters(scene, 1, seed=0)
    kap = kappa_threshold(path, scene, grid, tx, rx, 2, 0.1)
    assert np.isclose(kap, 0.18824707940603477, rtol=1e-9)


def test_kappa_infinite_when_geometry_singular():
    scene, grid = section_six_scene()
    tx = ArrayGeometry.uspa(36, grid.wavelength)
    rx = ArrayGeometry.uspa(36, grid.wavelength)
    # fabricate a path on the station segment: arrival +y, c tau = D
    path = PathParams(
        Direction(np.pi / 2, np.pi / 2),
        Direction(np.pi / 2, -np.pi / 2),
        scene.baseline / SPEED_OF_LIGHT * (1.0 + 1e-15),
        1e-6 + 0j,
    )
    assert np.isinf(kappa_threshold(path, scene, grid, tx, rx, 2, 0.1))
