"""Communication and sensing channels for the bistatic OFDM setup.

One base station transmits; a user equipment receives the data link while a
second, spatially separated base station listens to the target echoes. Both
channels share the transmit array and the subcarrier grid.

The communication channel is a clustered (Saleh-Valenzuela style) multipath
model. The sensing channel is a sum of specular paths: the direct
transmitter-receiver path plus one path per scatterer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    Direction,
    SubcarrierGrid,
    steering_vector,
)

__all__ = [
    "Ray",
    "Cluster",
    "CommChannelParams",
    "CommChannel",
    "comm_channel_realize",
    "optimal_digital_beamformer",
    "spectral_efficiency",
    "HybridBeamformer",
    "SensingScene",
    "PathParams",
    "sensing_path_gain",
    "sensing_channel",
]


# ---------------------------------------------------------------------------
# communication channel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ray:
    """Single ray inside a cluster."""

    gain: complex
    departure: Direction
    arrival: Direction


@dataclass(frozen=True)
class Cluster:
    """Scattering cluster: common delay and power, several rays."""

    delay: float
    power: float
    rays: tuple


@dataclass(frozen=True)
class CommChannelParams:
    """Generation parameters for the clustered multipath channel.

    Args:
        num_clusters: number of clusters N_cl.
        num_rays: rays per cluster N_ray.
        delay_max: cluster delays drawn uniformly from [0, delay_max] seconds.
        angle_spread: Laplacian ray offset scale around the cluster center,
            radians.
        theta_range: sector for cluster-center polar angles, radians.
        phi_range: sector for cluster-center azimuths, radians.
    """

    num_clusters: int = 5
    num_rays: int = 10
    delay_max: float = 200e-9
    angle_spread: float = np.deg2rad(10.0)
    theta_range: tuple = (np.deg2rad(60.0), np.deg2rad(120.0))
    phi_range: tuple = (np.deg2rad(-60.0), np.deg2rad(60.0))

    def __post_init__(self):
        if self.num_clusters < 1 or self.num_rays < 1:
            raise ValueError("need at least one cluster and one ray")
        if self.delay_max < 0.0 or self.angle_spread < 0.0:
            raise ValueError("delay_max and angle_spread must be nonnegative")


@dataclass(frozen=True)
class CommChannel:
    """Realized communication channel.

    Attributes:
        clusters: realized cluster/ray geometry and gains.
        normalization: prefactor gamma_0.
        matrices: (K, N_rx, N_tx) per-subcarrier channel matrices.
    """

    clusters: tuple
    normalization: float
    matrices: np.ndarray

    @property
    def rays(self):
        """All rays flattened in cluster-major order."""
        return [ray for cl in self.clusters for ray in cl.rays]

    def ray_powers(self) -> np.ndarray:
        """Average power weight of each ray (cluster power, |gain|^2 scaled)."""
        return np.array(
            [cl.power * abs(ray.gain) ** 2 for cl in self.clusters for ray in cl.rays]
        )


def _clip_direction(theta: float, phi: float) -> Direction:
    theta = float(np.clip(theta, 1e-9, np.pi - 1e-9))
    phi = float((phi + np.pi) % (2.0 * np.pi) - np.pi)
    if phi <= -np.pi:
        phi = np.pi
    return Direction(theta, phi)


def comm_channel_realize(
    params: CommChannelParams,
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    seed: int,
) -> CommChannel:
    """Draw one realization of the clustered channel.

    H_k = gamma_0 * sum_i sum_j alpha_ij b(arr_ij) a(dep_ij)^H e^{-j 2 pi f_k tau_i}

    with alpha_ij ~ CN(0, sigma_i^2), equal cluster powers
    sigma_i^2 = gamma_0 / N_cl, and gamma_0 = (N_tx N_rx / N_ray)^(1/3) so
    that E ||H_k||_F^2 = N_tx * N_rx.

    Args:
        params: generation parameters.
        grid: subcarrier layout (delay phases use baseband frequencies).
        tx_geom: transmit array.
        rx_geom: receive (user) array.
        seed: RNG seed; equal seeds give identical realizations.

    Returns:
        CommChannel with per-subcarrier matrices of shape (K, N_rx, N_tx).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x636f6d6d]))
    n_tx, n_rx = tx_geom.num_elements, rx_geom.num_elements
    gamma0 = (n_tx * n_rx / params.num_rays) ** (1.0 / 3.0)
    sigma2 = gamma0 / params.num_clusters

    clusters = []
    for _ in range(params.num_clusters):
        delay = rng.uniform(0.0, params.delay_max)
        th_c = rng.uniform(*params.theta_range)
        ph_c = rng.uniform(*params.phi_range)
        th_c_arr = rng.uniform(*params.theta_range)
        ph_c_arr = rng.uniform(*params.phi_range)
        rays = []
        for _ in range(params.num_rays):
            alpha = (rng.standard_normal() + 1j * rng.standard_normal()) * np.sqrt(
                sigma2 / 2.0
            )
            dep = _clip_direction(
                th_c + rng.laplace(0.0, params.angle_spread),
                ph_c + rng.laplace(0.0, params.angle_spread),
            )
            arr = _clip_direction(
                th_c_arr + rng.laplace(0.0, params.angle_spread),
                ph_c_arr + rng.laplace(0.0, params.angle_spread),
            )
            rays.append(Ray(complex(alpha), dep, arr))
        clusters.append(Cluster(float(delay), float(sigma2), tuple(rays)))

    freqs = grid.baseband_frequencies
    H = np.zeros((grid.num_subcarriers, n_rx, n_tx), dtype=complex)
    for cl in clusters:
        phase = np.exp(-2j * np.pi * freqs * cl.delay)
        block = np.zeros((n_rx, n_tx), dtype=complex)
        for ray in cl.rays:
            a = steering_vector(tx_geom, ray.departure)
            b = steering_vector(rx_geom, ray.arrival)
            block += ray.gain * np.outer(b, a.conj())
        H += phase[:, None, None] * block[None, :, :]
    H *= gamma0
    return CommChannel(tuple(clusters), float(gamma0), H)


def optimal_digital_beamformer(channel_matrix: np.ndarray, num_streams: int) -> np.ndarray:
    """Fully digital benchmark precoder for one subcarrier.

    Right singular vectors of H for the num_streams largest singular values,
    so ||F_opt||_F^2 = num_streams.

    Args:
        channel_matrix: N_rx x N_tx channel at one subcarrier.
        num_streams: N_s <= min(N_rx, N_tx).

    Returns:
        N_tx x N_s matrix with orthonormal columns.
    """
    n_rx, n_tx = channel_matrix.shape
    if num_streams > min(n_rx, n_tx):
        raise ValueError("num_streams exceeds channel rank bound")
    _, _, vh = np.linalg.svd(channel_matrix)
    return vh[:num_streams].conj().T


def spectral_efficiency(
    channel: np.ndarray, beamformers: np.ndarray, snr: float, num_streams: int
) -> float:
    """Gaussian-signaling spectral efficiency averaged over subcarriers.

    R = (1/K) sum_k log2 det(I + (snr / N_s) H_k F_k F_k^H H_k^H).

    Args:
        channel: (K, N_rx, N_tx) per-subcarrier channel.
        beamformers: (K, N_tx, N_s) per-subcarrier effective precoders.
        snr: linear receive SNR (total transmit power over noise).
        num_streams: N_s.

    Returns:
        Spectral efficiency in bits/s/Hz.
    """
    channel = np.atleast_3d(channel)
    K = channel.shape[0]
    n_rx = channel.shape[1]
    total = 0.0
    for k in range(K):
        HF = channel[k] @ beamformers[k]
        M = np.eye(n_rx) + (snr / num_streams) * (HF @ HF.conj().T)
        sign, logdet = np.linalg.slogdet(M)
        if sign.real <= 0:
            raise ValueError("SE matrix lost positive definiteness")
        total += logdet / np.log(2.0)
    return float(total / K)


@dataclass(frozen=True)
class HybridBeamformer:
    """Hybrid precoder: shared analog stage, per-subcarrier digital stages.

    Attributes:
        analog: N_tx x N_rf matrix, unit-modulus entries (phase shifters).
        digital: (K, N_rf, N_s) per-subcarrier baseband precoders.
        feasible: False when a designer gave up with constraints unmet.
    """

    analog: np.ndarray
    digital: np.ndarray
    feasible: bool = True

    def __post_init__(self):
        analog = np.asarray(self.analog, dtype=complex)
        digital = np.asarray(self.digital, dtype=complex)
        if analog.ndim != 2:
            raise ValueError("analog stage must be a matrix")
        if digital.ndim != 3 or digital.shape[1] != analog.shape[1]:
            raise ValueError("digital stage must be (K, N_rf, N_s)")
        object.__setattr__(self, "analog", analog)
        object.__setattr__(self, "digital", digital)

    @property
    def num_subcarriers(self) -> int:
        return self.digital.shape[0]

    @property
    def num_streams(self) -> int:
        return self.digital.shape[2]

    def per_subcarrier(self) -> np.ndarray:
        """Effective precoders F_k = F_rf @ F_bb_k, shape (K, N_tx, N_s)."""
        return np.einsum("tr,krs->kts", self.analog, self.digital)

    def power_per_subcarrier(self) -> np.ndarray:
        """||F_rf F_bb_k||_F^2 for each subcarrier."""
        F = self.per_subcarrier()
        return np.real(np.einsum("kts,kts->k", F, F.conj()))


# ---------------------------------------------------------------------------
# sensing channel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensingScene:
    """Bistatic sensing geometry and link budget.

    The sensing receiver sits at the origin; the transmitter at
    (0, baseline, 0). Scatterer positions are in the same frame.

    Args:
        baseline: transmitter-receiver separation D in meters.
        scatterers: (L, 3) scatterer positions; row order is path order
            (path 0 is the direct transmitter-receiver path when
            include_los is True).
        rcs: radar cross section sigma_RCS^2 in m^2 (shared by scatterers).
        wavelength: carrier wavelength in meters.
        tx_energy: per-symbol transmit energy E_0 (same time reference as
            noise below, so only the ratio matters).
        noise: sensing receiver noise level sigma_s^2.
        num_symbols: coherently processed OFDM symbols M.
        include_los: include the direct path as path 0.
    """

    baseline: float
    scatterers: np.ndarray
    rcs: float
    wavelength: float
    tx_energy: float
    noise: float
    num_symbols: int
    include_los: bool = True

    def __post_init__(self):
        sc = np.atleast_2d(np.asarray(self.scatterers, dtype=float))
        if sc.size and sc.shape[1] != 3:
            raise ValueError("scatterers must be (L, 3)")
        object.__setattr__(self, "scatterers", sc)
        if self.baseline <= 0.0:
            raise ValueError("baseline must be positive")
        if min(self.rcs, self.wavelength, self.tx_energy, self.noise) <= 0.0:
            raise ValueError("rcs, wavelength, tx_energy, noise must be positive")
        if self.num_symbols < 1:
            raise ValueError("num_symbols must be >= 1")

    @property
    def tx_center(self) -> np.ndarray:
        return np.array([0.0, self.baseline, 0.0])

    @property
    def num_paths(self) -> int:
        return self.scatterers.shape[0] + (1 if self.include_los else 0)

    def scatterer_index(self, path_index: int) -> int:
        """Row into scatterers for a given path index; -1 for the LOS path."""
        if self.include_los:
            if path_index == 0:
                return -1
            return path_index - 1
        return path_index

    def snr_factor(self, n_tx: int, n_rx: int, num_streams: int) -> float:
        """Fisher-information SNR scale gamma = 2 N_r N_t E_0 M / (sigma^2 N_s)."""
        return 2.0 * n_rx * n_tx * self.tx_energy * self.num_symbols / (
            self.noise * num_streams
        )


@dataclass(frozen=True)
class PathParams:
    """Per-path quantities entering the Fisher information.

    Attributes:
        arrival: angle of arrival at the sensing receiver.
        departure: angle of departure at the transmitter.
        delay: total propagation delay tau in seconds.
        gain: complex path gain beta (magnitude from the link budget,
            phase drawn uniformly).
    """

    arrival: Direction
    departure: Direction
    delay: float
    gain: complex


def sensing_path_gain(scene: SensingScene, path_index: int, seed: int = 0) -> complex:
    """Complex gain of one sensing path.

    Magnitude follows the bistatic link budget: for the direct path
    |beta| = lambda / (4 pi D); for a scatterer
    |beta|^2 = lambda^2 sigma_RCS^2 / ((4 pi)^3 (d0 d1)^2) with d0, d1 the
    transmitter-scatterer and scatterer-receiver ranges. The phase is drawn
    uniformly from a stream keyed by (seed, path_index).

    Args:
        scene: sensing geometry and budget.
        path_index: 0-based path index (0 = direct path when included).
        seed: phase seed.

    Returns:
        Complex path gain beta.
    """
    idx = scene.scatterer_index(path_index)
    lam = scene.wavelength
    if idx < 0:
        mag = lam / (4.0 * np.pi * scene.baseline)
    else:
        p = scene.scatterers[idx]
        d1 = np.linalg.norm(p)
        d0 = np.linalg.norm(p - scene.tx_center)
        if d0 == 0.0 or d1 == 0.0:
            raise ValueError("scatterer coincides with an array center")
        mag = np.sqrt(lam ** 2 * scene.rcs / ((4.0 * np.pi) ** 3 * (d0 * d1) ** 2))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70617468, path_index]))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return complex(mag * np.exp(1j * phase))


def path_parameters(scene: SensingScene, path_index: int, seed: int = 0) -> PathParams:
    """Geometry-derived PathParams for one sensing path."""
    idx = scene.scatterer_index(path_index)
    if idx < 0:
        arrival = Direction.from_vector(scene.tx_center)
        departure = Direction.from_vector(-scene.tx_center)
        delay = scene.baseline / SPEED_OF_LIGHT
    else:
        p = scene.scatterers[idx]
        arrival = Direction.from_vector(p)
        departure = Direction.from_vector(p - scene.tx_center)
        delay = (np.linalg.norm(p) + np.linalg.norm(p - scene.tx_center)) / SPEED_OF_LIGHT
    return PathParams(arrival, departure, float(delay),
                      sensing_path_gain(scene, path_index, seed))


def sensing_channel(
    scene: SensingScene,
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    seed: int = 0,
) -> np.ndarray:
    """Per-subcarrier sensing channel matrices.

    H_k = sum_l sqrt(N_t N_r) beta_l b(arr_l) a(dep_l)^H e^{-j 2 pi f_k tau_l}

    Args:
        scene: sensing geometry and budget.
        grid: subcarrier layout.
        tx_geom: transmit array (N_t elements).
        rx_geom: sensing receive array (N_r elements).
        seed: path-phase seed, forwarded to sensing_path_gain.

    Returns:
        (K, N_r, N_t) complex array.
    """
    n_tx, n_rx = tx_geom.num_elements, rx_geom.num_elements
    freqs = grid.baseband_frequencies
    H = np.zeros((grid.num_subcarriers, n_rx, n_tx), dtype=complex)
    scale = np.sqrt(n_tx * n_rx)
    for l in range(scene.num_paths):
        par = path_parameters(scene, l, seed)
        a = steering_vector(tx_geom, par.departure)
        b = steering_vector(rx_geom, par.arrival)
        block = scale * par.gain * np.outer(b, a.conj())
        phase = np.exp(-2j * np.pi * freqs * par.delay)
        H += phase[:, None, None] * block[None, :, :]
    return H
