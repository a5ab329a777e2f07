"""Planar antenna arrays, propagation directions, and the OFDM subcarrier grid.

Conventions used throughout the package:

* Directions are (theta, phi) in radians. theta is the polar angle measured
  from the +z axis, phi the azimuth measured from +x toward +y, so the unit
  propagation vector is [sin(theta)cos(phi), sin(theta)sin(phi), cos(theta)].
* Array element coordinates are stored as a 3 x N matrix (one column per
  element), centered so that each coordinate sums to zero. The centering is
  what makes the steering vector orthogonal to its own angle derivatives,
  which several closed forms downstream rely on.
* Steering vectors carry the 1/sqrt(N) normalization, so ||a|| = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class Direction:
    """Propagation direction in spherical coordinates.

    Args:
        theta: polar angle from the +z axis, in [0, pi].
        phi: azimuth from the +x axis toward +y, in (-pi, pi].
    """

    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")
        if not -np.pi < self.phi <= np.pi:
            raise ValueError(f"phi must lie in (-pi, pi], got {self.phi}")

    def unit_vector(self) -> np.ndarray:
        """Unit vector pointing along the direction."""
        st = np.sin(self.theta)
        return np.array(
            [st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)]
        )

    @staticmethod
    def from_vector(v: np.ndarray) -> "Direction":
        """Direction of a (not necessarily unit) 3-vector."""
        v = np.asarray(v, dtype=float)
        r = np.linalg.norm(v)
        if r == 0.0:
            raise ValueError("zero vector has no direction")
        return Direction(float(np.arccos(np.clip(v[2] / r, -1.0, 1.0))),
                         float(np.arctan2(v[1], v[0])))


def wavenumber(direction: Direction, wavelength: float) -> np.ndarray:
    """Wavenumber vector k(theta, phi) = (2 pi / lambda) * unit vector.

    Args:
        direction: propagation direction.
        wavelength: carrier wavelength in meters.

    Returns:
        Length-3 array, ||k|| = 2 pi / lambda.
    """
    if wavelength <= 0.0:
        raise ValueError("wavelength must be positive")
    return 2.0 * np.pi / wavelength * direction.unit_vector()


def wavenumber_derivatives(direction: Direction, wavelength: float):
    """Partial derivatives of the wavenumber vector w.r.t. theta and phi.

    Returns:
        (dk_dtheta, dk_dphi), each a length-3 array.
    """
    st, ct = np.sin(direction.theta), np.cos(direction.theta)
    sp, cp = np.sin(direction.phi), np.cos(direction.phi)
    s = 2.0 * np.pi / wavelength
    dk_dtheta = s * np.array([ct * cp, ct * sp, -st])
    dk_dphi = s * np.array([-st * sp, st * cp, 0.0])
    return dk_dtheta, dk_dphi


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna array described by its element coordinates.

    Args:
        coords: 3 x N element coordinate matrix in meters, one column per
            element. Must be centered: each row sums to zero.
        wavelength: carrier wavelength in meters.
    """

    coords: np.ndarray
    wavelength: float

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[0] != 3:
            raise ValueError("coords must be a 3 x N matrix")
        object.__setattr__(self, "coords", coords)
        if self.wavelength <= 0.0:
            raise ValueError("wavelength must be positive")
        # Centering keeps a^H(da/dtheta) = 0, which the closed-form CRBs use.
        extent = np.abs(coords).max() + 1.0
        if np.abs(coords.sum(axis=1)).max() > 1e-9 * extent * coords.shape[1]:
            raise ValueError("array is not centered at the origin")

    @property
    def num_elements(self) -> int:
        return self.coords.shape[1]

    @property
    def moments(self) -> np.ndarray:
        """Coordinate second moments [sum x^2, sum y^2, sum z^2]."""
        return (self.coords ** 2).sum(axis=1)

    @staticmethod
    def uspa(num_elements: int, wavelength: float, plane: str = "xz") -> "ArrayGeometry":
        """Uniform square planar array with half-wavelength spacing.

        Args:
            num_elements: total element count; must be a perfect square.
            wavelength: carrier wavelength in meters.
            plane: "xz" (default, broadside along +y) or "xy".

        Returns:
            Centered ArrayGeometry.
        """
        side = int(round(np.sqrt(num_elements)))
        if side * side != num_elements:
            raise ValueError(f"USPA needs a perfect square, got {num_elements}")
        spacing = wavelength / 2.0
        line = (np.arange(side) - (side - 1) / 2.0) * spacing
        u, v = np.meshgrid(line, line, indexing="ij")
        coords = np.zeros((3, num_elements))
        if plane == "xz":
            coords[0] = u.ravel()
            coords[2] = v.ravel()
        elif plane == "xy":
            coords[0] = u.ravel()
            coords[1] = v.ravel()
        else:
            raise ValueError(f"unknown plane {plane!r}")
        return ArrayGeometry(coords, wavelength)

    def rotated(self, rotation: np.ndarray) -> "ArrayGeometry":
        """Geometry with element coordinates rotated by a 3x3 matrix."""
        rotation = np.asarray(rotation, dtype=float)
        return ArrayGeometry(rotation @ self.coords, self.wavelength)


def steering_vector(geom: ArrayGeometry, direction: Direction) -> np.ndarray:
    """Unit-norm narrowband steering vector.

    a = (1/sqrt(N)) exp(-j Lambda^T k(theta, phi)) with Lambda the 3 x N
    coordinate matrix.

    Returns:
        Complex array of length N with ||a|| = 1.
    """
    phase = geom.coords.T @ wavenumber(direction, geom.wavelength)
    return np.exp(-1j * phase) / np.sqrt(geom.num_elements)


def steering_derivatives(geom: ArrayGeometry, direction: Direction):
    """Steering vector and its phase-slope angle derivatives.

    The derivative vectors follow the convention a_dot = (Lambda^T k_dot) * a
    (elementwise), i.e. the true derivative of the steering vector is
    -j * a_dot. For a centered array a^H a_dot = 0 exactly.

    Returns:
        (a, a_dot_theta, a_dot_phi), each of length N.
    """
    a = steering_vector(geom, direction)
    dk_dt, dk_dp = wavenumber_derivatives(direction, geom.wavelength)
    return a, (geom.coords.T @ dk_dt) * a, (geom.coords.T @ dk_dp) * a


@dataclass(frozen=True)
class SubcarrierGrid:
    """Symmetric OFDM subcarrier layout around the carrier.

    Baseband frequencies are f_k = (k - (K+1)/2) * spacing for k = 1..K, so
    they sum to zero and span a bandwidth B = K * spacing.

    Args:
        num_subcarriers: K >= 1.
        spacing: subcarrier spacing Delta_f in Hz.
        carrier: carrier frequency in Hz.
    """

    num_subcarriers: int
    spacing: float
    carrier: float

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ValueError("need at least one subcarrier")
        if self.spacing <= 0.0 or self.carrier <= 0.0:
            raise ValueError("spacing and carrier must be positive")

    @property
    def bandwidth(self) -> float:
        return self.num_subcarriers * self.spacing

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier

    @property
    def baseband_frequencies(self) -> np.ndarray:
        k = np.arange(1, self.num_subcarriers + 1)
        return (k - (self.num_subcarriers + 1) / 2.0) * self.spacing

    @property
    def sum_freq_squared(self) -> float:
        """Exact sum of f_k^2: Delta_f^2 K (K^2 - 1) / 12."""
        K = self.num_subcarriers
        return self.spacing ** 2 * K * (K * K - 1) / 12.0
