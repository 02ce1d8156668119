"""Lat-long panorama data model, spherical geometry, tonemapping and exposure.

Conventions used throughout the package:
  * images are (H, W, 3) arrays with H * 2 == W; row 0 is the zenith edge
  * elevation theta = pi/2 - pi*(row+0.5)/H, azimuth phi = 2*pi*(col+0.5)/W - pi
  * world frame is y-up: dir = (cos(theta)*sin(phi), sin(theta), cos(theta)*cos(phi)),
    so phi = 0 looks along +z ("sun-centered" means the sun sits at phi ~ 0,
    i.e. near column W/2)
  * the top hemisphere (sky) is rows 0 .. H/2-1
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

DEFAULT_WIDTH = 128
DEFAULT_HEIGHT = 64


def _check_latlong_shape(data, name):
    if data.ndim != 3 or data.shape[2] != 3:
        raise DomainError(f"{name}: expected (H, W, 3) array, got {data.shape}")
    h, w = data.shape[:2]
    if h * 2 != w:
        raise DomainError(f"{name}: lat-long aspect requires W == 2*H, got {h}x{w}")


@dataclass
class HdrPanorama:
    """Linear-radiance lat-long image. Values are relative radiance, >= 0."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        _check_latlong_shape(self.data, "HdrPanorama")
        if not np.isfinite(self.data).all():
            raise DomainError("HdrPanorama: non-finite radiance values")
        if (self.data < 0).any():
            raise DomainError("HdrPanorama: negative radiance values")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def top_half(self):
        """Sky rows (elevation > 0) as an array view."""
        return self.data[: self.height // 2]


@dataclass
class LdrPanorama:
    """8-bit lat-long image (integer codes 0..255)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.uint8:
            if np.issubdtype(data.dtype, np.integer) and data.min() >= 0 and data.max() <= 255:
                data = data.astype(np.uint8)
            else:
                raise DomainError("LdrPanorama: codes must be integers in [0, 255]")
        self.data = data
        _check_latlong_shape(self.data, "LdrPanorama")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class TonemapParams:
    """Compressive power map q = alpha * v**(1/gamma) used by losses and metrics.

    The defaults bring a bright sun close to 1 in the mapped domain.
    """

    alpha: float = 1.0 / 30.0
    gamma: float = 2.2

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"TonemapParams: alpha must be > 0, got {self.alpha}")
        if not self.gamma >= 1:
            raise DomainError(f"TonemapParams: gamma must be >= 1, got {self.gamma}")


def _values(p):
    return p.data if isinstance(p, (HdrPanorama, LdrPanorama)) else np.asarray(p)


def tonemap(p, params=TonemapParams()):
    """Map linear radiance to the compressed domain: alpha * v**(1/gamma).

    Monotone; computed in float64 so the round trip with inverse_tonemap
    stays well under 1e-6 relative error.
    """
    v = np.asarray(_values(p), dtype=np.float64)
    if (v < 0).any():
        raise DomainError("tonemap: negative input values")
    return params.alpha * np.power(v, 1.0 / params.gamma)


def inverse_tonemap(q, params=TonemapParams()):
    """Invert tonemap: v = (q / alpha)**gamma. Returns a float64 array."""
    q = np.asarray(_values(q), dtype=np.float64)
    if (q < 0).any():
        raise DomainError("inverse_tonemap: negative input values")
    return np.power(q / params.alpha, params.gamma)


def expose(p, factor):
    """Scale radiance by a positive exposure factor."""
    if not factor > 0:
        raise DomainError(f"expose: factor must be > 0, got {factor}")
    if isinstance(p, HdrPanorama):
        return HdrPanorama(p.data * factor)
    return np.asarray(p, dtype=np.float64) * factor


def quantize_codes(values):
    """Clamp to [0,1], scale by 255 and round half away from zero -> uint8."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def quantize_ldr(values):
    """Quantize a float image in [0, inf) to an LdrPanorama."""
    return LdrPanorama(quantize_codes(_values(values)))


def direction_of_pixel(row, col, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT):
    """Unit world direction (y up) of a pixel center."""
    theta = np.pi / 2 - np.pi * (np.asarray(row) + 0.5) / height
    phi = 2 * np.pi * (np.asarray(col) + 0.5) / width - np.pi
    ct = np.cos(theta)
    return np.stack([ct * np.sin(phi), np.sin(theta), ct * np.cos(phi)], axis=-1)


def direction_grid(width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT):
    """(H, W, 3) array of pixel-center directions."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return direction_of_pixel(rows, cols, width, height)


def elevation_of_row(row, height=DEFAULT_HEIGHT):
    return np.pi / 2 - np.pi * (np.asarray(row) + 0.5) / height


def azimuth_of_col(col, width=DEFAULT_WIDTH):
    return 2 * np.pi * (np.asarray(col) + 0.5) / width - np.pi


def pixel_of_direction(d, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT):
    """Nearest pixel (row, col) containing a world direction."""
    d = np.asarray(d, dtype=np.float64)
    theta = np.arcsin(np.clip(d[..., 1] / np.linalg.norm(d, axis=-1), -1.0, 1.0))
    phi = np.arctan2(d[..., 0], d[..., 2])
    row = np.clip(np.floor((np.pi / 2 - theta) / np.pi * height), 0, height - 1)
    col = np.floor((phi + np.pi) / (2 * np.pi) * width) % width
    return row.astype(np.int64), col.astype(np.int64)


def solid_angle(row, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT):
    """Steradian footprint of any pixel in a given row.

    Exact row-band area (2*pi/W) * (sin(theta_top) - sin(theta_bottom));
    equals the midpoint form (2*pi/W)*(pi/H)*cos(theta_center) to O(dtheta^2)
    and makes the full-sphere sum close to 4*pi at machine precision.
    """
    row = np.asarray(row)
    theta_top = np.pi / 2 - np.pi * row / height
    theta_bot = np.pi / 2 - np.pi * (row + 1) / height
    return (2 * np.pi / width) * (np.sin(theta_top) - np.sin(theta_bot))


def solid_angle_rows(width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT):
    """(H,) per-row pixel solid angles; summed over the grid they give 4*pi."""
    return solid_angle(np.arange(height), width, height)


def rotate_azimuth(p, shift):
    """Circular column shift by an integer count (content moves +shift columns)."""
    shift = int(shift)
    if isinstance(p, HdrPanorama):
        return HdrPanorama(np.roll(p.data, shift, axis=1))
    if isinstance(p, LdrPanorama):
        return LdrPanorama(np.roll(p.data, shift, axis=1))
    return np.roll(np.asarray(p), shift, axis=1)


def hflip(p):
    """Mirror the panorama horizontally (azimuth phi -> -phi)."""
    if isinstance(p, HdrPanorama):
        return HdrPanorama(np.ascontiguousarray(p.data[:, ::-1]))
    if isinstance(p, LdrPanorama):
        return LdrPanorama(np.ascontiguousarray(p.data[:, ::-1]))
    return np.ascontiguousarray(np.asarray(p)[:, ::-1])
