"""Sun localization in LDR panoramas and sun-centering rotation.

The sun is taken to be the solid-angle-weighted center of mass of the
largest saturated region (4-connected, wrapping across the azimuth seam).
Area is measured in steradians, not pixels, so high-latitude blobs are not
favored by the lat-long oversampling.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import pano
from .errors import PanohdrError
from .pano import LdrPanorama

DEFAULT_SATURATION_THRESHOLD = 254


class NoSunError(PanohdrError):
    """No saturated pixel found; caller decides the fallback."""


@dataclass(frozen=True)
class SunPosition:
    elevation: float  # radians, [-pi/2, pi/2]
    azimuth: float  # radians, (-pi, pi]
    pixel_row: int
    pixel_col: int


def saturation_mask(ldr, threshold=DEFAULT_SATURATION_THRESHOLD):
    if not 1 <= threshold <= 255:
        raise ValueError(f"saturation threshold must be in [1, 255], got {threshold}")
    data = ldr.data if isinstance(ldr, LdrPanorama) else np.asarray(ldr)
    return (data >= threshold).all(axis=2)


def connected_components(mask):
    """Label 4-connected regions of a boolean mask, wrapping in the column axis.

    Returns an int array, 0 = background, labels start at 1.
    """
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    current = 0
    for r0 in range(h):
        for c0 in range(w):
            if not mask[r0, c0] or labels[r0, c0]:
                continue
            current += 1
            queue = deque([(r0, c0)])
            labels[r0, c0] = current
            while queue:
                r, c = queue.popleft()
                for rr, cc in ((r - 1, c), (r + 1, c), (r, (c - 1) % w), (r, (c + 1) % w)):
                    if 0 <= rr < h and mask[rr, cc] and not labels[rr, cc]:
                        labels[rr, cc] = current
                        queue.append((rr, cc))
    return labels


def _circular_column_mean(cols, weights, width):
    """Weighted mean column of a wrapping set, anchored after the largest
    empty circular gap so the result is exactly rotation-equivariant."""
    occupied = np.unique(cols)
    if occupied.size == width:
        # full ring: no gap to anchor on, fall back to plain weighted mean
        return float(np.sum(weights * cols) / np.sum(weights))
    gaps_after = (np.roll(occupied, -1) - occupied) % width
    if occupied.size == 1:
        anchor = int(occupied[0])
    else:
        k = int(np.argmax(gaps_after))
        anchor = int(occupied[(k + 1) % occupied.size])
    offsets = (cols - anchor) % width
    mean_offset = float(np.sum(weights * offsets) / np.sum(weights))
    return anchor + mean_offset


def detect_sun(ldr, saturation_threshold=DEFAULT_SATURATION_THRESHOLD):
    """Locate the sun as the center of mass of the largest saturated region."""
    data = ldr.data if isinstance(ldr, LdrPanorama) else np.asarray(ldr)
    h, w = data.shape[:2]
    mask = saturation_mask(data, saturation_threshold)
    if not mask.any():
        raise NoSunError(f"no pixel saturated at threshold {saturation_threshold}")
    labels = connected_components(mask)
    omega = pano.solid_angle_rows(w, h)
    areas = np.bincount(labels.ravel(), weights=np.repeat(omega, w))
    areas[0] = 0.0
    best = int(np.argmax(areas))
    rows, cols = np.nonzero(labels == best)
    weights = omega[rows]

    mean_row = float(np.sum(weights * rows) / np.sum(weights))
    mean_col = _circular_column_mean(cols, weights, w)
    elevation = float(pano.elevation_of_row(mean_row, h))
    azimuth = float(pano.azimuth_of_col(mean_col % w, w))
    pixel_row = int(np.clip(np.floor(mean_row + 0.5), 0, h - 1))
    pixel_col = int(np.floor(mean_col + 0.5)) % w
    return SunPosition(elevation, azimuth, pixel_row, pixel_col)


def centering_shift(sun_col, width):
    """Column shift that brings a sun at sun_col to the image center."""
    return (width // 2 - sun_col) % width


def align_sun_center(p, saturation_threshold=DEFAULT_SATURATION_THRESHOLD):
    """Rotate a panorama so the detected sun sits at the horizontal center.

    Returns (rotated panorama, sun position in the rotated panorama). The
    resulting sun azimuth is within one column of phi = 0.
    """
    sun = detect_sun(p, saturation_threshold)
    width = p.width if isinstance(p, LdrPanorama) else np.asarray(p).shape[1]
    shift = centering_shift(sun.pixel_col, width)
    rotated = pano.rotate_azimuth(p, shift)
    new_col = (sun.pixel_col + shift) % width
    new_az = float(pano.azimuth_of_col(new_col, width))
    return rotated, SunPosition(sun.elevation, new_az, sun.pixel_row, new_col)