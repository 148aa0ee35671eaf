"""Binary-mask morphology: erosion/dilation, component labeling, hole filling,
sprinkle removal.

Masks are 2D boolean arrays. Components use 4-connectivity throughout; the
erosion/dilation structuring element is the square of side 2r+1, with pixels
outside the raster treated as unset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError

# 4-connectivity structure for scipy.ndimage.label
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True, eq=False)
class ComponentLabels:
    """Result of connected-component labeling.

    labels: H x W int32, component index in [0, count) for set pixels,
    -1 for background. Labels are assigned in raster-scan order of each
    component's first pixel.
    """

    labels: np.ndarray
    count: int
    areas: np.ndarray  # per-component pixel count, shape (count,)


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2D, got shape {mask.shape}")
    return mask.astype(bool, copy=False)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square erosion: a pixel survives iff the full (2r+1)^2 window is set."""
    mask = _check_mask(mask)
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return mask.copy()
    side = 2 * radius + 1
    out = ndimage.minimum_filter(
        mask.astype(np.uint8), size=side, mode="constant", cval=0
    )
    return out.astype(bool)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square dilation, the dual of :func:`erode`."""
    mask = _check_mask(mask)
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return mask.copy()
    side = 2 * radius + 1
    out = ndimage.maximum_filter(
        mask.astype(np.uint8), size=side, mode="constant", cval=0
    )
    return out.astype(bool)


def connected_components(mask: np.ndarray) -> ComponentLabels:
    """4-connected labeling of set pixels with raster-order label ids."""
    mask = _check_mask(mask)
    raw, count = ndimage.label(mask, structure=_CROSS)
    # ndimage.label already assigns 1..count in raster order of first pixels
    labels = raw.astype(np.int32) - 1
    if count == 0:
        areas = np.zeros(0, dtype=np.int64)
    else:
        areas = np.bincount(raw[raw > 0].ravel(), minlength=count + 1)[1:]
    return ComponentLabels(labels=labels, count=int(count), areas=areas)


def fill_holes(mask: np.ndarray, max_area: int) -> np.ndarray:
    """Set every interior background component of area <= max_area.

    Background components touching the raster border are the true exterior
    and are never filled.
    """
    mask = _check_mask(mask)
    if max_area < 0:
        raise ValidationError(f"max_area must be >= 0, got {max_area}")
    if max_area == 0:
        return mask.copy()
    comp = connected_components(~mask)
    if comp.count == 0:
        return mask.copy()
    border = np.zeros(comp.count, dtype=bool)
    for edge in (comp.labels[0, :], comp.labels[-1, :], comp.labels[:, 0], comp.labels[:, -1]):
        ids = edge[edge >= 0]
        border[ids] = True
    fill_ids = np.flatnonzero(~border & (comp.areas <= max_area))
    out = mask.copy()
    if fill_ids.size:
        out[np.isin(comp.labels, fill_ids)] = True
    return out


def remove_sprinkles(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Clear every foreground component of area < min_area."""
    mask = _check_mask(mask)
    if min_area < 0:
        raise ValidationError(f"min_area must be >= 0, got {min_area}")
    if min_area == 0:
        return mask.copy()
    comp = connected_components(mask)
    if comp.count == 0:
        return mask.copy()
    drop_ids = np.flatnonzero(comp.areas < min_area)
    out = mask.copy()
    if drop_ids.size:
        out[np.isin(comp.labels, drop_ids)] = False
    return out
