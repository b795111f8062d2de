"""Learning-free blob segmentation of spectrograms.

The chain is median clipping, morphological closing, dilation, median
(majority) filtering, small-blob removal and 8-connected labelling. It is
blind to the sound source: any spectral blob that stands out from its row
and column background is kept.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dsp import Spectrogram
from .metrics import BBox

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SegParams:
    factor: float = 3.0
    close_size: int = 3
    # wider elements chain window sidelobes onto strong events
    dilate_size: int = 3
    median_k: int = 5
    min_area: int = 60


@dataclass(frozen=True)
class Blob:
    pixels: np.ndarray  # (n, 2) array of (row, col)
    bbox: BBox

    @property
    def area(self):
        return len(self.pixels)


def square(size):
    """Full ``size x size`` structuring element."""
    if size < 1 or size % 2 == 0:
        raise ValueError("structuring element size must be odd and positive")
    return np.ones((size, size), dtype=bool)


def _check_se(se):
    se = np.asarray(se, dtype=bool)
    if se.ndim != 2 or se.shape[0] % 2 == 0 or se.shape[1] % 2 == 0:
        raise ValueError("structuring element must have odd width and height")
    if not se[se.shape[0] // 2, se.shape[1] // 2]:
        raise ValueError("structuring element origin must be set")
    return se


def _shifted(mask, dr, dc, fill):
    """``out[r, c] = mask[r - dr, c - dc]`` with ``fill`` outside the grid."""
    rows, cols = mask.shape
    out = np.full_like(mask, fill)
    if abs(dr) >= rows or abs(dc) >= cols:
        return out
    src = mask[max(0, -dr):rows - max(0, dr), max(0, -dc):cols - max(0, dc)]
    out[max(0, dr):rows - max(0, -dr), max(0, dc):cols - max(0, -dc)] = src
    return out


def _offsets(se):
    cr, cc = se.shape[0] // 2, se.shape[1] // 2
    return [(r - cr, c - cc) for r, c in zip(*np.nonzero(se))]


def dilate(mask, se):
    """Minkowski sum of the mask with ``se``; pixels outside count as false."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    for dr, dc in _offsets(_check_se(se)):
        out |= _shifted(mask, dr, dc, False)
    return out


def erode(mask, se):
    """Erosion with pixels outside the grid counted as true."""
    mask = np.asarray(mask, dtype=bool)
    out = np.ones_like(mask)
    for dr, dc in _offsets(_check_se(se)):
        out &= _shifted(mask, -dr, -dc, True)
    return out


def morph_close(mask, se):
    return erode(dilate(mask, se), se)


def median_clip(spec: Spectrogram, factor=3.0):
    """Keep pixels louder than ``factor`` times both their row and column median."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    if spec.scale != "linear":
        raise ValueError("median clipping works on linear magnitudes")
    v = spec.values
    row_med = np.median(v, axis=1, keepdims=True)
    col_med = np.median(v, axis=0, keepdims=True)
    return (v > factor * row_med) & (v > factor * col_med)


def median_filter(mask, k=5):
    """Majority vote over each ``k x k`` neighbourhood, outside counted false."""
    if k < 1 or k % 2 == 0:
        raise ValueError("k must be odd and positive")
    counts = ndimage.correlate(np.asarray(mask, dtype=np.int32), np.ones((k, k), np.int32),
                               mode="constant", cval=0)
    return counts > (k * k) // 2


def connected_components(mask):
    """8-connected blobs sorted by (t0, f0)."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    blobs = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = np.nonzero(labels[sl] == idx)
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        box = BBox(int(cols.min()), int(cols.max()), int(rows.min()), int(rows.max()))
        blobs.append(Blob(np.column_stack([rows, cols]), box))
    blobs.sort(key=lambda b: (b.bbox.t0, b.bbox.f0))
    return blobs


def remove_small(mask, min_area):
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return mask
    areas = np.bincount(labels.ravel())
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


def segment(spec: Spectrogram, params: SegParams = SegParams()):
    """Full blind segmentation; returns ``(mask, blobs)``."""
    mask = median_clip(spec, params.factor)
    mask = morph_close(mask, square(params.close_size))
    mask = dilate(mask, square(params.dilate_size))
    mask = median_filter(mask, params.median_k)
    mask = remove_small(mask, params.min_area)
    return mask, connected_components(mask)
