"""Glue between audio, ground truth and the 64x64 networks.

Networks see ``dsp.network_input`` of the log spectrogram. Masks and boxes
are carried onto the same block grid so targets and scores line up with
what the network actually sees.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp, synth
from .metrics import BBox

GRID = (64, 64)


@dataclass
class Item:
    id: str
    spec: dsp.Spectrogram
    label: int
    mask: np.ndarray = None
    boxes: list = None


def spectrogram(clip):
    return dsp.stft_spectrogram(clip, scale="linear")


def net_input(spec, grid=GRID):
    return dsp.network_input(spec, *grid)


def grid_mask(mask, grid=GRID):
    """A mask on the network grid: a cell is set if any pixel in its block is."""
    return dsp.pool_max(np.asarray(mask, bool), *grid)


def grid_box(box: BBox, native_shape, grid=GRID):
    """The grid cells covering ``box`` (row 0 lowest bin on both)."""
    rows = dsp.block_index(native_shape[0], grid[0])
    cols = dsp.block_index(native_shape[1], grid[1])
    return BBox(int(cols[box.t0]), int(cols[box.t1]), int(rows[box.f0]), int(rows[box.f1]))


def native_heatmap(hm, native_shape):
    """Spread a grid heatmap back over the spectrogram, block by block."""
    return dsp.unpool(hm, *native_shape)


def items_from_scenes(scenes):
    """``(id, clip, truth)`` triples, e.g. from ``synth.iter_scenes``."""
    return [Item(sid, spectrogram(clip), truth.label, truth.mask, truth.boxes)
            for sid, clip, truth in scenes]


def load_corpus(root):
    """Read a corpus written by ``synth.generate_corpus``.

    Masks and boxes are attached when their files exist.
    """
    root = Path(root)
    items = []
    for row in synth.read_manifest(root / "manifest.csv"):
        spec = spectrogram(dsp.load_wav(root / row["path"]))
        mask_p = root / "masks" / f"{row['id']}.png"
        box_p = root / "boxes" / f"{row['id']}.json"
        mask = synth.load_mask_png(mask_p) if mask_p.exists() else None
        boxes = synth.load_boxes_json(box_p) if box_p.exists() else None
        items.append(Item(row["id"], spec, int(row["label"]), mask, boxes))
    return items


def unet_dataset(items, grid=GRID):
    out = []
    for it in items:
        if it.mask is None:
            raise ValueError(f"{it.id}: no truth mask")
        if it.mask.shape != it.spec.shape:
            raise ValueError(f"{it.id}: mask {it.mask.shape} vs spectrogram {it.spec.shape}")
        out.append((net_input(it.spec, grid), grid_mask(it.mask, grid).astype(np.float64)))
    return out


def classifier_dataset(items, grid=GRID):
    return [(net_input(it.spec, grid), it.label) for it in items]
