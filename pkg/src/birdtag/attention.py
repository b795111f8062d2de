"""Attention maps of a trained classifier and their conversion to boxes.

Both maps differentiate the pre-sigmoid score. grad-CAM weights the last
convolution's feature maps by their spatially averaged gradients; guided
backpropagation carries the score gradient back to the input while every
rectifier also blocks negative incoming gradients.
"""
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
from PIL import Image

from . import blobseg, dsp
from .metrics import BBox
from .nnet import Network


def normalize(m):
    """Scale a non-negative map so its maximum is 1; an all-zero map stays zero."""
    m = np.asarray(m, dtype=np.float64)
    peak = m.max() if m.size else 0.0
    return m / peak if peak > 0 else np.zeros_like(m)


def _prepare(net, x):
    if net.topology != "classifier":
        raise ValueError("attention maps need a classifier network")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    return x[None] if x.ndim == 3 else x


def grad_cam(net: Network, x, layer=None):
    """grad-CAM heatmap for a single input, upsampled to the input size."""
    x = _prepare(net, x)
    layer = net.last_conv_index if layer is None else layer
    net.forward(x)
    li = net.logit_index
    net.backward(np.ones_like(net.output_of(li)), start=li)
    acts = net.output_of(layer)[0]
    grads = net.output_grads[layer][0]
    alpha = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, acts, axes=1), 0.0)
    # centre-aligned: a cell of a pooled map sits over the middle of its block
    cam = dsp.bilinear(cam, x.shape[2], x.shape[3], align_corners=False)
    return normalize(cam)


def input_gradient(net: Network, x, guided=False):
    """Gradient of the pre-sigmoid score with respect to the input."""
    x = _prepare(net, x)
    net.forward(x)
    li = net.logit_index
    return net.backward(np.ones_like(net.output_of(li)), start=li, guided=guided)[0]


def guided_backprop(net: Network, x):
    """Guided-backprop saliency: |gated input gradient|, max over channels."""
    g = input_gradient(net, x, guided=True)
    return normalize(np.abs(g).max(axis=0))


def heatmap_to_bboxes(hm, threshold=0.5, min_area=20):
    """Boxes around connected regions of the heatmap at or above threshold."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    mask = np.asarray(hm) >= threshold
    return [b.bbox for b in blobseg.connected_components(mask) if b.area >= min_area]


def save_heatmap_png(path, hm):
    """8-bit grayscale PNG, row 0 of the heatmap (lowest bin) at the bottom."""
    hm = np.asarray(hm, dtype=np.float64)
    if hm.size and (hm.min() < 0 or hm.max() > 1):
        raise ValueError("heatmap values must lie in [0, 1]")
    Image.fromarray(np.round(hm[::-1] * 255).astype(np.uint8), mode="L").save(path)


def flip_rows(box: BBox, n_rows):
    """Convert between bin rows (row 0 lowest) and image rows (row 0 on top)."""
    return BBox(box.t0, box.t1, n_rows - 1 - box.f1, n_rows - 1 - box.f0)


def _fmt6(v):
    # half-up on the exact binary value: 50/256 = 0.1953125 -> 0.195313
    return str(Decimal(v).quantize(Decimal("0.000001"), rounding=ROUND_HALF_UP))


def export_yolo_labels(boxes, img_w, img_h):
    """YOLO label text, one ``0 cx cy w h`` line per box.

    Boxes must already be in image coordinates (``t`` along x, ``f`` as
    image row from the top); see :func:`flip_rows`.
    """
    lines = []
    for b in boxes:
        if b.t1 >= img_w or b.f1 >= img_h:
            raise ValueError(f"box {b} outside {img_w}x{img_h} image")
        cx = (b.t0 + b.t1 + 1) / 2 / img_w
        cy = (b.f0 + b.f1 + 1) / 2 / img_h
        w = (b.t1 - b.t0 + 1) / img_w
        h = (b.f1 - b.f0 + 1) / img_h
        lines.append("0 " + " ".join(_fmt6(v) for v in (cx, cy, w, h)) + "\n")
    return "".join(lines)


def parse_yolo_labels(text, img_w, img_h):
    """Inverse of :func:`export_yolo_labels`, rounding back to pixel indices."""
    boxes = []
    for line in text.splitlines():
        if not line.strip():
            continue
        _, cx, cy, w, h = line.split()
        cx, cy, w, h = float(cx) * img_w, float(cy) * img_h, float(w) * img_w, float(h) * img_h
        t0 = int(round(cx - w / 2))
        f0 = int(round(cy - h / 2))
        boxes.append(BBox(t0, t0 + int(round(w)) - 1, f0, f0 + int(round(h)) - 1))
    return boxes
