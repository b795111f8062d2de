# # Blind segmentation: median clipping, morphology, blobs
#
# No training involved. Pixels louder than 3x both their row and column
# median are kept, then closed, dilated, median-filtered and split into
# connected blobs. Blob boxes are compared with the generator's truth.

# %%
import tempfile
from pathlib import Path

import numpy as np

from birdtag import attention, blobseg, dsp, metrics, synth

clip, truth = synth.generate_scene(synth.random_scene_spec(2, positive=True))
spec = dsp.stft_spectrogram(clip, scale="linear")

# %%
# Step by step, to see what each stage does to the pixel count.

params = blobseg.SegParams()
m = blobseg.median_clip(spec, params.factor)
print("after median clip   ", int(m.sum()))
m = blobseg.morph_close(m, blobseg.square(params.close_size))
print("after closing       ", int(m.sum()))
m = blobseg.dilate(m, blobseg.square(params.dilate_size))
print("after dilation      ", int(m.sum()))
m = blobseg.median_filter(m, params.median_k)
print("after median filter ", int(m.sum()))

# %%
mask, blobs = blobseg.segment(spec, params)
boxes = [b.bbox for b in blobs]
print(f"{len(blobs)} blobs vs {len(truth.boxes)} true events, mean IOU {metrics.mean_iou(boxes, truth.boxes):.3f}")
for p, r, v in metrics.match_boxes(boxes, truth.boxes):
    print(f"  blob {boxes[p]} <-> truth {truth.boxes[r]}  IOU {v:.2f}")

# %%
# Over a small corpus: IOU on scenes with birds, leftover blobs on scenes without.

ious, spurious = [], []
for _, c, t in synth.iter_scenes(20, 0.5, seed=42):
    _, bl = blobseg.segment(dsp.stft_spectrogram(c, scale="linear"))
    if t.label:
        ious.append(metrics.mean_iou([b.bbox for b in bl], t.boxes))
    else:
        spurious.append(len(bl))
print(f"mean IOU {np.mean(ious):.3f} over {len(ious)} scenes, spurious blobs per empty scene {spurious}")

# %%
# Boxes become YOLO labels. Image rows count from the top (highest bin), so
# flip before export.

image_boxes = [attention.flip_rows(b, spec.n_bins) for b in boxes]
text = attention.export_yolo_labels(image_boxes, spec.n_frames, spec.n_bins)
print(text, end="")
out = Path(tempfile.mkdtemp()) / "scene.txt"
out.write_text(text)
print("written to", out)
