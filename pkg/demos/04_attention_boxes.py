# # From weak labels to boxes: grad-CAM and guided backprop
#
# Train a classifier on bird / no-bird tags only, then ask where it looked.
# grad-CAM weights the last conv maps by their mean gradient; guided
# backprop pushes the gradient to the input with negative gradients
# blocked at every relu. Thresholded heatmaps give boxes.

# %%
import numpy as np

from birdtag import attention, metrics, nnet, pipeline, synth

train = pipeline.items_from_scenes(synth.iter_scenes(200, 0.5, seed=1000))
held = pipeline.items_from_scenes(synth.iter_scenes(30, 0.5, seed=2000))

net = nnet.build_classifier((1, 64, 64), seed=0)
rep = nnet.train_classifier(net, pipeline.classifier_dataset(train), nnet.TrainConfig(epochs=30, learning_rate=0.05))
print("train accuracy", rep.epochs[-1]["train_accuracy"])

# %%
data = pipeline.classifier_dataset(held)
p = nnet.predict_proba(net, [x for x, _ in data])[:, 0]
y = [lab for _, lab in data]
print(f"held-out AUC {metrics.roc_auc(y, p):.3f}, accuracy {metrics.accuracy(y, (p >= 0.5).astype(int)):.3f}")

# %%
# Where does the grad-CAM peak fall, relative to the true events?

for it, (x, _) in list(zip(held, data))[:10]:
    if not it.label:
        continue
    cam = attention.grad_cam(net, x)
    r, c = np.unravel_index(np.argmax(cam), cam.shape)
    boxes = [pipeline.grid_box(b, it.spec.shape) for b in it.boxes]
    inside = any(b.contains(c, r) for b in boxes)
    print(f"{it.id} peak at cell (t={c}, f={r}) {'inside' if inside else 'outside'} a true box")

# %%
# Heatmap boxes at spectrogram resolution, against the truth.

it = next(i for i in held if i.label)
x = pipeline.net_input(it.spec)
for name, hm in (("grad-CAM", attention.grad_cam(net, x)), ("saliency", attention.guided_backprop(net, x))):
    native = pipeline.native_heatmap(hm, it.spec.shape)
    boxes = attention.heatmap_to_bboxes(native, threshold=0.5)
    print(f"{name:9s} {len(boxes)} boxes, mean IOU vs truth {metrics.mean_iou(boxes, it.boxes):.3f}")
