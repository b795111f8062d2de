import numpy as np
import pytest
from PIL import Image

from birdtag import attention, nnet
from birdtag.metrics import BBox
from birdtag.nnet import Conv2d, Dense, GlobalAvgPool, MaxPool2, Network, ReLU, Sigmoid

import oracles


def cam_net(rng, w_dense=0.8):
    """conv(1->1) is the last conv, so grad-CAM has a single feature map."""
    conv = Conv2d(1, 1, 3, rng)
    dense = Dense(1, 1, rng)
    dense.params["w"][:] = w_dense
    return Network([conv, GlobalAvgPool(), dense, Sigmoid()], "classifier", (1, 6, 7))


def test_grad_cam_single_map_is_relu_of_activation(rng):
    net = cam_net(np.random.default_rng(0))
    x = rng.standard_normal((1, 6, 7))
    cam = attention.grad_cam(net, x)
    a = net.output_of(0)[0, 0]
    np.testing.assert_allclose(cam, attention.normalize(np.maximum(a, 0)), atol=1e-12)
    assert cam.shape == (6, 7)
    # negative class weight flips alpha: relu keeps the other sign
    neg = cam_net(np.random.default_rng(0), w_dense=-0.8)
    np.testing.assert_allclose(attention.grad_cam(neg, x), attention.normalize(np.maximum(-a, 0)), atol=1e-12)


def test_grad_cam_zero_weights_and_range(rng):
    net = nnet.build_classifier((1, 16, 16), seed=0)
    x = rng.standard_normal((1, 16, 16))
    cam = attention.grad_cam(net, x)
    assert cam.shape == (16, 16)
    assert cam.min() >= 0 and cam.max() <= 1
    assert cam.max() in (0.0, 1.0)
    for _, _, v, _ in net.parameters():
        v[...] = 0.0
    assert not attention.grad_cam(net, x).any()


def test_grad_cam_scale_invariant(rng):
    net = nnet.build_classifier((1, 16, 16), seed=1)
    x = rng.standard_normal((1, 16, 16))
    a = attention.grad_cam(net, x)
    # scaling the dense weight scales alpha by c > 0; normalization removes it
    net.layers[-2].params["w"] *= 3.5
    np.testing.assert_allclose(attention.grad_cam(net, x), a, atol=1e-12)


def test_grad_cam_errors(rng):
    unet = nnet.build_unet((1, 8, 8), widths=(2, 2), bottleneck=2)
    with pytest.raises(ValueError):
        attention.grad_cam(unet, np.zeros((1, 8, 8)))
    no_conv = Network([GlobalAvgPool(), Dense(1, 1), Sigmoid()], "classifier", (1, 4, 4))
    with pytest.raises(ValueError):
        attention.grad_cam(no_conv, np.zeros((1, 4, 4)))


def test_guided_backprop_relu_free_equals_plain_gradient(rng):
    r = np.random.default_rng(3)
    net = Network([Conv2d(1, 3, 3, r), MaxPool2(), Conv2d(3, 2, 3, r), GlobalAvgPool(), Dense(2, 1, r), Sigmoid()],
                  "classifier", (1, 8, 8))
    x = rng.standard_normal((1, 8, 8))
    plain = attention.input_gradient(net, x, guided=False)
    sal = attention.guided_backprop(net, x)
    np.testing.assert_allclose(sal, attention.normalize(np.abs(plain).max(axis=0)), atol=1e-9)
    # and the plain gradient itself against central differences of the logit
    logit = lambda: float(net.forward(x[None])[0, 0] and net.output_of(net.logit_index)[0, 0])
    flat = x.reshape(-1)
    for i in range(0, flat.size, 7):
        num = oracles.central_difference(logit, flat, i)
        assert oracles.rel_err(plain.reshape(-1)[i], num) < 1e-4


def test_guided_backprop_dead_relu_gives_zero():
    conv = Conv2d(1, 1, 1)
    conv.params["w"][:] = 1.0
    conv.params["b"][:] = -10.0
    net = Network([conv, ReLU(), GlobalAvgPool(), Dense(1, 1), Sigmoid()], "classifier", (1, 3, 3))
    assert not attention.guided_backprop(net, np.zeros((1, 3, 3))).any()


def test_guided_backprop_hand_chain():
    conv = Conv2d(2, 2, 1)
    conv.params["w"][:, :, 0, 0] = [[1.0, 2.0], [-1.0, 1.0]]
    dense = Dense(2, 1)
    dense.params["w"][:] = [[1.0, -1.0]]
    net = Network([conv, ReLU(), GlobalAvgPool(), dense, Sigmoid()], "classifier", (2, 1, 3))
    x = np.array([[[1.0, -1.0, 0.5]], [[0.5, 0.2, -2.0]]])
    h = np.einsum("kc,cij->kij", conv.params["w"][:, :, 0, 0], x)
    # unit 1 carries a negative gradient (dense weight -1): guided relu blocks it everywhere.
    # unit 0 passes where h0 > 0 with upstream 1/3.
    gate0 = (h[0] > 0) / 3.0
    expected = np.stack([1.0 * gate0, 2.0 * gate0])
    np.testing.assert_allclose(attention.input_gradient(net, x, guided=True), expected, atol=1e-15)
    np.testing.assert_allclose(attention.guided_backprop(net, x),
                               attention.normalize(np.abs(expected).max(axis=0)), atol=1e-15)
    # without gating unit 1 leaks through where h1 > 0
    plain = attention.input_gradient(net, x, guided=False)
    gate1 = -(h[1] > 0).astype(float) / 3.0
    np.testing.assert_allclose(plain, expected + np.stack([-1.0 * gate1, 1.0 * gate1]), atol=1e-15)


def bump(shape, centre, sigma=3.0):
    f, t = np.indices(shape)
    return np.exp(-((f - centre[1]) ** 2 + (t - centre[0]) ** 2) / (2 * sigma ** 2))


def test_heatmap_to_bboxes():
    assert attention.heatmap_to_bboxes(np.zeros((64, 80))) == []
    hm = bump((64, 80), (30, 40))
    boxes = attention.heatmap_to_bboxes(hm, 0.5)
    assert len(boxes) == 1 and boxes[0].contains(30, 40)
    # the >= 0.5 region of a Gaussian is the disc of radius sigma*sqrt(2 ln 2)
    region = np.argwhere(hm >= 0.5)
    assert (boxes[0].f0, boxes[0].f1) == (region[:, 0].min(), region[:, 0].max())
    two = attention.normalize(np.maximum(bump((64, 80), (10, 10)), bump((64, 80), (60, 45))))
    boxes = attention.heatmap_to_bboxes(two, 0.5)
    assert len(boxes) == 2 and boxes[0].t0 < boxes[1].t0
    assert all(b.area >= 20 for b in boxes)
    assert attention.heatmap_to_bboxes(two, 0.5, min_area=10_000) == []
    with pytest.raises(ValueError):
        attention.heatmap_to_bboxes(two, 1.0)


def test_yolo_examples():
    assert attention.export_yolo_labels([BBox(0, 623, 0, 255)], 624, 256) == \
        "0 0.500000 0.500000 1.000000 1.000000\n"
    assert attention.export_yolo_labels([BBox(100, 199, 50, 99)], 624, 256) == \
        "0 0.240385 0.292969 0.160256 0.195313\n"
    assert attention.export_yolo_labels([], 624, 256) == ""
    assert attention.export_yolo_labels([BBox(0, 0, 0, 0)], 3, 3) == "0 0.166667 0.166667 0.333333 0.333333\n"
    with pytest.raises(ValueError):
        attention.export_yolo_labels([BBox(600, 624, 0, 10)], 624, 256)


def test_yolo_round_trip(rng):
    from conftest import random_box
    boxes = [BBox(*random_box(rng, 200)) for _ in range(30)]
    text = attention.export_yolo_labels(boxes, 624, 512)
    assert attention.parse_yolo_labels(text, 624, 512) == boxes


def test_flip_rows():
    b = BBox(3, 9, 0, 10)
    assert attention.flip_rows(b, 256) == BBox(3, 9, 245, 255)
    assert attention.flip_rows(attention.flip_rows(b, 256), 256) == b


def test_heatmap_png(tmp_path):
    hm = np.linspace(0, 1, 12).reshape(3, 4)
    attention.save_heatmap_png(tmp_path / "h.png", hm)
    with Image.open(tmp_path / "h.png") as im:
        assert im.mode == "L" and im.size == (4, 3)
        px = np.array(im)
    np.testing.assert_array_equal(px[::-1], np.round(hm * 255).astype(np.uint8))
    with pytest.raises(ValueError):
        attention.save_heatmap_png(tmp_path / "bad.png", hm * 2)
