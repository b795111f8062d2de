"""Losses, mini-batch SGD training and mask prediction."""
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import dsp
from .network import Network

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 0.1
    seed: int = 0
    dice_smooth: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.dice_smooth <= 0:
            raise ValueError("learning_rate and dice_smooth must be positive")


@dataclass
class TrainReport:
    task: str
    config: dict
    epochs: list = field(default_factory=list)

    @property
    def losses(self):
        return [e["mean_loss"] for e in self.epochs]

    def trend(self):
        """Summary of how the loss moved: first, last, best and whether it fell."""
        losses = self.losses
        return {"first": losses[0], "last": losses[-1], "best": min(losses),
                "decreasing": losses[-1] < losses[0]}

    def to_json(self):
        return json.dumps({"task": self.task, "config": self.config,
                           "epochs": self.epochs, "trend": self.trend()},
                          indent=2, sort_keys=True) + "\n"


def dice_coefficient(pred, target, smooth=1.0):
    """Soft Dice: (2*sum(p*t) + s) / (sum(p) + sum(t) + s)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return (2.0 * np.sum(pred * target) + smooth) / (np.sum(pred) + np.sum(target) + smooth)


def dice_loss(pred, target, smooth=1.0):
    return -dice_coefficient(pred, target, smooth)


def dice_loss_grad(pred, target, smooth=1.0):
    """Gradient of ``dice_loss`` with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    num = 2.0 * np.sum(pred * target) + smooth
    den = np.sum(pred) + np.sum(target) + smooth
    return -(2.0 * target * den - num) / den ** 2


def bce_with_logits(logits, labels):
    return float(np.mean(np.logaddexp(0.0, logits) - labels * logits))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _as_input(x):
    if isinstance(x, dsp.Spectrogram):
        x = x.values
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def _sgd_step(net, lr):
    for _, _, value, grad in net.parameters():
        value -= lr * grad


def _forward(net, x, epoch, b):
    try:
        return net.forward(x)
    except FloatingPointError as e:
        raise TrainingDiverged(f"epoch {epoch}, batch {b}: {e}") from e


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(net: Network, dataset, cfg: TrainConfig = None) -> TrainReport:
    """Fit a U-net to ``(input, mask)`` pairs by minimising the Dice loss.

    The Dice loss is taken over each whole mini-batch, so all-zero masks
    (recordings without birds) still pull predictions towards zero through
    the denominator.
    """
    cfg = cfg or TrainConfig()
    if net.topology != "unet":
        raise ValueError("train() expects a unet; use train_classifier for classifiers")
    if not dataset:
        raise ValueError("empty dataset")
    X = np.stack([_as_input(x) for x, _ in dataset])
    T = np.stack([np.asarray(m, dtype=np.float64)[None] for _, m in dataset])
    if X.shape[2:] != T.shape[2:]:
        raise ValueError("masks are not congruent with inputs")

    rng = np.random.default_rng(cfg.seed)
    report = TrainReport("unet", asdict(cfg))
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for b, idx in enumerate(_batches(len(X), cfg.batch_size, rng)):
            pred = _forward(net, X[idx], epoch, b)
            loss = dice_loss(pred, T[idx], cfg.dice_smooth)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            net.backward(dice_loss_grad(pred, T[idx], cfg.dice_smooth))
            _sgd_step(net, cfg.learning_rate)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        report.epochs.append({"epoch": epoch, "mean_loss": mean_loss,
                              "mean_dice": -mean_loss, "one_minus_dice": 1.0 + mean_loss})
        log.info("epoch %d loss %.4f", epoch, mean_loss)
    return report


def train_classifier(net: Network, dataset, cfg: TrainConfig = None) -> TrainReport:
    """Fit a classifier to ``(input, label)`` pairs with binary cross-entropy."""
    cfg = cfg or TrainConfig(learning_rate=0.05)
    if net.topology != "classifier":
        raise ValueError("train_classifier() expects a classifier network")
    if not dataset:
        raise ValueError("empty dataset")
    X = np.stack([_as_input(x) for x, _ in dataset])
    y = np.array([float(l) for _, l in dataset])

    rng = np.random.default_rng(cfg.seed)
    report = TrainReport("classifier", asdict(cfg))
    li = net.logit_index
    for epoch in range(1, cfg.epochs + 1):
        losses, correct = [], 0
        for b, idx in enumerate(_batches(len(X), cfg.batch_size, rng)):
            _forward(net, X[idx], epoch, b)
            z = net.output_of(li)[:, 0]
            loss = bce_with_logits(z, y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            p = _sigmoid(z)
            correct += int(np.sum((p >= 0.5) == (y[idx] == 1)))
            net.backward(((p - y[idx]) / len(idx))[:, None], start=li)
            _sgd_step(net, cfg.learning_rate)
            losses.append(loss)
        report.epochs.append({"epoch": epoch, "mean_loss": float(np.mean(losses)),
                              "train_accuracy": correct / len(X)})
        log.info("epoch %d loss %.4f", epoch, report.epochs[-1]["mean_loss"])
    return report


def predict_proba(net: Network, inputs, batch_size=32):
    """Forward pass over a stack of inputs in chunks."""
    X = np.stack([_as_input(x) for x in inputs])
    out = [net.forward(X[i:i + batch_size]) for i in range(0, len(X), batch_size)]
    return np.concatenate(out)


def predict_mask(net: Network, spec, threshold=0.5, native=True):
    """Binary mask from a U-net; pixels with probability >= threshold are set.

    ``spec`` is a Spectrogram (prepared with ``dsp.network_input``) or an
    already prepared input array. With ``native=True`` a Spectrogram's mask
    is expanded back to its own shape over the pooling grid.
    """
    if net.topology != "unet":
        raise ValueError("predict_mask needs a unet network")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    _, rows, cols = net.input_shape
    if isinstance(spec, dsp.Spectrogram):
        x = dsp.network_input(spec, rows, cols)
    else:
        x = _as_input(spec)
    mask = net.forward(x[None])[0, 0] >= threshold
    if native and isinstance(spec, dsp.Spectrogram) and spec.shape != mask.shape:
        mask = dsp.unpool(mask, *spec.shape)
    return mask
