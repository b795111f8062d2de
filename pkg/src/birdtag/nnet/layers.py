"""Differentiable layers on float64 NCHW arrays.

Every layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``grads`` during ``backward`` (overwriting,
not accumulating). ``backward`` returns the gradient with respect to the
layer input.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad, guided=False):
        raise NotImplementedError

    def spec(self):
        return {"kind": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


def _glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class Conv2d(Layer):
    """Stride-1 convolution with zero 'same' padding; odd square kernels."""
    kind = "conv2d"

    def __init__(self, in_ch, out_ch, k=3, rng=None):
        super().__init__()
        if k % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = _glorot(rng, (out_ch, in_ch, k, k), in_ch * k * k, out_ch * k * k)
        self.params["b"] = np.zeros(out_ch)
        self._cache = None

    def spec(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch, "k": self.k}

    def _cols(self, x):
        n, c, h, w = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (self.k, self.k), axis=(2, 3))
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * self.k * self.k)

    def forward(self, x):
        if x.shape[1] != self.in_ch:
            raise ValueError(f"conv2d expects {self.in_ch} channels, got {x.shape[1]}")
        n, _, h, w = x.shape
        cols = self._cols(x)
        wm = self.params["w"].reshape(self.out_ch, -1)
        out = cols @ wm.T + self.params["b"]
        self._cache = (x.shape, cols)
        return out.reshape(n, h, w, self.out_ch).transpose(0, 3, 1, 2)

    def backward(self, grad, guided=False):
        (n, c, h, w), cols = self._cache
        k, p = self.k, self.k // 2
        gm = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        self.grads["w"] = (gm.T @ cols).reshape(self.params["w"].shape)
        self.grads["b"] = gm.sum(axis=0)
        dcols = (gm @ self.params["w"].reshape(self.out_ch, -1)).reshape(n, h, w, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + h, p:p + w]


class ReLU(Layer):
    """Rectifier. With ``guided=True`` the backward pass also drops negative
    incoming gradients (guided backpropagation)."""
    kind = "relu"

    def forward(self, x):
        self._pos = x > 0
        return np.where(self._pos, x, 0.0)

    def backward(self, grad, guided=False):
        g = np.where(self._pos, grad, 0.0)
        if guided:
            g = np.where(grad > 0, g, 0.0)
        return g


class MaxPool2(Layer):
    kind = "maxpool2"

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2 needs even spatial size, got {h}x{w}")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
        idx = blocks.argmax(axis=-1)  # first maximum wins ties
        self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad, guided=False):
        (n, c, h, w), idx = self._cache
        blocks = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        blocks = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return blocks.reshape(n, c, h, w)


class Upsample2(Layer):
    """Nearest-neighbour 2x upsampling."""
    kind = "upsample2"

    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad, guided=False):
        n, c, h, w = grad.shape
        return grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class ConcatSkip(Layer):
    """Concatenate the running tensor with the output of an earlier layer."""
    kind = "concat_skip"

    def __init__(self, source):
        super().__init__()
        self.source = source

    def spec(self):
        return {"kind": self.kind, "source": self.source}

    def forward(self, x, skip):
        if x.shape[2:] != skip.shape[2:]:
            raise ValueError(f"skip shape {skip.shape[2:]} does not match {x.shape[2:]}")
        self._split = x.shape[1]
        return np.concatenate([x, skip], axis=1)

    def backward(self, grad, guided=False):
        return grad[:, :self._split], grad[:, self._split:]


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad, guided=False):
        n, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self._shape).copy()


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = _glorot(rng, (n_out, n_in), n_in, n_out)
        self.params["b"] = np.zeros(n_out)

    def spec(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}

    def forward(self, x):
        self._x = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, grad, guided=False):
        self.grads["w"] = grad.T @ self._x
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["w"]


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        self._y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._y

    def backward(self, grad, guided=False):
        return grad * self._y * (1.0 - self._y)


LAYER_KINDS = {cls.kind: cls for cls in
               (Conv2d, ReLU, MaxPool2, Upsample2, ConcatSkip, GlobalAvgPool, Dense, Sigmoid)}


def layer_from_spec(spec):
    spec = dict(spec)
    cls = LAYER_KINDS[spec.pop("kind")]
    return cls(**spec)
