import numpy as np

from .layers import (ConcatSkip, Conv2d, Dense, GlobalAvgPool, MaxPool2, ReLU,
                     Sigmoid, Upsample2)

TOPOLOGIES = ("classifier", "unet")


class Network:
    """Ordered layers plus skip links, with forward and backward passes.

    Skip links are expressed by ``ConcatSkip`` layers that name the index of
    the earlier layer whose output they concatenate.
    """

    def __init__(self, layers, topology, input_shape):
        if topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {topology!r}")
        self.layers = list(layers)
        self.topology = topology
        self.input_shape = tuple(input_shape)
        self._outputs = None
        self.output_grads = {}
        self._check()

    @property
    def skip_links(self):
        return [(l.source, i) for i, l in enumerate(self.layers) if isinstance(l, ConcatSkip)]

    @property
    def logit_index(self):
        """Index of the layer producing the pre-sigmoid score."""
        if not isinstance(self.layers[-1], Sigmoid):
            return len(self.layers) - 1
        return len(self.layers) - 2

    @property
    def last_conv_index(self):
        idx = [i for i, l in enumerate(self.layers) if isinstance(l, Conv2d)]
        if not idx:
            raise ValueError("network has no conv2d layer")
        return idx[-1]

    def _check(self):
        for src, dst in self.skip_links:
            if not 0 <= src < dst:
                raise ValueError(f"skip link {src}->{dst} must point backwards")
        out = self.forward(np.zeros((1,) + self.input_shape))
        if self.topology == "classifier" and out.shape != (1, 1):
            raise ValueError(f"classifier must output a scalar, got {out.shape[1:]}")
        if self.topology == "unet" and out.shape[2:] != self.input_shape[1:]:
            raise ValueError(f"unet output {out.shape[2:]} differs from input {self.input_shape[1:]}")
        self._outputs = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == len(self.input_shape):
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match {self.input_shape}")
        outputs = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConcatSkip):
                x = layer.forward(x, outputs[layer.source])
            else:
                x = layer.forward(x)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite values after layer {i} ({layer.kind})")
            outputs.append(x)
        self._outputs = outputs
        return x

    def output_of(self, i):
        if self._outputs is None:
            raise RuntimeError("forward has not been run")
        return self._outputs[i]

    def backward(self, upstream, start=None, guided=False):
        """Backpropagate ``upstream`` (gradient w.r.t. the output of layer
        ``start``, default the last layer). Fills every layer's ``grads`` and
        returns the gradient w.r.t. the network input."""
        if self._outputs is None:
            raise RuntimeError("backward called before forward")
        start = len(self.layers) - 1 if start is None else start
        if upstream.shape != self._outputs[start].shape:
            raise ValueError(f"upstream gradient {upstream.shape} does not match "
                             f"output {self._outputs[start].shape}")
        pending = {}
        self.output_grads = {}
        g = np.asarray(upstream, dtype=np.float64)
        for i in range(start, -1, -1):
            if i in pending:
                g = g + pending.pop(i)
            self.output_grads[i] = g
            layer = self.layers[i]
            if isinstance(layer, ConcatSkip):
                g, g_skip = layer.backward(g)
                pending[layer.source] = pending.get(layer.source, 0) + g_skip
            else:
                g = layer.backward(g, guided=guided)
        return g

    def parameters(self):
        """``(layer_index, name, value, grad)`` in declaration order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                out.append((i, name, layer.params[name], layer.grads.get(name)))
        return out

    def n_params(self):
        return sum(p.size for _, _, p, _ in self.parameters())

    def zero_final_layer(self):
        """Zero the weights of the last parametrised layer (output becomes 0.5)."""
        for layer in reversed(self.layers):
            if layer.params:
                for v in layer.params.values():
                    v[...] = 0.0
                return

    def __repr__(self):
        body = "\n".join(f"  {i:2d} {l!r}" for i, l in enumerate(self.layers))
        return f"Network({self.topology}, input={self.input_shape})\n{body}"


def build_unet(input_shape=(1, 64, 64), widths=(8, 16), bottleneck=32, seed=0,
               output_bias=-4.0):
    """Small U-net: conv+relu then maxpool per encoder level, a bottleneck,
    and a mirrored decoder of upsample, skip concat, conv+relu; a 1x1 conv
    and sigmoid produce the mask probabilities.

    ``output_bias`` initialises the final bias near the log-odds of the
    expected mask density. Starting every pixel at 0.5 makes the batch Dice
    denominator so large that plain SGD barely moves.
    """
    rng = np.random.default_rng(seed)
    layers, skips = [], []
    ch = input_shape[0]
    for w in widths:
        layers += [Conv2d(ch, w, 3, rng), ReLU()]
        skips.append((len(layers) - 1, w))
        layers.append(MaxPool2())
        ch = w
    layers += [Conv2d(ch, bottleneck, 3, rng), ReLU()]
    ch = bottleneck
    for src, w in reversed(skips):
        layers += [Upsample2(), ConcatSkip(src), Conv2d(ch + w, w, 3, rng), ReLU()]
        ch = w
    head = Conv2d(ch, 1, 1, rng)
    head.params["b"][:] = output_bias
    layers += [head, Sigmoid()]
    return Network(layers, "unet", input_shape)


def build_classifier(input_shape=(1, 64, 64), widths=(8, 16, 16), seed=0):
    """Conv+relu+maxpool stages, global average pooling, dense, sigmoid."""
    rng = np.random.default_rng(seed)
    layers = []
    ch = input_shape[0]
    for w in widths:
        layers += [Conv2d(ch, w, 3, rng), ReLU(), MaxPool2()]
        ch = w
    layers += [GlobalAvgPool(), Dense(ch, 1, rng), Sigmoid()]
    return Network(layers, "classifier", input_shape)
