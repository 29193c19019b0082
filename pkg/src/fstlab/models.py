"""Two small trainable architectures: an MLP classifier and a per-pixel
convolutional segmenter.

Both are expressed as static autodiff graphs with anchors:
``x`` (input feed), ``logits``, ``probs``, ``labels``/``mask`` (loss feeds)
and ``loss`` (masked-mean cross-entropy). The segmenter preserves H x W
end-to-end (stride 1, same padding), so logits are (B, H, W, C); the MLP
produces (B, C).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph
from .params import ParamVector

MLP = "mlp"
CONV_SEG = "conv-seg"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    widths: full layer-size chain. For ``mlp`` it runs input..classes, e.g.
    (2, 16, 16, 2). For ``conv-seg`` it lists the output channels of each
    3x3 conv layer and must end in ``num_classes``, e.g. (8, 8, 3).
    """

    kind: str
    widths: tuple[int, ...]
    num_classes: int
    in_features: int = 2  # mlp only
    in_channels: int = 1  # conv-seg only
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in (MLP, CONV_SEG):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ValueError(f"layer widths must be positive, got {self.widths}")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.widths[-1] != self.num_classes:
            raise ValueError("last width must equal the class count")
        if self.kind == MLP and self.widths[0] != self.in_features:
            raise ValueError("mlp widths must start at the input feature count")
        if self.kind == CONV_SEG and self.kernel % 2 == 0:
            raise ValueError("conv kernel must be odd for same padding")


def mlp_spec(in_features: int = 2, hidden: tuple[int, ...] = (16, 16), num_classes: int = 2) -> ModelSpec:
    return ModelSpec(MLP, (in_features, *hidden, num_classes), num_classes, in_features=in_features)


def conv_seg_spec(num_classes: int = 3, hidden: tuple[int, ...] = (8, 8), in_channels: int = 1) -> ModelSpec:
    return ModelSpec(CONV_SEG, (*hidden, num_classes), num_classes, in_channels=in_channels)


def build(spec: ModelSpec, seed: int) -> tuple[Graph, ParamVector]:
    """Construct the graph and a freshly initialized parameter vector.

    Weights are uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)) per
    layer; biases start at zero and consume no random draws. Same spec and
    seed give bitwise-identical parameters.
    """
    g = Graph()
    if spec.kind == MLP:
        x = g.input("x", (None, spec.in_features))
        fans = list(zip(spec.widths[:-1], spec.widths[1:]))
        h = x
        for i, (fin, fout) in enumerate(fans):
            h = g.add_bias(g.matmul(h, g.param(f"w{i}", (fin, fout))), g.param(f"b{i}", (fout,)))
            if i < len(fans) - 1:
                h = g.relu(h)
        logits = h
    else:
        k = spec.kernel
        x = g.input("x", (None, None, None, spec.in_channels))
        chain = (spec.in_channels, *spec.widths)
        fans = list(zip(chain[:-1], chain[1:]))
        h = x
        for i, (cin, cout) in enumerate(fans):
            h = g.add_bias(g.conv2d(h, g.param(f"w{i}", (k, k, cin, cout))), g.param(f"b{i}", (cout,)))
            if i < len(fans) - 1:
                h = g.relu(h)
        logits = h
    probs = g.softmax(logits)
    labels = g.input("labels")
    mask = g.input("mask")
    loss = g.cross_entropy(logits, labels, mask)
    g.anchors.update(x=x, logits=logits, probs=probs, labels=labels, mask=mask, loss=loss)

    params = g.make_params()
    rng = np.random.default_rng(seed)
    for i, (fin, fout) in enumerate(fans):
        # conv fan-in counts the receptive field; fan_in * fan_out is then
        # exactly the weight count in both cases
        fan_in = fin if spec.kind == MLP else fin * spec.kernel * spec.kernel
        a = np.sqrt(6.0 / (fan_in + fout))
        w = params.view(f"w{i}")
        w[...] = rng.uniform(-a, a, size=w.shape)
    return g, params


def predict(graph: Graph, params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Class probabilities: per sample for the MLP, per pixel for conv-seg."""
    return graph.forward(params, {"x": x}, graph.anchors["probs"])
