"""Shared test helpers: finite-difference gradients and random small models."""

from __future__ import annotations

import numpy as np

from fstlab import models
from fstlab.autodiff import Graph
from fstlab.params import ParamVector


def loss_at(graph: Graph, params: ParamVector, feeds: dict) -> float:
    return float(graph.forward(params, feeds, graph.anchors["loss"]))


def fd_grad(graph: Graph, params: ParamVector, feeds: dict, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of the loss w.r.t. every parameter."""
    base = params.values
    out = np.empty_like(base)
    for i in range(base.size):
        bumped = params.copy()
        bumped.values[i] = base[i] + h
        f_plus = loss_at(graph, bumped, feeds)
        bumped.values[i] = base[i] - h
        f_minus = loss_at(graph, bumped, feeds)
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return out


def _relu_preacts(graph: Graph) -> list[np.ndarray]:
    """Values feeding each ReLU in the last forward pass (kink proximity probe)."""
    return [graph._values[n.inputs[0]] for n in graph.nodes if n.op == "relu" and n.inputs[0] in graph._values]


def random_model_case(rng: np.random.Generator, kink_margin: float = 1e-4):
    """A random small model plus feeds, resampled until no ReLU input sits
    within `kink_margin` of zero (finite differences are meaningless at the
    kink)."""
    for _ in range(50):
        if rng.uniform() < 0.5:
            n_in = int(rng.integers(2, 5))
            hidden = tuple(int(rng.integers(3, 7)) for _ in range(int(rng.integers(1, 3))))
            classes = int(rng.integers(2, 5))
            spec = models.mlp_spec(n_in, hidden, classes)
            batch = int(rng.integers(1, 4))
            x = rng.normal(size=(batch, n_in))
            label_shape = (batch,)
        else:
            classes = int(rng.integers(2, 4))
            hidden = tuple(int(rng.integers(2, 4)) for _ in range(int(rng.integers(1, 3))))
            spec = models.conv_seg_spec(classes, hidden, in_channels=int(rng.integers(1, 3)))
            batch = int(rng.integers(1, 3))
            h, w = int(rng.integers(3, 6)), int(rng.integers(3, 6))
            x = rng.normal(size=(batch, h, w, spec.in_channels))
            label_shape = (batch, h, w)
        graph, params = models.build(spec, int(rng.integers(2**31)))
        params.values[:] = rng.normal(scale=0.7, size=params.size)
        labels = rng.integers(0, classes, size=label_shape)
        mask = (rng.uniform(size=label_shape) < 0.7).astype(np.float64)
        if mask.sum() == 0:
            mask.flat[0] = 1.0
        feeds = {"x": x, "labels": labels, "mask": mask}
        loss_at(graph, params, feeds)
        if all(np.abs(p).min() > kink_margin for p in _relu_preacts(graph)):
            return graph, params, feeds
    raise AssertionError("could not sample a kink-free case")


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale))
