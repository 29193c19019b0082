"""Minimal dense reverse-mode autodiff over a static graph.

Tensors are C-contiguous float64 numpy arrays (integer arrays for class-id
feeds). A `Graph` is built once per model: nodes are appended in topological
order, so the forward pass is a single in-order sweep and the backward pass is
the exact reverse sweep. One graph instance serves one thread; `forward`
caches the values the following `backward` consumes.

Supported operations: matmul, bias add, ReLU, 3x3-style same-padding
stride-1 convolution, softmax, fused softmax cross-entropy, and a full `sum`
reduction for building scalar test losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamVector


class GraphError(ValueError):
    """Shape or value problem in a graph evaluation, naming the node."""


@dataclass(frozen=True)
class Node:
    idx: int
    op: str
    inputs: tuple[int, ...]
    name: str = ""
    meta: tuple = ()

    def label(self) -> str:
        suffix = f" {self.name!r}" if self.name else ""
        return f"node {self.idx} ({self.op}{suffix})"


class Graph:
    """Static computation graph with named inputs and parameters."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.param_slots: list[tuple[str, tuple[int, ...]]] = []
        self.input_shapes: dict[str, tuple] = {}
        # anchor node ids ("x", "logits", "probs", "loss", ...) set by builders
        self.anchors: dict[str, int] = {}
        self._values: dict[int, np.ndarray] = {}
        self._aux: dict[int, tuple] = {}
        self._params: ParamVector | None = None
        self._last_target: int | None = None

    # ---- construction ----------------------------------------------------

    def _add(self, op: str, inputs: tuple[int, ...], name: str = "", meta: tuple = ()) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise GraphError(f"op {op!r} references unknown node {i}")
        node = Node(len(self.nodes), op, inputs, name, meta)
        self.nodes.append(node)
        return node.idx

    def input(self, name: str, shape: tuple | None = None) -> int:
        """Placeholder fed at forward time. `shape` entries of None are wildcards."""
        if shape is not None:
            self.input_shapes[name] = tuple(shape)
        return self._add("input", (), name=name)

    def param(self, name: str, shape: tuple[int, ...]) -> int:
        if any(d <= 0 for d in shape):
            raise GraphError(f"parameter {name!r} has non-positive dimension {shape}")
        if any(n == name for n, _ in self.param_slots):
            raise GraphError(f"duplicate parameter name {name!r}")
        self.param_slots.append((name, tuple(int(d) for d in shape)))
        return self._add("param", (), name=name)

    def matmul(self, a: int, b: int) -> int:
        return self._add("matmul", (a, b))

    def add_bias(self, a: int, b: int) -> int:
        return self._add("add_bias", (a, b))

    def relu(self, a: int) -> int:
        return self._add("relu", (a,))

    def conv2d(self, x: int, w: int) -> int:
        """Stride-1, zero-padded ("same") 2-D convolution, odd kernel only."""
        return self._add("conv2d", (x, w))

    def softmax(self, a: int) -> int:
        return self._add("softmax", (a,))

    def cross_entropy(self, logits: int, labels: int, mask: int) -> int:
        """Masked-mean softmax cross-entropy over class-id labels."""
        return self._add("cross_entropy", (logits, labels, mask))

    def sum(self, a: int) -> int:
        return self._add("sum", (a,))

    def make_params(self) -> ParamVector:
        return ParamVector.zeros(self.param_slots)

    # ---- evaluation ------------------------------------------------------

    def _required(self, target: int) -> list[int]:
        needed = set()
        stack = [target]
        while stack:
            i = stack.pop()
            if i in needed:
                continue
            needed.add(i)
            stack.extend(self.nodes[i].inputs)
        return sorted(needed)

    def forward(self, params: ParamVector, feeds: dict[str, np.ndarray], node: int | None = None) -> np.ndarray:
        """Evaluate up to `node` (default: last added) and cache intermediates."""
        if not self.nodes:
            raise GraphError("empty graph")
        target = len(self.nodes) - 1 if node is None else node
        self._values = {}
        self._aux = {}
        self._params = params
        self._last_target = target
        for i in self._required(target):
            self._values[i] = self._eval(self.nodes[i], params, feeds)
        return self._values[target]

    def _eval(self, node: Node, params: ParamVector, feeds: dict[str, np.ndarray]) -> np.ndarray:
        v = self._values
        if node.op == "input":
            if node.name not in feeds:
                raise GraphError(f"{node.label()} has no feed")
            arr = np.asarray(feeds[node.name])
            if arr.dtype.kind == "f":
                arr = np.ascontiguousarray(arr, dtype=np.float64)
            declared = self.input_shapes.get(node.name)
            if declared is not None:
                ok = len(arr.shape) == len(declared) and all(
                    d is None or d == s for d, s in zip(declared, arr.shape)
                )
                if not ok:
                    raise GraphError(f"{node.label()} expects shape {declared}, got {arr.shape}")
            return arr
        if node.op == "param":
            return params.view(node.name)
        if node.op == "matmul":
            a, b = v[node.inputs[0]], v[node.inputs[1]]
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                raise GraphError(f"{node.label()} cannot multiply {a.shape} by {b.shape}")
            return a @ b
        if node.op == "add_bias":
            a, b = v[node.inputs[0]], v[node.inputs[1]]
            if b.ndim != 1 or a.shape[-1] != b.shape[0]:
                raise GraphError(f"{node.label()} bias {b.shape} does not match {a.shape}")
            return a + b
        if node.op == "relu":
            return np.maximum(v[node.inputs[0]], 0.0)
        if node.op == "conv2d":
            x, w = v[node.inputs[0]], v[node.inputs[1]]
            return self._conv_forward(node, x, w)
        if node.op == "softmax":
            a = v[node.inputs[0]]
            z = a - a.max(axis=-1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=-1, keepdims=True)
        if node.op == "cross_entropy":
            return self._ce_forward(node, v[node.inputs[0]], v[node.inputs[1]], v[node.inputs[2]])
        if node.op == "sum":
            return np.asarray(v[node.inputs[0]].sum())
        raise GraphError(f"{node.label()} has unknown op")

    def _conv_forward(self, node: Node, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or w.ndim != 4:
            raise GraphError(f"{node.label()} wants x (B,H,W,Cin) and w (kh,kw,Cin,Cout)")
        kh, kw, cin, cout = w.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise GraphError(f"{node.label()} supports odd kernels only, got {kh}x{kw}")
        if x.shape[3] != cin:
            raise GraphError(f"{node.label()} input channels {x.shape[3]} != kernel {cin}")
        cols = _im2col(x, kh, kw)  # (B, H, W, kh*kw*cin)
        b, h, wd = x.shape[:3]
        out = cols.reshape(-1, kh * kw * cin) @ w.reshape(kh * kw * cin, cout)
        self._aux[node.idx] = (cols,)
        return out.reshape(b, h, wd, cout)

    def _ce_forward(self, node: Node, logits, labels, mask) -> np.ndarray:
        c = logits.shape[-1]
        flat = logits.reshape(-1, c)
        lab = np.asarray(labels)
        if lab.dtype.kind not in "iu":
            raise GraphError(f"{node.label()} labels must be integers")
        lab = lab.reshape(-1).astype(np.int64)
        msk = np.asarray(mask, dtype=np.float64).reshape(-1)
        if lab.size != flat.shape[0] or msk.size != flat.shape[0]:
            raise GraphError(
                f"{node.label()} logits rows {flat.shape[0]} vs labels {lab.size} / mask {msk.size}"
            )
        if lab.size and (lab.min() < 0 or lab.max() >= c):
            raise GraphError(f"{node.label()} label id outside [0, {c})")
        m = flat.max(axis=-1, keepdims=True)
        z = flat - m
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        count = msk.sum()
        if count > 0:
            loss = -(msk * logp[np.arange(lab.size), lab]).sum() / count
        else:
            loss = 0.0  # no contributing pixels: defined as zero loss
        self._aux[node.idx] = (np.exp(logp), lab, msk, count, logits.shape)
        return np.asarray(loss)

    # ---- differentiation ---------------------------------------------------

    def backward(self, node: int | None = None) -> ParamVector:
        """Gradient of the cached scalar at `node` w.r.t. all parameters."""
        target = self._last_target if node is None else node
        if target is None or self._params is None or target not in self._values:
            raise GraphError("backward requires a completed forward pass")
        out = self._values[target]
        if np.ndim(out) != 0:
            raise GraphError(f"{self.nodes[target].label()} is not scalar; cannot backpropagate")
        grads: dict[int, np.ndarray] = {target: np.asarray(1.0)}
        gparams = self._params.zeros_like()
        for i in sorted(self._values, reverse=True):
            if i not in grads:
                continue
            node_i = self.nodes[i]
            g = grads[i]
            if node_i.op == "param":
                gparams.view(node_i.name)[...] += g
                continue
            for slot, contrib in self._vjp(node_i, g):
                if slot in grads:
                    grads[slot] = grads[slot] + contrib
                else:
                    grads[slot] = contrib
        return gparams

    def _vjp(self, node: Node, g: np.ndarray):
        v = self._values
        if node.op == "input":
            return []
        if node.op == "matmul":
            a, b = v[node.inputs[0]], v[node.inputs[1]]
            return [(node.inputs[0], g @ b.T), (node.inputs[1], a.T @ g)]
        if node.op == "add_bias":
            axes = tuple(range(g.ndim - 1))
            return [(node.inputs[0], g), (node.inputs[1], g.sum(axis=axes))]
        if node.op == "relu":
            a = v[node.inputs[0]]
            return [(node.inputs[0], g * (a > 0.0))]
        if node.op == "conv2d":
            return self._conv_backward(node, g)
        if node.op == "softmax":
            p = v[node.idx]
            dot = (g * p).sum(axis=-1, keepdims=True)
            return [(node.inputs[0], p * (g - dot))]
        if node.op == "cross_entropy":
            probs, lab, msk, count, shape = self._aux[node.idx]
            if count == 0:
                return [(node.inputs[0], np.zeros(shape))]
            delta = probs.copy()
            delta[np.arange(lab.size), lab] -= 1.0
            dlogits = delta * (msk / count)[:, None] * g
            return [(node.inputs[0], dlogits.reshape(shape))]
        if node.op == "sum":
            return [(node.inputs[0], np.broadcast_to(g, v[node.inputs[0]].shape))]
        raise GraphError(f"{node.label()} has no gradient rule")

    def _conv_backward(self, node: Node, g: np.ndarray):
        x = self._values[node.inputs[0]]
        w = self._values[node.inputs[1]]
        (cols,) = self._aux[node.idx]
        kh, kw, cin, cout = w.shape
        b, h, wd = x.shape[:3]
        gmat = g.reshape(-1, cout)
        dw = (cols.reshape(-1, kh * kw * cin).T @ gmat).reshape(kh, kw, cin, cout)
        dcols = (gmat @ w.reshape(kh * kw * cin, cout).T).reshape(b, h, wd, kh * kw, cin)
        dx = _col2im(dcols, (b, h, wd, cin), kh, kw)
        return [(node.inputs[0], dx), (node.inputs[1], dw)]


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    b, h, w, c = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((b, h, w, kh * kw, c), dtype=np.float64)
    k = 0
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, :, k, :] = xp[:, di : di + h, dj : dj + w, :]
            k += 1
    return cols.reshape(b, h, w, kh * kw * c)


def _col2im(dcols: np.ndarray, x_shape: tuple, kh: int, kw: int) -> np.ndarray:
    b, h, w, c = x_shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    dxp = np.zeros((b, h + 2 * ph, w + 2 * pw, c), dtype=np.float64)
    k = 0
    for di in range(kh):
        for dj in range(kw):
            dxp[:, di : di + h, dj : dj + w, :] += dcols[:, :, :, k, :]
            k += 1
    return dxp[:, ph : ph + h, pw : pw + w, :]


def forward(graph: Graph, params: ParamVector, feeds: dict[str, np.ndarray], node: int | None = None) -> np.ndarray:
    return graph.forward(params, feeds, node)


def backward(graph: Graph, node: int | None = None) -> ParamVector:
    return graph.backward(node)
