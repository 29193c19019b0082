"""Flat parameter vectors.

All trainable weights of a model live in one contiguous float64 vector,
addressed through a layout of named slots. Teacher averaging, snapshots and
gradient arithmetic operate on whole vectors, so layout equality is the single
precondition all of them share.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class LayoutMismatch(ValueError):
    """Raised when combining parameter vectors with different layouts."""


class ParamSlot(NamedTuple):
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1


@dataclass
class ParamVector:
    """Ordered, named float64 parameter storage.

    Arithmetic returns new vectors; nothing here mutates operands. `view`
    exposes a reshaped window into the flat storage for in-place
    initialization only.
    """

    values: np.ndarray
    layout: tuple[ParamSlot, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("parameter storage must be one-dimensional")
        expect = 0
        for slot in self.layout:
            if slot.offset != expect:
                raise ValueError(f"slot {slot.name!r} not contiguous at offset {slot.offset}")
            expect += slot.size
        if expect != self.values.size:
            raise ValueError(f"layout covers {expect} values, storage has {self.values.size}")

    @classmethod
    def zeros(cls, slots: Iterable[tuple[str, tuple[int, ...]]]) -> "ParamVector":
        layout = []
        offset = 0
        for name, shape in slots:
            slot = ParamSlot(name, tuple(int(d) for d in shape), offset)
            layout.append(slot)
            offset += slot.size
        return cls(np.zeros(offset, dtype=np.float64), tuple(layout))

    @property
    def size(self) -> int:
        return self.values.size

    def slot(self, name: str) -> ParamSlot:
        for s in self.layout:
            if s.name == name:
                return s
        raise KeyError(name)

    def view(self, name: str) -> np.ndarray:
        """Writable window into one slot, shaped like the parameter."""
        s = self.slot(name)
        return self.values[s.offset : s.offset + s.size].reshape(s.shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def _check(self, other: "ParamVector") -> None:
        if not isinstance(other, ParamVector):
            raise TypeError(f"expected ParamVector, got {type(other).__name__}")
        if not self.same_layout(other):
            raise LayoutMismatch("parameter vectors have different layouts")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return ParamVector(self.values + other.values, self.layout)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return ParamVector(self.values - other.values, self.layout)

    def __mul__(self, scalar: float) -> "ParamVector":
        return ParamVector(self.values * float(scalar), self.layout)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "ParamVector":
        return ParamVector(self.values / float(scalar), self.layout)

    def __neg__(self) -> "ParamVector":
        return ParamVector(-self.values, self.layout)

    def ema(self, other: "ParamVector", momentum: float) -> "ParamVector":
        """momentum * self + (1 - momentum) * other, elementwise."""
        self._check(other)
        m = float(momentum)
        if not 0.0 <= m <= 1.0:
            raise ValueError(f"momentum must be in [0, 1], got {m}")
        return ParamVector(m * self.values + (1.0 - m) * other.values, self.layout)


def mean_vectors(vectors: Sequence[ParamVector]) -> ParamVector:
    """Elementwise mean with a fixed left-to-right fold over `vectors`.

    The fold order is part of the contract: callers rely on bitwise
    reproducibility of the reduction.
    """
    if not vectors:
        raise ValueError("mean of zero vectors")
    acc = vectors[0].zeros_like()
    for v in vectors:
        acc = acc + v
    return acc / len(vectors)
