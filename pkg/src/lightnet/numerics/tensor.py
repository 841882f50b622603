"""Dense tensors and a recording tape for reverse-mode gradients.

A :class:`Tensor` is an immutable wrapper around a C-contiguous numpy array
(row-major). Primitive ops live in :mod:`lightnet.numerics.ops` and
:mod:`lightnet.numerics.scan_ops`; every primitive pushes one node onto each
active :class:`Tape` that tracks one of its inputs. ``Tape.gradient`` replays
the adjoints of those nodes in exact reverse order of recording.

    with Tape() as tape:
        loss = f(w)
    (gw,) = tape.gradient(loss, [w])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}
_FLOATS = (np.dtype(np.float32), np.dtype(np.float64))


def as_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ValueError(f"unknown dtype {dtype!r}, expected one of {sorted(DTYPES)}")
        dtype = DTYPES[dtype]
    dt = np.dtype(dtype)
    if dt not in _FLOATS:
        raise ValueError(f"unsupported dtype {dt}, only float32/float64")
    return dt


class Tensor:
    """Immutable dense real array.

    ``requires_grad`` marks a leaf (parameter) that every tape tracks
    automatically; other inputs can be tracked with :meth:`Tape.watch`.
    """

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOATS else np.float64
        arr = np.array(arr, dtype=as_dtype(dtype), order="C", copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path for op outputs: no copy
        t = cls.__new__(cls)
        arr = np.asarray(arr)
        if arr.dtype not in _FLOATS:
            arr = arr.astype(np.float64)
        if not arr.flags.c_contiguous:
            arr = np.array(arr, order="C")
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t.name = None
        return t

    # -- metadata ---------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- operator sugar (implementations in ops) ---------------------------
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __rmatmul__(self, other):
        return _ops().matmul(other, self)

    def __getitem__(self, idx):
        return _ops().getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return _ops().transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return _ops().transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return _ops().sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return _ops().mean(self, axis, keepdims)


def _ops():
    from lightnet.numerics import ops

    return ops


def tensor(data, dtype=None, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def parameter(data, dtype=None, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

Backward = Callable[..., Sequence]

_ACTIVE: list["Tape"] = []


class _Node:
    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Ordered record of primitive ops.

    A non-persistent tape stops recording once :meth:`gradient` has been
    called and refuses a second extraction.
    """

    def __init__(self, persistent: bool = False):
        self.persistent = persistent
        self._nodes: list[_Node] = []
        self._tracked: dict[int, Tensor] = {}
        self._recording = True
        self._extracted = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._tracked[id(t)] = t

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def _push(self, inputs, outputs, backward) -> None:
        self._nodes.append(_Node(inputs, outputs, backward))
        for o in outputs:
            self._tracked[id(o)] = o

    @property
    def op_names(self) -> list[str]:
        return [getattr(n.backward, "__qualname__", "?").split(".<locals>")[0] for n in self._nodes]

    def gradient(self, target: Tensor, sources: Sequence[Tensor], seed=None) -> list[Tensor]:
        """Adjoints of ``target`` with respect to each of ``sources``.

        ``seed`` is the incoming cotangent (defaults to ones, so a scalar
        target gives the plain gradient).
        """
        if self._extracted and not self.persistent:
            raise RuntimeError("gradient() already called on a non-persistent tape")
        self._extracted = True
        if not self.persistent:
            self._recording = False

        g0 = np.ones_like(target.data) if seed is None else np.asarray(seed, dtype=target.dtype)
        if g0.shape != target.shape:
            raise ValueError(f"seed shape {g0.shape} does not match target shape {target.shape}")
        adj: dict[int, np.ndarray] = {id(target): g0}

        for node in reversed(self._nodes):
            gouts = [adj.get(id(o)) for o in node.outputs]
            if all(g is None for g in gouts):
                continue
            gouts = [np.zeros_like(o.data) if g is None else g for o, g in zip(node.outputs, gouts)]
            gins = node.backward(*gouts)
            for x, g in zip(node.inputs, gins):
                if g is None or not self.tracks(x):
                    continue
                if g.shape != x.shape:
                    raise AssertionError(f"adjoint shape {g.shape} != input shape {x.shape}")
                k = id(x)
                adj[k] = adj[k] + g if k in adj else g
        return [Tensor._wrap(adj[id(s)]) if id(s) in adj else Tensor._wrap(np.zeros_like(s.data)) for s in sources]


def record(inputs: Sequence[Tensor], outputs: Sequence[Tensor], backward: Backward) -> None:
    """Push a node onto every active tape that tracks one of ``inputs``."""
    for tape in _ACTIVE:
        if tape._recording and any(tape.tracks(x) for x in inputs):
            tape._push(tuple(inputs), tuple(outputs), backward)


def is_recording() -> bool:
    return any(t._recording for t in _ACTIVE)
