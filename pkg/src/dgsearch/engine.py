"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the attention policy needs are provided. Every op
returns a new :class:`Tensor` that remembers its parents and a closure
propagating the output gradient back to them; :func:`backward` runs the
closures in reverse topological order and then drops the trace.
"""

from __future__ import annotations

import contextlib
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from dgsearch.errors import CorruptFile, EmptySegment, MissingGrad, NonScalarLoss, ShapeMismatch, VersionMismatch

DTYPE = np.float64
LEAKY_SLOPE = 0.2
_dtype = DTYPE  # working precision; see ``precision``


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward: Callable | None = None, name: str = ""):
        self.data = np.asarray(data, dtype=_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        # never in place: the same gradient array may be handed to several parents
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a trace."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Temporarily build tensors in another float type (e.g. ``np.longdouble`` for reference evaluations)."""
    global _dtype
    prev, _dtype = _dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


def _result(data, parents, backward) -> Tensor:
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise and dense ops -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}") from None

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(out, (a, b), back)


def sub(a, b) -> Tensor:
    return add(a, neg(b))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)

    def back(g):
        a._accumulate(g * c)

    return _result(a.data * c, (a,), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}") from None

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(out, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _result(out, tensors, back)


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0

    def back(g):
        x._accumulate(np.where(pos, g, slope * g))

    return _result(np.where(pos, x.data, slope * x.data), (x,), back)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)

    def back(g):
        x._accumulate(g * out)

    return _result(out, (x,), back)


def log(x) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        x._accumulate(g / x.data)

    with np.errstate(divide="ignore"):
        return _result(np.log(x.data), (x,), back)


def total(x) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    x = _as_tensor(x)

    def back(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(np.sum(x.data), (x,), back)


def scatter_matrix(index: np.ndarray, num_rows: int) -> sp.csr_matrix:
    """Sparse ``num_rows x len(index)`` 0/1 matrix summing rows back onto ``index``."""
    k = len(index)
    return sp.csr_matrix((np.ones(k), (index, np.arange(k))), shape=(num_rows, k))


def gather_rows(x, index) -> Tensor:
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        gx = scatter_matrix(index, x.shape[0]) @ g.reshape(len(index), -1)
        x._accumulate(np.asarray(gx).reshape(x.shape))

    return _result(x.data[index], (x,), back)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), back)


def headwise_dot(x, a) -> Tensor:
    """``out[n, h] = x[n, h*d:(h+1)*d] . a[h]`` for ``x`` of shape ``N x (H*d)``, ``a`` of ``H x d``."""
    x, a = _as_tensor(x), _as_tensor(a)
    heads, d = a.shape
    if x.data.ndim != 2 or x.shape[1] != heads * d:
        raise ShapeMismatch(f"headwise_dot {x.shape} with {a.shape}")
    x3 = x.data.reshape(-1, heads, d)

    def back(g):
        if x.requires_grad:
            x._accumulate((g[:, :, None] * a.data[None]).reshape(x.shape))
        if a.requires_grad:
            a._accumulate(np.einsum("nh,nhd->hd", g, x3))

    return _result(np.einsum("nhd,hd->nh", x3, a.data), (x, a), back)


# -- segment ops ----------------------------------------------------------------


class Segments:
    """Sorted segment ids with the reduce plan cached; every segment non-empty."""

    __slots__ = ("ids", "num_segments", "starts", "counts")

    def __init__(self, ids, num_segments: int | None = None):
        ids = np.asarray(ids, dtype=np.int64)
        if num_segments is None:
            num_segments = int(ids.max()) + 1 if len(ids) else 0
        if len(ids) and (ids[0] < 0 or np.any(np.diff(ids) < 0)):
            raise ValueError("segment ids must be sorted and non-negative")
        counts = np.bincount(ids, minlength=num_segments) if len(ids) else np.zeros(num_segments, np.int64)
        if len(counts) > num_segments:
            raise ValueError("segment id exceeds num_segments")
        if np.any(counts == 0):
            raise EmptySegment(f"segment {int(np.flatnonzero(counts == 0)[0])} has no entries")
        self.ids = ids
        self.num_segments = num_segments
        self.counts = counts
        self.starts = np.r_[0, np.cumsum(counts)[:-1]].astype(np.int64)

    def __len__(self):
        return len(self.ids)

    def reduce_sum(self, values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(values, self.starts, axis=0)

    def reduce_max(self, values: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(values, self.starts, axis=0)


def _check_segments(x: Tensor, segs: Segments) -> None:
    if x.shape[0] != len(segs):
        raise ShapeMismatch(f"{x.shape[0]} rows for {len(segs)} segment ids")


def segment_softmax(x, segs: Segments) -> Tensor:
    """Softmax over rows within each segment (columns independent)."""
    x = _as_tensor(x)
    _check_segments(x, segs)
    shifted = x.data - segs.reduce_max(x.data)[segs.ids]
    e = np.exp(shifted)
    y = e / segs.reduce_sum(e)[segs.ids]

    def back(g):
        dot = segs.reduce_sum(g * y)[segs.ids]
        x._accumulate(y * (g - dot))

    return _result(y, (x,), back)


def segment_log_softmax(x, segs: Segments) -> Tensor:
    x = _as_tensor(x)
    _check_segments(x, segs)
    shifted = x.data - segs.reduce_max(x.data)[segs.ids]
    lse = np.log(segs.reduce_sum(np.exp(shifted)))
    y = shifted - lse[segs.ids]
    soft = np.exp(y)

    def back(g):
        x._accumulate(g - soft * segs.reduce_sum(g)[segs.ids])

    return _result(y, (x,), back)


def segment_weighted_sum(values, weights, segs: Segments) -> Tensor:
    """``out[s] = sum over rows e of s of weights[e] * values[e]``, head-wise.

    ``values`` is ``E x (H*d)``, ``weights`` is ``E x H``; head ``h`` owns the
    ``h``-th block of ``d`` value columns.
    """
    values, weights = _as_tensor(values), _as_tensor(weights)
    _check_segments(values, segs)
    E, width = values.shape
    heads = weights.shape[1]
    if weights.shape[0] != E or width % heads:
        raise ShapeMismatch(f"values {values.shape} vs weights {weights.shape}")
    d = width // heads
    v3 = values.data.reshape(E, heads, d)
    out = segs.reduce_sum((v3 * weights.data[:, :, None]).reshape(E, width))

    def back(g):
        ge = g[segs.ids].reshape(E, heads, d)
        if values.requires_grad:
            values._accumulate((ge * weights.data[:, :, None]).reshape(E, width))
        if weights.requires_grad:
            weights._accumulate(np.einsum("ehd,ehd->eh", ge, v3))

    return _result(out, (values, weights), back)


def attend(z, alpha, src: np.ndarray, segs: Segments) -> Tensor:
    """``out[t] = sum over edges e into t of alpha[e] * z[src[e]]``, head-wise.

    Same result as ``segment_weighted_sum(gather_rows(z, src), alpha, segs)``
    but computed as one block-diagonal sparse product (one block per head).
    """
    z, alpha = _as_tensor(z), _as_tensor(alpha)
    n, width = z.shape
    E_, heads = alpha.shape
    if E_ != len(segs) or len(src) != E_ or width % heads:
        raise ShapeMismatch(f"attend z {z.shape}, alpha {alpha.shape}, {len(src)} sources")
    d = width // heads
    indices = (np.arange(heads)[:, None] * n + src[None, :]).ravel()
    counts = np.tile(np.bincount(segs.ids, minlength=n), heads)
    indptr = np.r_[0, np.cumsum(counts)]
    A = sp.csr_matrix((alpha.data.T.ravel(), indices, indptr), shape=(heads * n, heads * n))
    z_stack = z.data.reshape(n, heads, d).transpose(1, 0, 2).reshape(heads * n, d)
    out = (A @ z_stack).reshape(heads, n, d).transpose(1, 0, 2).reshape(n, width)

    def back(g):
        g_stack = g.reshape(n, heads, d).transpose(1, 0, 2).reshape(heads * n, d)
        if z.requires_grad:
            gz = (A.T @ g_stack).reshape(heads, n, d).transpose(1, 0, 2).reshape(n, width)
            z._accumulate(gz)
        if alpha.requires_grad:
            g3 = g.reshape(n, heads, d)
            z3 = z.data.reshape(n, heads, d)
            alpha._accumulate(np.einsum("ehd,ehd->eh", g3[segs.ids], z3[src]))

    return _result(out, (z, alpha), back)


def mean_pool(x, segs: Segments) -> Tensor:
    x = _as_tensor(x)
    _check_segments(x, segs)
    counts = segs.counts.reshape((-1,) + (1,) * (x.data.ndim - 1)).astype(x.data.dtype)

    def back(g):
        x._accumulate((g / counts)[segs.ids])

    return _result(segs.reduce_sum(x.data) / counts, (x,), back)


def segment_sum(x, segs: Segments) -> Tensor:
    x = _as_tensor(x)
    _check_segments(x, segs)

    def back(g):
        x._accumulate(g[segs.ids])

    return _result(segs.reduce_sum(x.data), (x,), back)


# -- backward pass -------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node.grad = None
            node._parents = ()
            node._backward = None


# -- parameters and optimiser ----------------------------------------------------


class ParamStore:
    """Named parameters plus Adam moment accumulators."""

    def __init__(self, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.betas = betas
        self.eps = eps

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.params.items()}

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def set_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            t = self.params[k]
            if t.shape != np.shape(v):
                raise ShapeMismatch(f"{k}: {np.shape(v)} vs {t.shape}")
            t.data = np.array(v, dtype=DTYPE)


def optimizer_step(store: ParamStore, lr: float) -> None:
    """One Adam step (descending the gradients); grads are cleared afterwards."""
    if all(t.grad is None for t in store.params.values()):
        raise MissingGrad("no parameter has a gradient; run backward first")
    b1, b2 = store.betas
    store.step_count += 1
    t = store.step_count
    c1, c2 = 1 - b1**t, 1 - b2**t
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + store.eps)
    store.zero_grad()


# -- checkpoint container --------------------------------------------------------

MAGIC = b"DGSCKPT\n"
FORMAT_VERSION = 1


def write_checkpoint(path, config: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> None:
    """Magic, 8-byte little-endian header length, JSON header, then raw ``<f8`` data."""
    tensors = list(tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "tensors": [{"name": n, "shape": list(np.shape(a))} for n, a in tensors],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for _, a in tensors:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptFile(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack("<Q", blob[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(blob[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptFile(f"{path}: unreadable header") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {header.get('format_version')}, expected {FORMAT_VERSION}")
    try:
        specs = [(t["name"], tuple(int(s) for s in t["shape"])) for t in header["tensors"]]
    except (KeyError, TypeError, ValueError):
        raise CorruptFile(f"{path}: malformed tensor table") from None
    need = sum(int(np.prod(s)) for _, s in specs) * 8
    data = blob[start + hlen :]
    if len(data) != need:
        raise CorruptFile(f"{path}: {len(data)} data bytes, expected {need}")
    out = []
    pos = 0
    for name, shape in specs:
        n = int(np.prod(shape)) * 8
        out.append((name, np.frombuffer(data[pos : pos + n], dtype="<f8").reshape(shape).astype(DTYPE)))
        pos += n
    return header, out
