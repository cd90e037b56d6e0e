"""NumPy-backed tensors with reverse-mode autodiff on an explicit gradient tape.

Everything the encoder and the contrastive losses need runs through this
module: dense float arrays, a small set of differentiable primitives, and a
``GradTape`` that records executed operations so ``backward`` can replay
them in reverse. Forward math is plain numpy. Float64 is the default
precision (oracle comparisons need the headroom); float32 is meant for
timing runs.

Conventions:
- Tensors are immutable once an operation has written them. Only the
  optimizer mutates parameter ``.data``, from the single training thread.
- Ops record onto the active tape only when gradients can flow (a tape is
  active and some input requires grad), so running under ``no_grad()``
  costs no tape memory and no saved inputs.
- ``backward`` walks the tape in reverse with a scratch gradient table and
  accumulates into ``.grad`` of leaf tensors; repeated calls without a
  ``zero_grad`` add up.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

DEFAULT_DTYPE = np.float64
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A dense float array plus the bookkeeping reverse-mode autodiff needs."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(dtype or DEFAULT_DTYPE)
        elif dtype is not None and arr.dtype != np.dtype(dtype):
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None  # same-shape ndarray once backward has touched this leaf

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    # operator sugar; all routing through the module-level ops below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class _TapeNode:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class GradTape:
    """Ordered record of executed differentiable ops and their saved inputs.

    Use as a context manager; ops executed inside record themselves here.
    Replaying the records backward from a scalar produces a gradient for
    every requires-grad tensor reachable from it.
    """

    def __init__(self):
        self.nodes: list[_TapeNode] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextmanager
def no_grad():
    """Suspend tape recording for the enclosed ops."""
    _TAPE_STACK.append(None)
    try:
        yield
    finally:
        _TAPE_STACK.pop()


def _record(out_data, inputs, backward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_TapeNode(out, inputs, backward_fn))
        tape._produced.add(id(out))
    return out


def backward(loss: Tensor, tape: GradTape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    ``loss`` must be a scalar recorded on ``tape``. Intermediate gradients
    live in a scratch table local to this call, so calling again (without
    zeroing) adds another full set of partials to the leaves.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise ValueError("loss is not recorded on this tape")
    scratch: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = scratch.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None:
                continue
            key = id(inp)
            if key in tape._produced:
                acc = scratch.get(key)
                scratch[key] = gi if acc is None else acc + gi
            elif inp.requires_grad:
                inp.grad = gi if inp.grad is None else inp.grad + gi


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# differentiable primitives


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):  # keep python scalars weak: no f32 upcast
        return _record(a.data + b, (a,), lambda g: (_unbroadcast(g, a.data.shape),))
    out = a.data + b.data

    def _bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), _bw)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _record(a.data - b, (a,), lambda g: (_unbroadcast(g, a.data.shape),))
    out = a.data - b.data

    def _bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), _bw)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _record(a.data * b, (a,), lambda g: (_unbroadcast(g * b, a.data.shape),))
    out = a.data * b.data

    def _bw(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul semantics incl. stacked (batched) operands."""
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def _bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _record(out, (a, b), _bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inv),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    n = a.data.shape[axis]
    if start < 0 or length < 0 or start + length > n:
        raise ValueError(f"narrow [{start}, {start + length}) out of range for extent {n}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def _bw(g):
        gx = np.zeros_like(a.data)
        gx[idx] = g
        return (gx,)

    return _record(a.data[idx], (a,), _bw)


def diag_part(a: Tensor) -> Tensor:
    """Diagonal of the last two (square) axes: ...×n×n -> ...×n."""
    n = a.data.shape[-1]
    if a.data.shape[-2] != n:
        raise ValueError(f"diag_part needs square last axes, got {a.data.shape}")
    out = np.diagonal(a.data, axis1=-2, axis2=-1).copy()
    rng_n = np.arange(n)

    def _bw(g):
        gx = np.zeros_like(a.data)
        gx[..., rng_n, rng_n] = g
        return (gx,)

    return _record(out, (a,), _bw)


def mask_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True by ``value`` (no grad there)."""
    keep = ~np.asarray(mask, dtype=bool)

    def _bw(g):
        return (g * keep,)

    return _record(np.where(keep, a.data, value), (a,), _bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    return _record(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)

    return _record(out, (a,), _bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / count,)

    return _record(out, (a,), _bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two same-shape tensors (scalar output)."""
    return sum(mul(a, b))


def masked_select(a: Tensor, mask: np.ndarray) -> Tensor:
    """Entries of ``a`` where ``mask`` is True, flattened to 1-D."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.data.shape:
        raise ValueError(f"mask shape {mask.shape} != tensor shape {a.data.shape}")

    def _bw(g):
        gx = np.zeros_like(a.data)
        gx[mask] = g
        return (gx,)

    return _record(a.data[mask], (a,), _bw)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """Stable log(sum(exp(a))) along one axis; -inf entries contribute 0."""
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def _bw(g):
        return (np.expand_dims(g, axis) * e / s,)

    return _record(out, (a,), _bw)


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise log(exp(a) + exp(b)), stable for large magnitudes."""
    out = np.logaddexp(a.data, b.data)

    def _bw(g):
        with np.errstate(invalid="ignore"):
            da = np.where(np.isneginf(a.data), 0.0, np.exp(a.data - out))
            db = np.where(np.isneginf(b.data), 0.0, np.exp(b.data - out))
        return (_unbroadcast(g * da, a.data.shape),
                _unbroadcast(g * db, b.data.shape))

    return _record(out, (a, b), _bw)


def conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-length 1-D convolution: B×C_in×L with C_out×C_in×w -> B×C_out×L.

    The kernel width must be odd; (w-1)/2 zeros are padded on each side so
    the temporal extent is preserved.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 3:
        raise ValueError(
            f"conv1d needs B×C_in×L input and C_out×C_in×w kernel, got {x.data.shape} and {kernel.data.shape}")
    b, c_in, length = x.data.shape
    c_out, c_in_k, w = kernel.data.shape
    if c_in != c_in_k:
        raise ValueError(f"conv1d channel mismatch: input has C_in={c_in}, kernel expects C_in={c_in_k}")
    if w % 2 == 0:
        raise ValueError(f"conv1d kernel width must be odd, got {w}")
    pad = (w - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    dtype = np.result_type(x.data, kernel.data)
    out = np.zeros((b, c_out, length), dtype=dtype)
    for j in range(w):
        # (C_out×C_in) @ (B×C_in×L) -> B×C_out×L
        out += np.matmul(kernel.data[:, :, j], xp[:, :, j:j + length])

    def _bw(g):
        gk = np.empty_like(kernel.data)
        gxp = np.zeros_like(xp)
        for j in range(w):
            sl = xp[:, :, j:j + length]
            gk[:, :, j] = np.tensordot(g, sl, axes=([0, 2], [0, 2]))
            gxp[:, :, j:j + length] += np.matmul(kernel.data[:, :, j].T, g)
        gx = gxp[:, :, pad:pad + length] if pad else gxp
        return gx, gk

    return _record(out, (x, kernel), _bw)


def pool1d(x: Tensor, mode: str) -> Tensor:
    """Width-2 non-overlapping pooling over the last axis: B×C×L -> B×C×ceil(L/2).

    An odd trailing element forms its own singleton window, so no timestep
    is ever dropped.
    """
    if mode not in ("max", "avg"):
        raise ValueError(f"pool mode must be 'max' or 'avg', got {mode!r}")
    if x.data.ndim != 3:
        raise ValueError(f"pool1d needs a B×C×L tensor, got shape {x.data.shape}")
    b, c, length = x.data.shape
    if length == 0:
        raise ValueError("pool1d needs temporal extent >= 1")
    n_pairs = length // 2
    odd = length % 2 == 1
    pairs = x.data[:, :, :2 * n_pairs].reshape(b, c, n_pairs, 2)
    if mode == "max":
        body = pairs.max(axis=3)
        arg = pairs.argmax(axis=3)  # first max on ties -> deterministic
    else:
        body = pairs.mean(axis=3)
    out = np.concatenate([body, x.data[:, :, -1:]], axis=2) if odd else body

    def _bw(g):
        gx = np.zeros_like(x.data)
        g_body = g[:, :, :n_pairs]
        gp = gx[:, :, :2 * n_pairs].reshape(b, c, n_pairs, 2)
        if mode == "max":
            np.put_along_axis(gp, arg[..., None], g_body[..., None], axis=3)
        else:
            gp += g_body[..., None] / 2.0
        gx[:, :, :2 * n_pairs] = gp.reshape(b, c, 2 * n_pairs)
        if odd:
            gx[:, :, -1] = g[:, :, -1]  # singleton window: pass-through
        return (gx,)

    return _record(out, (x,), _bw)


# ---------------------------------------------------------------------------
# value-level helpers (not differentiated)


def softmax(v) -> np.ndarray:
    """Probability vector from a 1-D array of finite reals (max-subtracted)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"softmax expects a 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("softmax requires finite inputs")
    e = np.exp(arr - arr.max())
    return e / e.sum()
