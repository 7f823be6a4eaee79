"""Minimal dense-tensor reverse-mode automatic differentiation.

Just enough machinery for a small convolutional voxel network: explicit
shapes, no broadcasting, float64 by default (float32 works through the same
API). Ops record onto the innermost active ``Tape``; with no active tape the
forward value is computed and nothing is tracked, which is the inference
path.

Typical use::

    with Tape() as tape:
        out = matmul(w, x)
        loss = tensor_sum(out)
    tape.backward(loss)
    # w.grad now holds dloss/dw
"""

from __future__ import annotations

import threading
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes or dtypes violate an op's contract."""


class Tensor:
    """A dense array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data, dtype=np.float64) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def constant(data, dtype=np.float64) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


_tape_state = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_tape_state, "stack", None)
    if stack is None:
        stack = []
        _tape_state.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives for reverse traversal.

    Execution order is a topological order of the (acyclic) graph, so the
    backward pass is a single reverse sweep visiting each op exactly once.
    A tape and its tensors belong to one logical thread.
    """

    def __init__(self) -> None:
        self._records: List[Tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack().pop()
        assert popped is self, "tape stack corrupted"

    def _record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, root: Tensor, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d(root)/d(leaf) into every reachable leaf's ``.grad``."""
        if seed is None:
            seed = np.ones_like(root.data)
        if np.shape(seed) != root.shape:
            raise ShapeError(f"seed shape {np.shape(seed)} != root shape {root.shape}")
        _accumulate(root, np.asarray(seed, dtype=root.dtype))
        for out, backward_fn in reversed(self._records):
            if out.grad is not None:
                backward_fn(out.grad)


def _accumulate(t: Tensor, delta: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = active_tape()
    tracked = tape is not None and any(i.requires_grad for i in inputs)
    out = Tensor(data, requires_grad=tracked, dtype=data.dtype)
    if tracked:
        tape._record(out, backward_fn)
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        _accumulate(x, -g)

    return _make(-x.data, (x,), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, c * g)

    return _make(c * x.data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        _accumulate(x, g / x.data)

    return _make(np.log(x.data), (x,), backward)


def powc(x: Tensor, exponent: float) -> Tensor:
    """Elementwise x**exponent for a constant exponent (x > 0 for non-integer)."""
    exponent = float(exponent)
    out_data = x.data**exponent

    def backward(g: np.ndarray) -> None:
        if exponent == 0.0:
            return
        _accumulate(x, g * exponent * x.data ** (exponent - 1.0))

    return _make(out_data, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only where unclipped."""
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * inside)

    return _make(np.clip(x.data, lo, hi), (x,), backward)


def smooth_l1(x: Tensor) -> Tensor:
    """Elementwise 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise (C1 at the knee)."""
    quad = np.abs(x.data) < 1.0

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * np.where(quad, x.data, np.sign(x.data)))

    return _make(np.where(quad, 0.5 * x.data**2, np.abs(x.data) - 0.5), (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar (shape ()) tensor."""

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.full_like(x.data, g))

    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra and structure
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul dtype mismatch {a.dtype} vs {b.dtype}")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose2d expects a 2D tensor, got {x.shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.ascontiguousarray(g.T))

    return _make(np.ascontiguousarray(x.data.T), (x,), backward)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape).copy(), (x,), backward)


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds into those rows."""
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, indices, g)

    return _make(x.data[indices], (x,), backward)


def scatter_rows(x: Tensor, indices: np.ndarray, n_rows: int) -> Tensor:
    """Place the rows of x at the given indices of an otherwise-zero matrix.

    Indices must be unique; backward gathers the corresponding rows. This is
    the adjoint of ``take_rows`` with unique indices.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"scatter_rows expects a 2D tensor, got {x.shape}")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1 or indices.shape[0] != x.shape[0]:
        raise ShapeError(f"scatter_rows: {len(indices)} indices for {x.shape[0]} rows")
    if len(np.unique(indices)) != len(indices):
        raise ShapeError("scatter_rows indices must be unique")
    out = np.zeros((n_rows, x.shape[1]), dtype=x.dtype)
    out[indices] = x.data

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g[indices])

    return _make(out, (x,), backward)


def permute(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    """Transpose axes; backward applies the inverse permutation."""
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for shape {x.shape}")
    inverse = np.argsort(axes)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.ascontiguousarray(g.transpose(inverse)))

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def take2d(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather x[rows[i], cols[i]] into a 1D tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"take2d expects a 2D tensor, got {x.shape}")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape:
        raise ShapeError("take2d: rows and cols must have equal length")

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (rows, cols), g)

    return _make(x.data[rows, cols], (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (C, H, W) maps along the channel axis."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape}, {b.shape}")
    c_a = a.shape[0]

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g[:c_a])
        _accumulate(b, g[c_a:])

    return _make(np.concatenate([a.data, b.data], axis=0), (a, b), backward)


def bias_add_rows(x: Tensor, bias: Tensor) -> Tensor:
    """(N, D) + (D,) bias applied to every row."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"bias_add_rows: incompatible shapes {x.shape}, {bias.shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g)
        _accumulate(bias, g.sum(axis=0))

    return _make(x.data + bias.data[None, :], (x, bias), backward)


def bias_add_channels(x: Tensor, bias: Tensor) -> Tensor:
    """(C, H, W) + (C,) bias applied across each channel plane."""
    if x.data.ndim != 3 or bias.data.ndim != 1 or x.shape[0] != bias.shape[0]:
        raise ShapeError(f"bias_add_channels: incompatible shapes {x.shape}, {bias.shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g)
        _accumulate(bias, g.sum(axis=(1, 2)))

    return _make(x.data + bias.data[:, None, None], (x, bias), backward)


# ---------------------------------------------------------------------------
# set max-pooling
# ---------------------------------------------------------------------------


def setmax(rows: Tensor) -> Tuple[Tensor, np.ndarray]:
    """Columnwise max of an (n, d) tensor; gradient flows to argmax rows.

    Ties resolve to the lowest row index. n must be at least 1.
    """
    if rows.data.ndim != 2:
        raise ShapeError(f"setmax expects a 2D tensor, got {rows.shape}")
    if rows.shape[0] == 0:
        raise ShapeError("setmax over an empty set is undefined")
    idx = np.argmax(rows.data, axis=0)
    cols = np.arange(rows.shape[1])

    def backward(g: np.ndarray) -> None:
        if not rows.requires_grad:
            return
        if rows.grad is None:
            rows.grad = np.zeros_like(rows.data)
        np.add.at(rows.grad, (idx, cols), g)

    return _make(rows.data[idx, cols], (rows,), backward), idx


def padded_setmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Rowwise set-max over a padded batch.

    x has shape (V, P, C): V sets, each padded to P members of C channels;
    mask (V, P) marks real members. Every set needs at least one real member.
    Ties resolve to the lowest member index.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"padded_setmax expects a 3D tensor, got {x.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} != {x.shape[:2]}")
    if not mask.any(axis=1).all():
        raise ShapeError("padded_setmax: some set has no members")
    masked = np.where(mask[:, :, None], x.data, -np.inf)
    idx = np.argmax(masked, axis=1)  # (V, C)
    v_idx = np.arange(x.shape[0])[:, None]
    c_idx = np.arange(x.shape[2])[None, :]

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (np.broadcast_to(v_idx, idx.shape), idx, np.broadcast_to(c_idx, idx.shape)), g)

    return _make(masked[v_idx, idx, c_idx], (x,), backward)


# ---------------------------------------------------------------------------
# 2D convolution / resampling
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (C_in, H, W) with (C_out, C_in, kh, kw).

    Zero padding is symmetric; output spatial size is
    floor((H + 2p - kh) / stride) + 1.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects x (C,H,W), w (O,C,kh,kw); got {x.shape}, {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: x has {x.shape[0]}, w expects {w.shape[1]}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d padding must be non-negative, got {padding}")
    c_in, h, width = x.shape
    c_out, _, kh, kw = w.shape
    if h + 2 * padding < kh or width + 2 * padding < kw:
        raise ShapeError("conv2d kernel larger than padded input")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (width + 2 * padding - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # (C_in, OH, OW, kh, kw) -> (C_in*kh*kw, OH*OW)
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, oh * ow)
    w_mat = w.data.reshape(c_out, c_in * kh * kw)
    out = (w_mat @ cols).reshape(c_out, oh, ow)

    def backward(g: np.ndarray) -> None:
        g_mat = g.reshape(c_out, oh * ow)
        _accumulate(w, (g_mat @ cols.T).reshape(w.shape))
        if not x.requires_grad:
            return
        d_cols = (w_mat.T @ g_mat).reshape(c_in, kh, kw, oh, ow)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += d_cols[:, i, j]
        _accumulate(x, dxp[:, padding : padding + h, padding : padding + width])

    return _make(out, (x, w), backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbor x2 upsampling of a (C, H, W) map."""
    if factor != 2:
        raise ShapeError(f"only factor 2 is supported, got {factor}")
    if x.data.ndim != 3:
        raise ShapeError(f"upsample_nearest expects (C, H, W), got {x.shape}")
    c, h, w = x.shape

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return _make(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2), (x,), backward)


def pad2d(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Zero-pad the bottom/right of a (C, H, W) map."""
    if x.data.ndim != 3:
        raise ShapeError(f"pad2d expects (C, H, W), got {x.shape}")
    if pad_h < 0 or pad_w < 0:
        raise ShapeError("pad2d amounts must be non-negative")
    _, h, w = x.shape

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g[:, :h, :w])

    return _make(np.pad(x.data, ((0, 0), (0, pad_h), (0, pad_w))), (x,), backward)


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left (height, width) window of a (C, H, W) map."""
    if x.data.ndim != 3:
        raise ShapeError(f"crop2d expects (C, H, W), got {x.shape}")
    if height > x.shape[1] or width > x.shape[2]:
        raise ShapeError(f"crop2d window {(height, width)} exceeds {x.shape}")

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[:, :height, :width] += g

    return _make(x.data[:, :height, :width].copy(), (x,), backward)
