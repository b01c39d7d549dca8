"""Minimal reverse-mode differentiable tensor core.

Provides exactly the operators the pose network needs: 2-D convolution,
2x2 max pooling, relu/sigmoid/tanh, affine maps, Hadamard arithmetic,
channel concatenation, stacking, and full-sum reduction. Spatial
operators accept either (C, H, W) tensors or batched (B, C, H, W)
tensors; affine maps accept (F,) or (B, F).

Every differentiable call optionally records onto a Tape. Passing
``tape=None`` runs forward-only (no intermediates are kept), which is
the inference path. ``backward(loss, tape)`` replays the tape in exact
reverse order and accumulates gradients into every ``requires_grad``
leaf reachable from the loss. No broadcasting: shapes must match
exactly, mismatches raise ShapeError.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ContractError, ShapeError

# When enabled (debug runs), every operator output is checked for NaN/inf.
CHECK_FINITE = False


class Tensor:
    """A shaped numeric array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None:
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype or np.float64)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"


class Tape:
    """Ordered record of executed operations.

    Entries are appended in execution order; ``backward`` walks them in
    exact reverse order, so inputs of every operation are guaranteed to
    be visited after all of their consumers.
    """

    def __init__(self):
        self.entries = []

    def record(self, output, backward_fn):
        self.entries.append((output, backward_fn))

    def __len__(self):
        return len(self.entries)


def _finite(out):
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise ContractError("operator produced non-finite values")
    return out


def _wants_grad(tape, *tensors):
    return tape is not None and any(t.requires_grad for t in tensors)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate reverse-mode gradients of a scalar loss into leaf tensors.

    Repeated calls without zeroing gradients accumulate, matching the
    usual training-loop contract.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    pending = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    produced = {id(out) for out, _ in tape.entries}
    for out, backward_fn in reversed(tape.entries):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        for t, contrib in backward_fn(g):
            if not t.requires_grad:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + contrib
            else:
                pending[key] = contrib
                holders[key] = t
    for key, g in pending.items():
        t = holders[key]
        if t.requires_grad and key not in produced:
            t.grad = g if t.grad is None else t.grad + g


def _accumulable(x):
    return x if x.ndim == 4 else x[None]


def conv_output_hw(h, w, kernel, stride, padding):
    """Spatial extents produced by a convolution, floor((n + 2p - k)/s) + 1."""
    return (
        (h + 2 * padding - kernel) // stride + 1,
        (w + 2 * padding - kernel) // stride + 1,
    )


def _im2col(xp, kernel, stride, ho, wo):
    """(B, C, Hp, Wp) padded input -> (B, C*k*k, ho*wo) patch matrix (copies)."""
    B, C, Hp, Wp = xp.shape
    sB, sC, sH, sW = xp.strides
    patches = as_strided(
        xp,
        shape=(B, C, kernel, kernel, ho, wo),
        strides=(sB, sC, sH, sW, sH * stride, sW * stride),
        writeable=False,
    )
    return patches.reshape(B, C * kernel * kernel, ho * wo)


def _col2im(cols, shape, kernel, stride, ho, wo):
    """Scatter-add (B, C*k*k, ho*wo) columns back onto a padded input grid."""
    B, C, Hp, Wp = shape
    gpad = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(B, C, kernel, kernel, ho, wo)
    for ki in range(kernel):
        for kj in range(kernel):
            gpad[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += cols[
                :, :, ki, kj
            ]
    return gpad


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, stride: int, padding: int, tape=None) -> Tensor:
    """2-D convolution (cross-correlation) with zero padding.

    weights: (out_ch, in_ch, k, k); bias: (out_ch,). Gradients are defined
    with respect to the input, the weights, and the bias.
    """
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ShapeError(f"stride must be a positive integer, got {stride!r}")
    if weights.data.ndim != 4 or weights.data.shape[2] != weights.data.shape[3]:
        raise ShapeError(f"weights must be (out_ch, in_ch, k, k), got {weights.data.shape}")
    batched = x.data.ndim == 4
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"conv2d input must be (C,H,W) or (B,C,H,W), got {x.data.shape}")
    out_ch, in_ch, k, _ = weights.data.shape
    x4 = _accumulable(x.data)
    if x4.shape[1] != in_ch:
        raise ShapeError(
            f"channel mismatch: input {x.data.shape} vs weights {weights.data.shape}"
        )
    if bias.data.shape != (out_ch,):
        raise ShapeError(f"bias must be ({out_ch},), got {bias.data.shape}")
    if not (x.data.dtype == weights.data.dtype == bias.data.dtype):
        raise ContractError(
            f"conv2d dtype mismatch: {x.data.dtype}/{weights.data.dtype}/{bias.data.dtype}"
        )
    B, _, H, W = x4.shape
    ho, wo = conv_output_hw(H, W, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"kernel {k}x{k} stride {stride} does not fit input {x.data.shape}"
        )
    xp = np.pad(x4, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, stride, ho, wo)
    w_mat = weights.data.reshape(out_ch, -1)
    out_mat = np.matmul(w_mat, cols)
    out_mat += bias.data.reshape(1, -1, 1)
    out4 = out_mat.reshape(B, out_ch, ho, wo)
    out = Tensor(out4 if batched else out4[0], requires_grad=_wants_grad(tape, x, weights, bias))

    if _wants_grad(tape, x, weights, bias):
        pad_shape = xp.shape

        def backward_fn(g):
            g4 = _accumulable(g)
            g_mat = g4.reshape(B, out_ch, ho * wo)
            grads = []
            if bias.requires_grad:
                grads.append((bias, g4.sum(axis=(0, 2, 3))))
            if weights.requires_grad:
                cols_b = _im2col(xp, k, stride, ho, wo)
                gw = np.matmul(g_mat, cols_b.transpose(0, 2, 1)).sum(axis=0)
                grads.append((weights, gw.reshape(weights.data.shape)))
            if x.requires_grad:
                gcols = np.matmul(w_mat.T, g_mat)
                gpad = _col2im(gcols, pad_shape, k, stride, ho, wo)
                gx = gpad[:, :, padding : padding + H, padding : padding + W]
                grads.append((x, gx if batched else gx[0]))
            return grads

        tape.record(out, backward_fn)
    return _finite(out)


def max_pool2(x: Tensor, tape=None) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first
    (row-major) maximal element of each window."""
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"max_pool2 input must be (C,H,W) or (B,C,H,W), got {x.data.shape}")
    batched = x.data.ndim == 4
    x4 = _accumulable(x.data)
    B, C, H, W = x4.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool2 needs even spatial extents, got {H}x{W}")
    h2, w2 = H // 2, W // 2
    windows = x4.reshape(B, C, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h2, w2, 4)
    idx = np.argmax(windows, axis=-1)
    out4 = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    out = Tensor(out4 if batched else out4[0], requires_grad=_wants_grad(tape, x))

    if _wants_grad(tape, x):

        def backward_fn(g):
            g4 = _accumulable(g)
            gw = np.zeros((B, C, h2, w2, 4), dtype=g4.dtype)
            np.put_along_axis(gw, idx[..., None], g4[..., None], axis=-1)
            gx = gw.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
            return [(x, gx if batched else gx[0])]

        tape.record(out, backward_fn)
    return _finite(out)


def relu(x: Tensor, tape=None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), requires_grad=_wants_grad(tape, x))
    if _wants_grad(tape, x):
        mask = x.data > 0  # derivative at 0 defined as 0

        def backward_fn(g):
            return [(x, g * mask)]

        tape.record(out, backward_fn)
    return _finite(out)


def sigmoid(x: Tensor, tape=None) -> Tensor:
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    s = s.astype(d.dtype, copy=False)
    out = Tensor(s, requires_grad=_wants_grad(tape, x))
    if _wants_grad(tape, x):

        def backward_fn(g):
            return [(x, g * s * (1.0 - s))]

        tape.record(out, backward_fn)
    return _finite(out)


def tanh(x: Tensor, tape=None) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, requires_grad=_wants_grad(tape, x))
    if _wants_grad(tape, x):

        def backward_fn(g):
            return [(x, g * (1.0 - t * t))]

        tape.record(out, backward_fn)
    return _finite(out)


def linear(x: Tensor, weights: Tensor, bias: Tensor, tape=None) -> Tensor:
    """Affine map out_i = sum_j W[i, j] x[j] + b[i] on (F,) or (B, F) inputs."""
    if weights.data.ndim != 2:
        raise ShapeError(f"linear weights must be 2-D, got {weights.data.shape}")
    out_f, in_f = weights.data.shape
    if x.data.ndim not in (1, 2) or x.data.shape[-1] != in_f:
        raise ShapeError(f"linear input {x.data.shape} incompatible with weights {weights.data.shape}")
    if bias.data.shape != (out_f,):
        raise ShapeError(f"linear bias must be ({out_f},), got {bias.data.shape}")
    out = Tensor(x.data @ weights.data.T + bias.data, requires_grad=_wants_grad(tape, x, weights, bias))
    if _wants_grad(tape, x, weights, bias):

        def backward_fn(g):
            grads = []
            if bias.requires_grad:
                grads.append((bias, g if g.ndim == 1 else g.sum(axis=0)))
            if weights.requires_grad:
                if g.ndim == 1:
                    grads.append((weights, np.outer(g, x.data)))
                else:
                    grads.append((weights, g.T @ x.data))
            if x.requires_grad:
                grads.append((x, g @ weights.data))
            return grads

        tape.record(out, backward_fn)
    return _finite(out)


def _match_shapes(a: Tensor, b: Tensor, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def add(a: Tensor, b: Tensor, tape=None) -> Tensor:
    _match_shapes(a, b, "add")
    out = Tensor(a.data + b.data, requires_grad=_wants_grad(tape, a, b))
    if _wants_grad(tape, a, b):
        tape.record(out, lambda g: [(a, g), (b, g)])
    return _finite(out)


def sub(a: Tensor, b: Tensor, tape=None) -> Tensor:
    _match_shapes(a, b, "sub")
    out = Tensor(a.data - b.data, requires_grad=_wants_grad(tape, a, b))
    if _wants_grad(tape, a, b):
        tape.record(out, lambda g: [(a, g), (b, -g)])
    return _finite(out)


def multiply(a: Tensor, b: Tensor, tape=None) -> Tensor:
    """Hadamard product."""
    _match_shapes(a, b, "multiply")
    out = Tensor(a.data * b.data, requires_grad=_wants_grad(tape, a, b))
    if _wants_grad(tape, a, b):
        tape.record(out, lambda g: [(a, g * b.data), (b, g * a.data)])
    return _finite(out)


def one_minus(x: Tensor, tape=None) -> Tensor:
    out = Tensor(1.0 - x.data, requires_grad=_wants_grad(tape, x))
    if _wants_grad(tape, x):
        tape.record(out, lambda g: [(x, -g)])
    return _finite(out)


def scale(x: Tensor, c: float, tape=None) -> Tensor:
    c = float(c)
    out = Tensor(x.data * np.array(c, dtype=x.data.dtype), requires_grad=_wants_grad(tape, x))
    if _wants_grad(tape, x):
        tape.record(out, lambda g: [(x, g * c)])
    return _finite(out)


def concat_channels(a: Tensor, b: Tensor, tape=None) -> Tensor:
    """Concatenate along the channel axis of (C,H,W) or (B,C,H,W) tensors."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (3, 4):
        raise ShapeError(f"concat_channels: incompatible ranks {a.data.shape} vs {b.data.shape}")
    axis = a.data.ndim - 3
    if a.data.shape[:axis] != b.data.shape[:axis] or a.data.shape[axis + 1 :] != b.data.shape[axis + 1 :]:
        raise ShapeError(f"concat_channels: spatial mismatch {a.data.shape} vs {b.data.shape}")
    na = a.data.shape[axis]
    out = Tensor(np.concatenate([a.data, b.data], axis=axis), requires_grad=_wants_grad(tape, a, b))
    if _wants_grad(tape, a, b):
        sl_a = tuple([slice(None)] * axis + [slice(0, na)])
        sl_b = tuple([slice(None)] * axis + [slice(na, None)])
        tape.record(out, lambda g: [(a, g[sl_a]), (b, g[sl_b])])
    return _finite(out)


def stack(tensors, axis=0, tape=None) -> Tensor:
    """Stack equal-shaped tensors along a new axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack needs at least one tensor")
    shape0 = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != shape0:
            raise ShapeError(f"stack: shape mismatch {shape0} vs {t.data.shape}")
    out = Tensor(
        np.stack([t.data for t in tensors], axis=axis),
        requires_grad=_wants_grad(tape, *tensors),
    )
    if _wants_grad(tape, *tensors):

        def backward_fn(g):
            slices = np.moveaxis(g, axis, 0)
            return [(t, slices[i]) for i, t in enumerate(tensors)]

        tape.record(out, backward_fn)
    return _finite(out)


def flatten_features(x: Tensor, tape=None) -> Tensor:
    """(C,H,W) -> (F,); (B,C,H,W) -> (B,F)."""
    if x.data.ndim == 4:
        new_shape = (x.data.shape[0], -1)
    elif x.data.ndim == 3:
        new_shape = (-1,)
    else:
        raise ShapeError(f"flatten_features expects rank 3 or 4, got {x.data.shape}")
    old_shape = x.data.shape
    out = Tensor(x.data.reshape(new_shape), requires_grad=_wants_grad(tape, x))
    if _wants_grad(tape, x):
        tape.record(out, lambda g: [(x, g.reshape(old_shape))])
    return _finite(out)


def sum_all(x: Tensor, tape=None) -> Tensor:
    """Full reduction to a scalar-shaped tensor."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype), requires_grad=_wants_grad(tape, x))
    if _wants_grad(tape, x):
        tape.record(out, lambda g: [(x, np.full_like(x.data, g))])
    return _finite(out)


def dropout(x: Tensor, p: float, rng: np.random.Generator, tape=None, training=True) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    out = Tensor(x.data * mask, requires_grad=_wants_grad(tape, x))
    if _wants_grad(tape, x):
        tape.record(out, lambda g: [(x, g * mask)])
    return _finite(out)
