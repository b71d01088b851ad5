"""Reverse-mode automatic differentiation over dense NumPy arrays.

A Tensor wraps one contiguous float array. Every differentiable operation
records a graph node (operation tag, parent tensors, backward rule closure)
on its output; ``backward()`` on a scalar walks the recorded graph in reverse
topological order and accumulates gradients on every tensor that requires
them. There is no general broadcasting: operations accept exactly the shapes
they document.

Default precision is 64-bit (all gradient checks run there); pass
float32 data for training-speed graphs.
"""

import contextlib

import numpy as np

from . import _backend
from .errors import DimensionError, GraphError, ParameterError

DEFAULT_DTYPE = np.float64
_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One recorded operation: tag, inputs, and its vector-Jacobian rule."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = None
        self._grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self):
        # A tensor the loss never touched legitimately has zero gradient.
        if self._grad is None and self.requires_grad:
            return np.zeros(self.data.shape, dtype=self.data.dtype)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self):
        self._grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f", op={self.node.op!r}" if self.node is not None else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- operator sugar (same-shape arithmetic, scalar scaling) --

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NotImplementedError("tensor/tensor division is not provided")
        return scale(self, 1.0 / other)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def make_op(op, data, parents, backward_fn):
    """Wrap raw output data as a Tensor, recording the graph node if needed.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    parent, in order. Extension point for domain modules that define their
    own differentiable operations.
    """
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    if requires:
        out.node = Node(op, tuple(parents), backward_fn)
    return out


def trace(root):
    """Recorded operations reachable from ``root``, in execution order."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            if t.node is not None:
                order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate gradients of everything ``loss`` depends on.

    ``loss`` must be a scalar produced on a recorded graph (or a leaf, in
    which case only its own gradient is seeded).
    """
    if loss.size != 1:
        raise GraphError(f"backward requires a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward on a tensor that does not require gradients")
    order = trace(loss)
    grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    holders = {id(loss): loss}
    for t in reversed(order):
        g = grads.get(id(t))
        if g is None:
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise GraphError(
                    f"backward rule of {t.node.op!r} produced gradient shape "
                    f"{pg.shape} for parent shape {p.data.shape}"
                )
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
                holders[id(p)] = p
    for key, t in holders.items():
        if t.requires_grad:
            g = grads[key]
            t._grad = g if t._grad is None else t._grad + g


# ---------------------------------------------------------------------------
# elementwise / structural operations
# ---------------------------------------------------------------------------


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a, b):
    _check_same_shape("add", a, b)

    def rule(g):
        return g, g

    return make_op("add", a.data + b.data, (a, b), rule)


def sub(a, b):
    _check_same_shape("sub", a, b)

    def rule(g):
        return g, -g

    return make_op("sub", a.data - b.data, (a, b), rule)


def neg(a):
    def rule(g):
        return (-g,)

    return make_op("neg", -a.data, (a,), rule)


def mul(a, b):
    _check_same_shape("mul", a, b)

    def rule(g):
        return g * b.data, g * a.data

    return make_op("mul", a.data * b.data, (a, b), rule)


def scale(a, s):
    s = float(s)

    def rule(g):
        return (g * s,)

    return make_op("scale", a.data * s, (a,), rule)


def add_scalar(a, c):
    c = float(c)

    def rule(g):
        return (g,)

    return make_op("add_scalar", a.data + c, (a,), rule)


def add_constant(a, arr):
    """a + arr where arr is a fixed array broadcastable to a's shape."""
    arr = np.asarray(arr, dtype=a.dtype)
    if np.broadcast_shapes(a.data.shape, arr.shape) != a.data.shape:
        raise DimensionError(
            f"add_constant: {arr.shape} does not broadcast into {a.data.shape}"
        )

    def rule(g):
        return (g,)

    return make_op("add_constant", a.data + arr, (a,), rule)


def relu(a):
    mask = a.data > 0  # subgradient at exactly zero is zero

    def rule(g):
        return (g * mask,)

    return make_op("relu", np.where(mask, a.data, 0), (a,), rule)


def tanh(a):
    t = np.tanh(a.data)

    def rule(g):
        return (g * (1.0 - t * t),)

    return make_op("tanh", t, (a,), rule)


def tensor_sum(a):
    def rule(g):
        return (np.full(a.data.shape, g[()] if g.shape == () else g.reshape(()),
                        dtype=a.dtype),)

    return make_op("sum", np.asarray(a.data.sum(), dtype=a.dtype), (a,), rule)


def frobenius_norm_sq(a):
    def rule(g):
        return (2.0 * a.data * g,)

    val = np.asarray((a.data * a.data).sum(), dtype=a.dtype)
    return make_op("frobenius_norm_sq", val, (a,), rule)


def frobenius_norm(a):
    val = float(np.sqrt((a.data.astype(np.float64) ** 2).sum()))

    def rule(g):
        if val == 0.0:  # gradient of the norm at zero defined as zero
            return (np.zeros_like(a.data),)
        return ((a.data / val) * g,)

    return make_op("frobenius_norm", np.asarray(val, dtype=a.dtype), (a,), rule)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def rule(g):
        return (g.reshape(a.data.shape),)

    return make_op("reshape", np.ascontiguousarray(data), (a,), rule)


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def rule(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return make_op("permute", np.ascontiguousarray(a.data.transpose(axes)), (a,), rule)


def frame(a, i):
    """Select index i along the leading axis (one frame of a batch)."""
    i = int(i)
    if not 0 <= i < a.data.shape[0]:
        raise DimensionError(f"frame index {i} out of range for {a.data.shape}")

    def rule(g):
        full = np.zeros(a.data.shape, dtype=a.dtype)
        full[i] = g
        return (full,)

    return make_op("frame", a.data[i].copy(), (a,), rule)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _validate_conv_args(stride, padding):
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")


def conv2d(x, w, stride=1, padding=0, bias=None):
    """Cross-correlation of x [N,C,H,W] with kernels w [K,C,kh,kw]."""
    _validate_conv_args(stride, padding)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}"
        )
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}"
        )
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    try:
        y = _backend.conv2d_forward(x.data, w.data, stride, padding)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    parents = [x, w]
    if bias is not None:
        if bias.shape != (k,):
            raise DimensionError(f"conv2d bias must have shape ({k},), got {bias.shape}")
        y = y + bias.data[None, :, None, None]
        parents.append(bias)

    def rule(g):
        g = np.ascontiguousarray(g)
        gx = (
            _backend.conv2d_grad_input(g, w.data, stride, padding, h, wd)
            if x.requires_grad
            else None
        )
        gw = (
            _backend.conv2d_grad_kernel(g, x.data, stride, padding, kh, kw)
            if w.requires_grad
            else None
        )
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_op("conv2d", y, tuple(parents), rule)


def transposed_conv2d(x, w, stride=1, padding=0, bias=None):
    """Exact adjoint of conv2d: x [N,K,H,W], w [K,C,kh,kw] -> [N,C,H',W']."""
    _validate_conv_args(stride, padding)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(
            f"transposed_conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}"
        )
    if x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"transposed_conv2d: input has {x.shape[1]} channels, kernel has "
            f"{w.shape[0]} output maps"
        )
    n, k, h, wd = x.shape
    _, c, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"transposed_conv2d output size {ho}x{wo} is empty for input {h}x{wd}"
        )
    y = _backend.conv2d_grad_input(x.data, w.data, stride, padding, ho, wo)
    parents = [x, w]
    if bias is not None:
        if bias.shape != (c,):
            raise DimensionError(
                f"transposed_conv2d bias must have shape ({c},), got {bias.shape}"
            )
        y = y + bias.data[None, :, None, None]
        parents.append(bias)

    def rule(g):
        g = np.ascontiguousarray(g)
        gx = (
            _backend.conv2d_forward(g, w.data, stride, padding)
            if x.requires_grad
            else None
        )
        gw = (
            _backend.conv2d_grad_kernel(x.data, g, stride, padding, kh, kw)
            if w.requires_grad
            else None
        )
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_op("transposed_conv2d", y, tuple(parents), rule)


# ---------------------------------------------------------------------------
# sampling, smoothing, resizing, splatting
# ---------------------------------------------------------------------------


def _corner_gather(arr, i, j, valid):
    out = arr[np.clip(i, 0, arr.shape[0] - 1), np.clip(j, 0, arr.shape[1] - 1)]
    return np.where(valid, out, 0.0)


def grid_sample_bilinear(source, flow):
    """Sample source [H,W] at real-valued (row, col) coordinates flow [...,2].

    Coordinates outside the source read as zero; differentiable w.r.t. both
    the source values and the sampling coordinates.
    """
    if source.ndim != 2:
        raise DimensionError(f"grid_sample source must be 2-d, got {source.shape}")
    if flow.shape[-1] != 2:
        raise DimensionError(f"flow must have a trailing axis of 2, got {flow.shape}")
    h, w = source.shape
    u = flow.data[..., 0]
    v = flow.data[..., 1]
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    di = u - i0
    dj = v - j0
    i1 = i0 + 1
    j1 = j0 + 1

    def corner(ii, jj):
        valid = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
        return _corner_gather(source.data, ii, jj, valid), valid

    v00, m00 = corner(i0, j0)
    v01, m01 = corner(i0, j1)
    v10, m10 = corner(i1, j0)
    v11, m11 = corner(i1, j1)
    w00 = (1 - di) * (1 - dj)
    w01 = (1 - di) * dj
    w10 = di * (1 - dj)
    w11 = di * dj
    out = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11

    def rule(g):
        gsrc = None
        if source.requires_grad:
            gsrc = np.zeros_like(source.data)
            for ii, jj, ww, mm in (
                (i0, j0, w00, m00),
                (i0, j1, w01, m01),
                (i1, j0, w10, m10),
                (i1, j1, w11, m11),
            ):
                contrib = g * ww * mm
                np.add.at(
                    gsrc,
                    (np.clip(ii, 0, h - 1), np.clip(jj, 0, w - 1)),
                    contrib,
                )
        gflow = None
        if flow.requires_grad:
            gu = g * ((v10 - v00) * (1 - dj) + (v11 - v01) * dj)
            gv = g * ((v01 - v00) * (1 - di) + (v11 - v10) * di)
            gflow = np.stack([gu, gv], axis=-1).astype(flow.dtype)
        return gsrc, gflow

    return make_op("grid_sample_bilinear", out.astype(source.dtype), (source, flow), rule)


def gaussian_stencil(sigma, ksize, dtype=np.float64):
    """Sampled, unit-sum 2-d Gaussian kernel of odd side ksize."""
    if ksize % 2 == 0 or ksize < 1:
        raise ParameterError(f"ksize must be odd and positive, got {ksize}")
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    half = ksize // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma)) / (
        2.0 * np.pi * sigma * sigma
    )
    k /= k.sum()  # unit sum: constants map to themselves
    return k.astype(dtype)


def gaussian_blur2d(x, sigma, ksize):
    """Channel-wise Gaussian smoothing of a vertex grid [G,G,3].

    Replicate padding at the border, so constant grids are fixed points and
    the result never exceeds the input's max-norm.
    """
    if x.ndim != 3:
        raise DimensionError(f"gaussian_blur2d expects [G,G,C], got {x.shape}")
    kern = gaussian_stencil(sigma, ksize, dtype=np.float64)
    half = ksize // 2
    g0, g1, c = x.shape
    xp = np.pad(x.data, ((half, half), (half, half), (0, 0)), mode="edge")
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(g0, g1, ksize, ksize, c),
        strides=(s[0], s[1], s[0], s[1], s[2]),
        writeable=False,
    )
    out = np.tensordot(win, kern, axes=([2, 3], [0, 1])).astype(x.dtype)

    # padded index -> source index under replicate padding (for the adjoint)
    fold0 = np.clip(np.arange(g0 + 2 * half) - half, 0, g0 - 1)
    fold1 = np.clip(np.arange(g1 + 2 * half) - half, 0, g1 - 1)

    def rule(g):
        gpad = np.zeros((g0 + 2 * half, g1 + 2 * half, c), dtype=np.float64)
        for u in range(ksize):
            for v in range(ksize):
                gpad[u : u + g0, v : v + g1] += kern[u, v] * g
        tmp = np.zeros((g0, g1 + 2 * half, c), dtype=np.float64)
        np.add.at(tmp, fold0, gpad)
        gx = np.zeros((g0, g1, c), dtype=np.float64)
        np.add.at(gx.transpose(1, 0, 2), fold1, tmp.transpose(1, 0, 2))
        return (gx.astype(x.dtype),)

    return make_op("gaussian_blur2d", out, (x,), rule)


def _resize_matrix(src, dst, dtype):
    """Dense [dst, src] bilinear interpolation matrix (corner-aligned)."""
    m = np.zeros((dst, src), dtype=np.float64)
    if dst == 1:
        pos = np.array([0.5 * (src - 1)])
    else:
        pos = np.arange(dst) * (src - 1) / (dst - 1)
    i0 = np.floor(pos).astype(int)
    i0 = np.minimum(i0, src - 2) if src > 1 else np.zeros(dst, dtype=int)
    frac = pos - i0
    for r in range(dst):
        if src == 1:
            m[r, 0] = 1.0
        else:
            m[r, i0[r]] = 1.0 - frac[r]
            m[r, i0[r] + 1] = frac[r]
    return m.astype(dtype)


def bilinear_resize(x, out_h, out_w):
    """Resample x [N,C,H,W] to [N,C,out_h,out_w] with corner-aligned bilinear."""
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    rr = _resize_matrix(h, out_h, np.float64)
    rc = _resize_matrix(w, out_w, np.float64)

    def apply(mat_r, mat_c, arr):
        t = np.tensordot(arr, mat_r, axes=([2], [1]))  # N,C,W,out_h
        t = np.tensordot(t, mat_c, axes=([2], [1]))  # N,C,out_h,out_w
        return np.ascontiguousarray(t)

    out = apply(rr, rc, x.data.astype(np.float64)).astype(x.dtype)

    def rule(g):
        gx = apply(rr.T, rc.T, g.astype(np.float64))
        return (gx.astype(x.dtype),)

    return make_op("bilinear_resize", out, (x,), rule)


def bilinear_splat(points, out_h, out_w):
    """Scatter unit mass per point [K,2] (row, col) onto an [H,W] grid.

    Each point deposits bilinear weights on its four surrounding cells;
    weights falling outside the grid are dropped. The adjoint of
    grid_sample_bilinear with a constant source.
    """
    if points.ndim != 2 or points.shape[1] != 2:
        raise DimensionError(f"points must be [K,2], got {points.shape}")
    u = points.data[:, 0]
    v = points.data[:, 1]
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    di = u - i0
    dj = v - j0
    out = np.zeros((out_h, out_w), dtype=points.dtype)
    corners = (
        (i0, j0, (1 - di) * (1 - dj)),
        (i0, j0 + 1, (1 - di) * dj),
        (i0 + 1, j0, di * (1 - dj)),
        (i0 + 1, j0 + 1, di * dj),
    )
    masks = []
    for ii, jj, ww in corners:
        valid = (ii >= 0) & (ii < out_h) & (jj >= 0) & (jj < out_w)
        masks.append(valid)
        np.add.at(
            out,
            (np.clip(ii, 0, out_h - 1), np.clip(jj, 0, out_w - 1)),
            np.where(valid, ww, 0.0),
        )

    def rule(g):
        def gather(ii, jj, valid):
            got = g[np.clip(ii, 0, out_h - 1), np.clip(jj, 0, out_w - 1)]
            return np.where(valid, got, 0.0)

        g00 = gather(i0, j0, masks[0])
        g01 = gather(i0, j0 + 1, masks[1])
        g10 = gather(i0 + 1, j0, masks[2])
        g11 = gather(i0 + 1, j0 + 1, masks[3])
        gu = (g10 - g00) * (1 - dj) + (g11 - g01) * dj
        gv = (g01 - g00) * (1 - di) + (g11 - g10) * di
        return (np.stack([gu, gv], axis=1).astype(points.dtype),)

    return make_op("bilinear_splat", out, (points,), rule)
