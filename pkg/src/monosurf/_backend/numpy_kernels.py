"""NumPy implementations of the convolution kernels.

These are the reference kernels: im2col views feeding BLAS contractions for
the forward/weight passes and per-tap strided scatter-adds for the input
gradient.  The compiled core in ``_conv_core`` mirrors these signatures
exactly; whichever is active is decided once at import in ``_backend``.

Layouts: activations are [N, C, H, W], kernels are [K, C, kh, kw], all
C-contiguous, float32 or float64.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

NAME = "numpy"


def _out_side(size, k, stride, pad):
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ValueError(
            f"spatial size {size} with kernel {k}, stride {stride}, padding {pad} "
            f"does not tile evenly"
        )
    return span // stride + 1


def _windows(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    s = xp.strides
    return as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
        writeable=False,
    )


def conv2d_forward(x, w, stride, pad):
    """Cross-correlate x [N,C,H,W] with w [K,C,kh,kw] -> [N,K,Ho,Wo]."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho = _out_side(h, kh, stride, pad)
    wo = _out_side(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kh, kw, stride, ho, wo)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_grad_input(gy, w, stride, pad, h, wd):
    """Adjoint of conv2d_forward w.r.t. its input; gy is [N,K,Ho,Wo]."""
    n, k, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    # taps[n,i,j,c,u,v] = sum_k gy[n,k,i,j] * w[k,c,u,v]
    taps = np.tensordot(gy, w, axes=([1], [0]))
    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=gy.dtype)
    hs, ws = ho * stride, wo * stride
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u : u + hs : stride, v : v + ws : stride] += taps[
                :, :, :, :, u, v
            ].transpose(0, 3, 1, 2)
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + wd])
    return gxp


def conv2d_grad_kernel(gy, x, stride, pad, kh, kw):
    """Adjoint of conv2d_forward w.r.t. the kernel; returns [K,C,kh,kw]."""
    n, k, ho, wo = gy.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kh, kw, stride, ho, wo)
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))
