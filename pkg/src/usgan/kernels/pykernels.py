"""Pure NumPy implementations of the patch-extraction kernels.

These two routines (``im2col`` / ``col2im``) are the hot inner loops behind
conv2d, conv_transpose2d and maxpool2d.  A Cython twin lives in
``_fastkernels.pyx``; both produce identical results (same accumulation
order in ``col2im``).
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def out_extent(size, k, stride, pad):
    """Output extent of a strided window sweep: floor((size+2p-k)/s)+1."""
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Extract sliding windows of ``x`` (B,C,H,W) into (B, OH*OW, C*kh*kw)."""
    b, c, h, w = x.shape
    oh = out_extent(h, kh, stride, pad)
    ow = out_extent(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sb, sc, sh, sw = x.strides
    win = as_strided(
        x,
        shape=(b, c, oh, ow, kh, kw),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
    )
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b, oh * ow, c * kh * kw
    )


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to (B,C,H,W).

    Accumulation order over kernel offsets is ascending (i, j); the Cython
    backend replicates it so the two are bit-identical.
    """
    b, c, h, w = x_shape
    oh = out_extent(h, kh, stride, pad)
    ow = out_extent(w, kw, stride, pad)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    win = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += win[
                :, :, i, j
            ]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad : pad + h, pad : pad + w])
    return xp
