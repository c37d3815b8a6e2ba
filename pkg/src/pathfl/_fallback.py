"""Pure-numpy versions of the hot convolution/pooling kernels.

Each function has a twin in ``_ckernels.pyx``.  Both run the same sequence of
BLAS products and accumulate in the same order, so the backends agree bit for
bit.

A 3x3 convolution is computed on the zero-padded image flattened to
``(n, c, (h+2)*(w+2))``: the tap at offset (dy, dx) is a contiguous slice of
that buffer shifted by ``dy*(w+2) + dx``, so each tap is one GEMM and no
column matrix is ever built.
"""

import numpy as np


def _geometry(h, w):
    wp = w + 2
    flat = (h + 2) * wp
    span = flat - 2 * wp - 2
    return wp, flat, span, wp + 1


def pad_flat(x):
    """(n, c, h, w) -> zero-bordered (n, c, (h+2)*(w+2))."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2, w + 2))
    out[:, :, 1:-1, 1:-1] = x
    return out.reshape(n, c, (h + 2) * (w + 2))


def crop_flat(xf, h, w):
    n, c = xf.shape[:2]
    return np.ascontiguousarray(xf.reshape(n, c, h + 2, w + 2)[:, :, 1:-1, 1:-1])


def conv3x3_forward(x, weight, bias):
    """Stride-1, zero-padded 3x3 convolution.

    Returns the output and the padded input, which the backward pass reuses.
    """
    n, c, h, w = x.shape
    cout = weight.shape[0]
    wp, flat, span, base = _geometry(h, w)
    xf = pad_flat(x)
    taps = np.ascontiguousarray(weight.transpose(2, 3, 0, 1).reshape(9, cout, c))
    out = np.zeros((n, cout, flat))
    for b in range(n):
        for k in range(9):
            off = (k // 3) * wp + k % 3
            out[b, :, base:base + span] += taps[k] @ xf[b, :, off:off + span]
    y = crop_flat(out, h, w)
    y += bias[None, :, None, None]
    return y, xf


def conv3x3_backward(grad, xf, weight, need_input_grad=True):
    """Gradients of :func:`conv3x3_forward` w.r.t. (input, weight, bias)."""
    n, cout, h, w = grad.shape
    c = weight.shape[1]
    wp, flat, span, base = _geometry(h, w)
    gf = pad_flat(grad)
    taps = np.ascontiguousarray(weight.transpose(2, 3, 0, 1).reshape(9, cout, c))
    dtaps = np.zeros((9, c, cout))
    dxf = np.zeros((n, c, flat)) if need_input_grad else None
    for b in range(n):
        g = gf[b, :, base:base + span]
        for k in range(9):
            off = (k // 3) * wp + k % 3
            dtaps[k] += xf[b, :, off:off + span] @ g.T
            if need_input_grad:
                dxf[b, :, off:off + span] += taps[k].T @ g
    dweight = np.ascontiguousarray(dtaps.reshape(3, 3, c, cout).transpose(3, 2, 0, 1))
    dbias = grad.sum(axis=(0, 2, 3))
    dx = crop_flat(dxf, h, w) if need_input_grad else None
    return dx, dweight, dbias


def maxpool2_forward(x):
    """2x2/stride-2 max pool. Returns (out, argmax) with argmax in 0..3; ties pick the first."""
    quads = np.stack(
        [x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]]
    )
    idx = np.argmax(quads, axis=0).astype(np.int8)
    out = np.take_along_axis(quads, idx[None].astype(np.intp), axis=0)[0]
    return out, idx


def maxpool2_backward(grad, idx):
    n, c, h2, w2 = grad.shape
    dx = np.zeros((n, c, 2 * h2, 2 * w2))
    dx[:, :, 0::2, 0::2] = np.where(idx == 0, grad, 0.0)
    dx[:, :, 0::2, 1::2] = np.where(idx == 1, grad, 0.0)
    dx[:, :, 1::2, 0::2] = np.where(idx == 2, grad, 0.0)
    dx[:, :, 1::2, 1::2] = np.where(idx == 3, grad, 0.0)
    return dx


def upsample2_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(grad):
    return (
        grad[:, :, 0::2, 0::2]
        + grad[:, :, 0::2, 1::2]
        + grad[:, :, 1::2, 0::2]
        + grad[:, :, 1::2, 1::2]
    )
