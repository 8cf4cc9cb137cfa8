"""Pure-numpy lane for the hot kernels.

Same contracts as the compiled module: the convolution is a cross
correlation (no kernel flip) and max-pool ties resolve to the first
window position in row-major order.
"""

import numpy as np


def _im2col(x, k, stride, padding):
    """x[B,C,H,W] -> cols[B, OH*OW, C*k*k] plus the output spatial shape."""
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B, C, OH, OW, k, k]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * k * k)
    return np.ascontiguousarray(cols), oh, ow


def conv2d_forward(x, w, stride, padding):
    o, c, k, _ = w.shape
    if k == 1 and stride == 1 and padding == 0:
        b, _, h, ww = x.shape
        y = np.matmul(w.reshape(o, c), x.reshape(b, c, h * ww))
        return y.reshape(b, o, h, ww)
    cols, oh, ow = _im2col(x, k, stride, padding)
    y = np.matmul(cols, w.reshape(o, -1).T)  # [B, OH*OW, O]
    return np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(x.shape[0], o, oh, ow)


def conv2d_grad_input(g, w, stride, padding, h, w_in):
    b, o, oh, ow = g.shape
    _, c, k, _ = w.shape
    if k == 1 and stride == 1 and padding == 0:
        gx = np.matmul(w.reshape(o, c).T, g.reshape(b, o, oh * ow))
        return np.ascontiguousarray(gx.reshape(b, c, h, w_in))
    # scatter g into padded-input coordinates (dilated by the stride, offset
    # by k-1), valid-correlate with the flipped kernel, then crop the padding
    gd = np.zeros(
        (b, o, h + 2 * padding + k - 1, w_in + 2 * padding + k - 1), g.dtype
    )
    gd[:, :, k - 1 : (oh - 1) * stride + k : stride,
       k - 1 : (ow - 1) * stride + k : stride] = g
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = conv2d_forward(gd, wf, 1, 0)
    if padding:
        gx = gx[:, :, padding : padding + h, padding : padding + w_in]
    return np.ascontiguousarray(gx)


def conv2d_grad_weight(x, g, stride, padding, k):
    b, o, oh, ow = g.shape
    c = x.shape[1]
    cols, _, _ = _im2col(x, k, stride, padding)  # [B, OH*OW, C*k*k]
    gw = np.tensordot(g.reshape(b, o, oh * ow), cols, axes=([0, 2], [0, 1]))
    return np.ascontiguousarray(gw.reshape(o, c, k, k))


def maxpool_forward(x, factor):
    b, c, h, w = x.shape
    oh, ow = h // factor, w // factor
    win = x.reshape(b, c, oh, factor, ow, factor).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(b, c, oh, ow, factor * factor)
    local = flat.argmax(axis=-1)  # first max in row-major window order
    y = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    ii, jj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    ih = ii[None, None] * factor + local // factor
    iw = jj[None, None] * factor + local % factor
    idx = (ih * w + iw).astype(np.int64)
    return np.ascontiguousarray(y), idx


def maxpool_backward(g, idx, h, w):
    b, c = g.shape[:2]
    gx = np.zeros((b, c, h * w), g.dtype)
    flat_idx = idx.reshape(b, c, -1)
    np.put_along_axis(gx, flat_idx, g.reshape(b, c, -1), axis=-1)
    return gx.reshape(b, c, h, w)
