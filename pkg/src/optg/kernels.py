"""Hot inner loops of the convolution and pooling layers.

Every kernel exists twice: a numba ``*_nb`` version and a numpy ``*_np``
version with identical semantics.  The public names dispatch on
``optg._accel.USE_NUMBA``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit


def conv_output_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


# --------------------------------------------------------------------------
# numpy
# --------------------------------------------------------------------------

def im2col_np(x, kh, kw, stride, padding):
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    # (N, Ho, Wo, C, kh, kw) so that each row is one receptive field
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def col2im_np(cols, x_shape, kh, kw, stride, padding):
    n, c, h, w = x_shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    d = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, :, i, j]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(out)


def maxpool_forward_np(x, k, stride):
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    win = win.reshape(n, c, ho, wo, k * k)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward_np(grad_out, arg, x_shape, k, stride):
    n, c, h, w = x_shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    dx = np.zeros(x_shape)
    for i in range(k):
        for j in range(k):
            sel = np.where(arg == i * k + j, grad_out, 0.0)
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += sel
    return dx


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

@njit
def im2col_nb(x, kh, kw, stride, padding):
    n, c, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = np.zeros((n * ho * wo, c * kh * kw))
    for b in range(n):
        for oh in range(ho):
            for ow in range(wo):
                row = (b * ho + oh) * wo + ow
                col = 0
                for ch in range(c):
                    for i in range(kh):
                        hi = oh * stride + i - padding
                        for j in range(kw):
                            wj = ow * stride + j - padding
                            if 0 <= hi < h and 0 <= wj < w:
                                cols[row, col] = x[b, ch, hi, wj]
                            col += 1
    return cols


@njit
def col2im_nb(cols, n, c, h, w, kh, kw, stride, padding):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c, h, w))
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    col = (ch * kh + i) * kw + j
                    for oh in range(ho):
                        hi = oh * stride + i - padding
                        if hi < 0 or hi >= h:
                            continue
                        for ow in range(wo):
                            wj = ow * stride + j - padding
                            if 0 <= wj < w:
                                out[b, ch, hi, wj] += cols[(b * ho + oh) * wo + ow, col]
    return out


@njit
def maxpool_forward_nb(x, k, stride):
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.empty((n, c, ho, wo))
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    best = x[b, ch, oh * stride, ow * stride]
                    besti = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, ch, oh * stride + i, ow * stride + j]
                            if v > best:
                                best = v
                                besti = i * k + j
                    out[b, ch, oh, ow] = best
                    arg[b, ch, oh, ow] = besti
    return out, arg


@njit
def maxpool_backward_nb(grad_out, arg, n, c, h, w, k, stride):
    dx = np.zeros((n, c, h, w))
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    for b in range(n):
        for ch in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    a = arg[b, ch, oh, ow]
                    dx[b, ch, oh * stride + a // k, ow * stride + a % k] += grad_out[b, ch, oh, ow]
    return dx


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def im2col(x, kh, kw, stride, padding, use_numba=None):
    if USE_NUMBA if use_numba is None else use_numba:
        return im2col_nb(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride, padding)
    return im2col_np(x, kh, kw, stride, padding)


def col2im(cols, x_shape, kh, kw, stride, padding, use_numba=None):
    if USE_NUMBA if use_numba is None else use_numba:
        n, c, h, w = x_shape
        return col2im_nb(np.ascontiguousarray(cols), n, c, h, w, kh, kw, stride, padding)
    return col2im_np(cols, x_shape, kh, kw, stride, padding)


def maxpool_forward(x, k, stride, use_numba=None):
    if USE_NUMBA if use_numba is None else use_numba:
        return maxpool_forward_nb(np.ascontiguousarray(x, dtype=np.float64), k, stride)
    return maxpool_forward_np(x, k, stride)


def maxpool_backward(grad_out, arg, x_shape, k, stride, use_numba=None):
    if USE_NUMBA if use_numba is None else use_numba:
        n, c, h, w = x_shape
        return maxpool_backward_nb(np.ascontiguousarray(grad_out), arg, n, c, h, w, k, stride)
    return maxpool_backward_np(grad_out, arg, x_shape, k, stride)
