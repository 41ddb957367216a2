"""Forward/backward primitives on NHWC arrays.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BN_EPS = 1e-5


def _im2col(x, k, stride, pad):
    b, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    # (kx, c) is contiguous in each padded row, so one strided copy builds the matrix
    view = as_strided(x, (b, ho, wo, k, k * c), (s0, s1 * stride, s2 * stride, s1, s3))
    return np.ascontiguousarray(view).reshape(b * ho * wo, k * k * c), (ho, wo)


def conv_forward(x, w, b=None, stride=1):
    """'Same'-padded convolution; w has shape (k, k, C_in, C_out)."""
    k = w.shape[0]
    pad = (k - 1) // 2
    cols, (ho, wo) = _im2col(x, k, stride, pad)
    y = cols @ w.reshape(-1, w.shape[-1])
    if b is not None:
        y += b
    return y.reshape(x.shape[0], ho, wo, w.shape[-1]), (cols, x.shape, stride, pad)


def conv_backward(dy, cache, w):
    """Gradients of a 'same' convolution; the input gradient is a transposed convolution."""
    cols, x_shape, stride, pad = cache
    k = w.shape[0]
    b, h, wd, c = x_shape
    o = dy.shape[-1]
    dy2 = dy.reshape(-1, o)
    dw = (cols.T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0)
    if k == 1 and stride == 1:
        return (dy2 @ w.reshape(c, o).T).reshape(x_shape), dw, db
    # scatter dy onto a zero grid at its stride, then correlate with the flipped kernel
    off = k - 1 - pad
    up = np.zeros((b, h + k - 1, wd + k - 1, o), dtype=dy.dtype)
    ho, wo = dy.shape[1:3]
    up[:, off:off + stride * (ho - 1) + 1:stride, off:off + stride * (wo - 1) + 1:stride, :] = dy
    w_flip = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * o, c)
    ucols, _ = _im2col(up, k, 1, 0)
    return (ucols @ w_flip).reshape(x_shape), dw, db


def _channel_sum(x2):
    return np.ones(x2.shape[0], dtype=x2.dtype) @ x2


def bn_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.9):
    """Batch norm over all but the channel axis.

    In train mode batch statistics are used (biased variance) and the running
    estimates are updated in place.
    """
    x2 = x.reshape(-1, x.shape[-1])
    if train:
        m = x2.shape[0]
        mean = _channel_sum(x2) / m
        xc = x2 - mean
        var = _channel_sum(xc * xc) / m
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        xc = x2 - running_mean
        var = running_var
    inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
    xhat = xc * inv_std
    return (xhat * gamma + beta).reshape(x.shape), (xhat, inv_std, gamma, train)


def bn_backward(dy, cache):
    xhat, inv_std, gamma, train = cache
    dy2 = dy.reshape(-1, dy.shape[-1])
    dgamma = _channel_sum(dy2 * xhat)
    dbeta = _channel_sum(dy2)
    if not train:
        return (dy2 * (gamma * inv_std)).reshape(dy.shape), dgamma, dbeta
    m = dy2.shape[0]
    # dL/dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
    dx = (dy2 - dbeta / m - xhat * (dgamma / m)) * (gamma * inv_std)
    return dx.reshape(dy.shape), dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def gap_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def gap_backward(dy, shape):
    b, h, w, c = shape
    return np.broadcast_to(dy[:, None, None, :] / (h * w), shape).copy()


def dense_forward(x, w, b):
    return x @ w + b, x


def dense_backward(dy, x, w):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    b = probs.shape[0]
    p_true = probs[np.arange(b), labels]
    loss = -np.mean(np.log(np.maximum(p_true, np.finfo(probs.dtype).tiny)))
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1
    return float(loss), dlogits / b
