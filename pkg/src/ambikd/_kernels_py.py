"""Pure-numpy row kernels. Reference implementation and fallback for ``_ckernels``.

All functions take 2-D arrays of shape (rows, width) and reduce along the last axis.
"""
import numpy as np

_GELU_C = float(np.sqrt(2.0 / np.pi))


def softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax_rows_backward(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_rows(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layernorm_rows_backward(gy, xhat, rstd, gamma):
    g_gamma = (gy * xhat).sum(axis=0)
    g_beta = gy.sum(axis=0)
    gxhat = gy * gamma
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = (gxhat - m1 - xhat * m2) * rstd[:, None]
    return gx, g_gamma, g_beta


def gelu(x):
    """tanh-approximate GELU; also returns the tanh term for the backward pass."""
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def gelu_backward(x, t, gy):
    d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner)
