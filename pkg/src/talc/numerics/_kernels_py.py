"""Pure numpy row kernels. Same signatures as the compiled ``_kernels`` module.

All inputs are 2-D C-contiguous float64 arrays laid out as (rows, n).
"""
import numpy as np


def softmax_fwd(x, mask=None):
    if mask is None:
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    keep = mask.astype(bool)
    masked = np.where(keep, x, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(keep, np.exp(np.where(keep, x, 0.0) - m), 0.0)
    s = e.sum(axis=1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def softmax_bwd(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0].copy()


def layernorm_bwd(gy, xhat, rstd, gamma):
    g = gy * gamma
    d = xhat.shape[1]
    mg = g.sum(axis=1, keepdims=True) / d
    mgx = (g * xhat).sum(axis=1, keepdims=True) / d
    gx = rstd[:, None] * (g - mg - xhat * mgx)
    dgamma = (gy * xhat).sum(axis=0)
    dbeta = gy.sum(axis=0)
    return gx, dgamma, dbeta


def silu_fwd(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * sig, sig


def silu_bwd(x, sig, gy):
    return gy * sig * (1.0 + x * (1.0 - sig))
