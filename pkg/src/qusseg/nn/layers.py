"""Hand-differentiated layers on NCHW numpy arrays.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Layers keep the dtype of their input, so the same
code runs float32 training and float64 gradient checks.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..entropy import interp_matrix
from ..errors import BatchError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _check4(x, name="x"):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be NCHW, got shape {x.shape}")


def conv2d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlation of ``x (N,C,H,W)`` with ``w (F,C,kh,kw)``."""
    _check4(x)
    if w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"weights {w.shape} do not match input channels {x.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} filters")
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError("kernel larger than padded input")
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, F
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, xp.shape, cols, w, stride, pad)


def conv2d_backward(dout, cache):
    x_shape, xp_shape, cols, w, stride, pad = cache
    kh, kw = w.shape[2:]
    ho, wo = dout.shape[2:]
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))
    dcols = np.tensordot(dout, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return dxp, dw, db


def transposed_conv2d_forward(x, w, b):
    """2x2 / stride-2 transposed convolution; ``w`` is ``(C_in, C_out, 2, 2)``.

    With kernel == stride the output taps never overlap, so every input pixel
    writes its own 2x2 output patch.
    """
    _check4(x)
    if w.ndim != 4 or w.shape[0] != x.shape[1] or w.shape[2:] != (2, 2):
        raise ShapeError(f"weights {w.shape} incompatible with input {x.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[1]} outputs")
    n, _, h, wd = x.shape
    out = np.einsum("nchw,cfab->nfhawb", x, w, optimize=True)
    out = out.reshape(n, w.shape[1], 2 * h, 2 * wd) + b[None, :, None, None]
    return out, (x, w)


def transposed_conv2d_backward(dout, cache):
    x, w = cache
    n, f, h2, w2 = dout.shape
    d = dout.reshape(n, f, h2 // 2, 2, w2 // 2, 2)
    dx = np.einsum("nfhawb,cfab->nchw", d, w, optimize=True)
    dw = np.einsum("nchw,nfhawb->cfab", x, d, optimize=True)
    return dx, dw, dout.sum(axis=(0, 2, 3))


def maxpool2x2_forward(x):
    _check4(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max pooling needs even H and W, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2x2_backward(dout, cache):
    shape, arg = cache
    n, c, h, w = shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def batchnorm_forward(x, gamma, beta, running=None, training=True):
    """Per-channel batch normalisation.

    ``running`` is a dict with ``mean`` and ``var`` arrays, updated in place
    with momentum 0.9 during training and used instead of batch statistics
    at inference.
    """
    _check4(x)
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm parameters must have shape ({c},)")
    if training:
        if n * h * w < 2:
            raise BatchError("batch normalisation needs N*H*W >= 2 in training mode")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if running is not None:
            running["mean"] = BN_MOMENTUM * running["mean"] + (1 - BN_MOMENTUM) * mean
            running["var"] = BN_MOMENTUM * running["var"] + (1 - BN_MOMENTUM) * var
    else:
        mean, var = running["mean"].astype(x.dtype), running["var"].astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not training:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    dx = (inv_std[None, :, None, None] / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    # saturated values are pulled back inside the open interval (0, 1)
    info = np.finfo(out.dtype)
    return np.clip(out, info.tiny, 1.0 - info.epsneg, out=out)


def sigmoid_forward(x):
    s = sigmoid(x)
    return s, s


def sigmoid_backward(dout, s):
    return dout * s * (1 - s)


def matching_layer_forward(x, w, b):
    """Learnable 1x1 convolution from one grey channel to three, no activation."""
    _check4(x)
    if x.shape[1] != 1:
        raise ShapeError(f"matching layer expects 1 input channel, got {x.shape[1]}")
    if w.shape != (3, 1, 1, 1):
        raise ShapeError(f"matching layer weights must be (3,1,1,1), got {w.shape}")
    return conv2d_forward(x, w, b)


matching_layer_backward = conv2d_backward


def upsample_bilinear_forward(x, out_hw):
    """Bilinear resize of the spatial axes, half-pixel centres; linear in ``x``."""
    rh = interp_matrix(x.shape[2], out_hw[0]).astype(x.dtype)
    rw = interp_matrix(x.shape[3], out_hw[1]).astype(x.dtype)
    out = np.einsum("ih,nchw,jw->ncij", rh, x, rw, optimize=True)
    return out, (rh, rw)


def upsample_bilinear_backward(dout, cache):
    rh, rw = cache
    return np.einsum("ih,ncij,jw->nchw", rh, dout, rw, optimize=True)


def attention_gate_forward(x, g, p):
    """Additive attention gate on skip features ``x`` driven by coarser ``g``.

    ``p`` holds ``theta_w/theta_b`` (1x1 stride-2 conv on ``x``),
    ``phi_w/phi_b`` (1x1 conv on ``g``) and ``psi_w/psi_b`` (1x1 conv to one
    channel). Returns the gated features and the coefficient map ``alpha``
    at the resolution of ``x``.
    """
    _check4(x)
    _check4(g, "g")
    if x.shape[0] != g.shape[0] or x.shape[2] != 2 * g.shape[2] or x.shape[3] != 2 * g.shape[3]:
        raise ShapeError(f"skip {x.shape} must be exactly twice the gating size {g.shape}")
    tx, c_theta = conv2d_forward(x, p["theta_w"], p["theta_b"], stride=2)
    pg, c_phi = conv2d_forward(g, p["phi_w"], p["phi_b"])
    if tx.shape != pg.shape:
        raise ShapeError(f"gate branches disagree: {tx.shape} vs {pg.shape}")
    r, c_relu = relu_forward(tx + pg)
    q, c_psi = conv2d_forward(r, p["psi_w"], p["psi_b"])
    a, c_sig = sigmoid_forward(q)
    alpha, c_up = upsample_bilinear_forward(a, x.shape[2:])
    out = x * alpha
    return out, alpha, (x, alpha, c_theta, c_phi, c_relu, c_psi, c_sig, c_up)


def attention_gate_backward(dout, cache):
    x, alpha, c_theta, c_phi, c_relu, c_psi, c_sig, c_up = cache
    dx = dout * alpha
    dalpha = (dout * x).sum(axis=1, keepdims=True)
    da = upsample_bilinear_backward(dalpha, c_up)
    dq = sigmoid_backward(da, c_sig)
    dr, dpsi_w, dpsi_b = conv2d_backward(dq, c_psi)
    ds = relu_backward(dr, c_relu)
    dx_theta, dtheta_w, dtheta_b = conv2d_backward(ds, c_theta)
    dg, dphi_w, dphi_b = conv2d_backward(ds, c_phi)
    grads = {"theta_w": dtheta_w, "theta_b": dtheta_b, "phi_w": dphi_w, "phi_b": dphi_b,
             "psi_w": dpsi_w, "psi_b": dpsi_b}
    return dx + dx_theta, dg, grads


def dice_loss_forward(pred, target, eps=1.0):
    """Soft Dice loss ``1 - (2 sum(p t) + eps) / (sum p + sum t + eps)``, batch-averaged."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    # correctly rounded sums do not depend on element order, so the loss is
    # exactly invariant to flips and other pixel permutations
    n = pred.shape[0]
    p2 = pred.reshape(n, -1)
    t2 = target.reshape(n, -1)
    inter = np.array([math.fsum(row) for row in p2 * t2], dtype=pred.dtype)
    denom = np.array([math.fsum(a) + math.fsum(b) + eps for a, b in zip(p2, t2)], dtype=pred.dtype)
    num = 2 * inter + eps
    loss = float(np.mean(1.0 - num / denom))
    return loss, (target, num, denom)


def dice_loss_backward(cache):
    target, num, denom = cache
    n = target.shape[0]
    shape = (n,) + (1,) * (target.ndim - 1)
    num = num.reshape(shape)
    denom = denom.reshape(shape)
    return -(2 * target * denom - num) / (denom ** 2) / n
