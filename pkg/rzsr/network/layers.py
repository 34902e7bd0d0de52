"""
Network Layers
Forward and hand-derived backward passes for the layers of the SR network.

Tensors are (channels, height, width) arrays; 1x1 embedding weights are
(out, in) matrices. Every layer reads its parameters from a shared
name -> array mapping so the network owns a single flat parameter set.
"""
from typing import Any, Dict, Tuple

import numpy as np

from rzsr.core.error_handlers import CommonErrors, ShapeError

Params = Dict[str, np.ndarray]
Grads = Dict[str, np.ndarray]


# =============================================================================
# REFLECT PADDING
# =============================================================================

def reflect_pad(x: np.ndarray) -> np.ndarray:
    """Mirror-pad one pixel on each spatial side, excluding the edge sample"""
    return np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")


def reflect_pad_backward(grad_padded: np.ndarray) -> np.ndarray:
    """Fold gradients of the mirrored border back onto the pixels they copy"""
    g = grad_padded.copy()
    height = g.shape[1] - 2
    width = g.shape[2] - 2
    g[:, 2, :] += g[:, 0, :]
    g[:, height - 1, :] += g[:, height + 1, :]
    g[:, :, 2] += g[:, :, 0]
    g[:, :, width - 1] += g[:, :, width + 1]
    return g[:, 1:height + 1, 1:width + 1]


# =============================================================================
# 3x3 CONVOLUTION
# =============================================================================

def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1) -> Tuple[np.ndarray, Any]:
    """
    3x3 convolution with reflect padding 1

    Returns:
        (pre-activation output of spatial size ceil(in / stride), cache)
    """
    channels, height, width = x.shape
    out_channels = weight.shape[0]
    if channels != weight.shape[1]:
        raise CommonErrors.channel_mismatch(weight.shape[1], channels, "conv")
    if height < 2 or width < 2:
        raise ShapeError(f"conv input must be at least 2x2, got {height}x{width}")

    padded = reflect_pad(x)
    out_h = -(-height // stride)
    out_w = -(-width // stride)
    cols = np.empty((channels, 3, 3, out_h, out_w), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, i, j] = padded[:, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride]
    cols = cols.reshape(channels * 9, out_h * out_w)
    out = weight.reshape(out_channels, -1) @ cols + bias[:, None]
    return out.reshape(out_channels, out_h, out_w), (cols, x.shape, stride)


def conv2d_backward(dout: np.ndarray, weight: np.ndarray, cache: Any) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dweight, dbias)"""
    cols, (channels, height, width), stride = cache
    out_channels, out_h, out_w = dout.shape
    dout_mat = dout.reshape(out_channels, -1)
    dweight = (dout_mat @ cols.T).reshape(weight.shape)
    dbias = dout_mat.sum(axis=1)
    dcols = (weight.reshape(out_channels, -1).T @ dout_mat).reshape(channels, 3, 3, out_h, out_w)

    dpadded = np.zeros((channels, height + 2, width + 2), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dpadded[:, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride] += dcols[:, i, j]
    return reflect_pad_backward(dpadded), dweight, dbias


# =============================================================================
# 4x4 STRIDE-2 TRANSPOSED CONVOLUTION
# =============================================================================

def transposed_conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, Any]:
    """
    Transposed convolution, kernel 4, stride 2, padding 1: doubles height and width

    Args:
        weight: (in, out, 4, 4)
    """
    in_channels, height, width = x.shape
    if in_channels != weight.shape[0]:
        raise CommonErrors.channel_mismatch(weight.shape[0], in_channels, "transposed conv")
    out_channels = weight.shape[1]
    x_mat = x.reshape(in_channels, -1)
    cols = (weight.reshape(in_channels, -1).T @ x_mat).reshape(out_channels, 4, 4, height, width)
    full = np.zeros((out_channels, 2 * height + 2, 2 * width + 2), dtype=x.dtype)
    for i in range(4):
        for j in range(4):
            full[:, i:i + 2 * height:2, j:j + 2 * width:2] += cols[:, i, j]
    out = full[:, 1:2 * height + 1, 1:2 * width + 1] + bias[:, None, None]
    return out, (x_mat, x.shape)


def transposed_conv_backward(dout: np.ndarray, weight: np.ndarray, cache: Any) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_mat, (in_channels, height, width) = cache
    out_channels = weight.shape[1]
    dfull = np.zeros((out_channels, 2 * height + 2, 2 * width + 2), dtype=dout.dtype)
    dfull[:, 1:2 * height + 1, 1:2 * width + 1] = dout
    dcols = np.empty((out_channels, 4, 4, height, width), dtype=dout.dtype)
    for i in range(4):
        for j in range(4):
            dcols[:, i, j] = dfull[:, i:i + 2 * height:2, j:j + 2 * width:2]
    dcols = dcols.reshape(out_channels * 16, -1)
    dweight = (x_mat @ dcols.T).reshape(weight.shape)
    dx = (weight.reshape(in_channels, -1) @ dcols).reshape(in_channels, height, width)
    return dx, dweight, dout.sum(axis=(1, 2))


# =============================================================================
# NON-LOCAL ATTENTION
# =============================================================================

def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def nonlocal_forward(fs: np.ndarray, fc: np.ndarray, params: Params, name: str) -> Tuple[np.ndarray, Any]:
    """
    Embedded-Gaussian attention of `fs` positions over `fc` positions, with residual

    out_x = fs_x + h( sum_y softmax_y(theta(fs_x) . phi(fc_y)) g(fc_y) )
    """
    if fs.shape[0] != fc.shape[0]:
        raise CommonErrors.channel_mismatch(fs.shape[0], fc.shape[0], "non-local block")
    channels = params[f"{name}.theta.weight"].shape[1]
    if fs.shape[0] != channels:
        raise CommonErrors.channel_mismatch(channels, fs.shape[0], "non-local block")

    fs_mat = fs.reshape(fs.shape[0], -1)
    fc_mat = fc.reshape(fc.shape[0], -1)
    theta = params[f"{name}.theta.weight"] @ fs_mat + params[f"{name}.theta.bias"][:, None]
    phi = params[f"{name}.phi.weight"] @ fc_mat + params[f"{name}.phi.bias"][:, None]
    g = params[f"{name}.g.weight"] @ fc_mat + params[f"{name}.g.bias"][:, None]
    attention = softmax_rows(theta.T @ phi)
    mixed = g @ attention.T
    out = fs_mat + params[f"{name}.h.weight"] @ mixed + params[f"{name}.h.bias"][:, None]
    cache = (fs_mat, fc_mat, theta, phi, g, attention, mixed, fs.shape, fc.shape)
    return out.reshape(fs.shape), cache


def nonlocal_backward(dout: np.ndarray, params: Params, name: str, cache: Any) -> Tuple[np.ndarray, np.ndarray, Grads]:
    """Returns (dfs, dfc, parameter gradients)"""
    fs_mat, fc_mat, theta, phi, g, attention, mixed, fs_shape, fc_shape = cache
    dout_mat = dout.reshape(dout.shape[0], -1)
    w_theta = params[f"{name}.theta.weight"]
    w_phi = params[f"{name}.phi.weight"]
    w_g = params[f"{name}.g.weight"]
    w_h = params[f"{name}.h.weight"]

    grads: Grads = {
        f"{name}.h.weight": dout_mat @ mixed.T,
        f"{name}.h.bias": dout_mat.sum(axis=1),
    }
    dmixed = w_h.T @ dout_mat
    dg = dmixed @ attention
    dattention = dmixed.T @ g
    dlogits = attention * (dattention - (dattention * attention).sum(axis=1, keepdims=True))
    dtheta = phi @ dlogits.T
    dphi = theta @ dlogits

    grads[f"{name}.theta.weight"] = dtheta @ fs_mat.T
    grads[f"{name}.theta.bias"] = dtheta.sum(axis=1)
    grads[f"{name}.phi.weight"] = dphi @ fc_mat.T
    grads[f"{name}.phi.bias"] = dphi.sum(axis=1)
    grads[f"{name}.g.weight"] = dg @ fc_mat.T
    grads[f"{name}.g.bias"] = dg.sum(axis=1)

    dfs = dout_mat + w_theta.T @ dtheta
    dfc = w_phi.T @ dphi + w_g.T @ dg
    return dfs.reshape(fs_shape), dfc.reshape(fc_shape), grads


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)
