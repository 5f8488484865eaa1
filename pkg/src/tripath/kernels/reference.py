"""Pure-numpy reference kernels for 3D convolution and pooling.

All kernels operate on pre-padded inputs and know nothing about autodiff;
the tensor layer handles padding, cropping and graph bookkeeping. The
convolution lowers each window into a row of a patch matrix (im2col) so
the whole contraction is one BLAS call; when that matrix would be too
large the kernels fall back to one matmul per kernel offset, which keeps
memory bounded by an activation-sized temporary.
"""

import numpy as np

BACKEND_NAME = "numpy"

# patch-matrix budget before falling back to the per-offset path
IM2COL_BYTE_CAP = 1 << 30


def _out_sizes(xp_shape, kernel, stride):
    (Tp, Hp, Wp), (kT, kH, kW), (sT, sH, sW) = xp_shape[2:], kernel, stride
    return (Tp - kT) // sT + 1, (Hp - kH) // sH + 1, (Wp - kW) // sW + 1


def _windows(xp, kernel, stride):
    """Strided view [B, Ci, To, Ho, Wo, kT, kH, kW] of every window."""
    view = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=(2, 3, 4))
    return view[:, :, ::stride[0], ::stride[1], ::stride[2]]


def conv3d_forward(xp, w, stride):
    """Cross-correlate padded input [B,Ci,Tp,Hp,Wp] with kernels [Co,Ci,kT,kH,kW]."""
    B, Ci, Tp, Hp, Wp = xp.shape
    Co, _, kT, kH, kW = w.shape
    To, Ho, Wo = _out_sizes(xp.shape, (kT, kH, kW), stride)
    k_vol = Ci * kT * kH * kW
    m = B * To * Ho * Wo
    if m * k_vol * xp.itemsize > IM2COL_BYTE_CAP:
        return _forward_per_offset(xp, w, stride, (To, Ho, Wo))
    win = _windows(xp, (kT, kH, kW), stride)
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(m, k_vol)
    out = col @ w.reshape(Co, k_vol).T
    return out.reshape(B, To, Ho, Wo, Co).transpose(0, 4, 1, 2, 3)


def _forward_per_offset(xp, w, stride, out_sizes):
    B, Ci = xp.shape[:2]
    Co, _, kT, kH, kW = w.shape
    sT, sH, sW = stride
    To, Ho, Wo = out_sizes
    out = np.zeros((B, Co, To * Ho * Wo), dtype=xp.dtype)
    for kt in range(kT):
        for kh in range(kH):
            for kw in range(kW):
                xs = xp[:, :, kt:kt + sT * To:sT, kh:kh + sH * Ho:sH, kw:kw + sW * Wo:sW]
                xs = np.ascontiguousarray(xs).reshape(B, Ci, -1)
                out += np.matmul(w[:, :, kt, kh, kw], xs)
    return out.reshape(B, Co, To, Ho, Wo)


def conv3d_backward(gy, xp, w, stride, padded_shape, need_input=True, need_weight=True):
    """Both convolution gradients in one pass so the reshaped upstream
    gradient is shared. Returns (d_padded_input or None, d_weight or None).
    """
    B, Co, To, Ho, Wo = gy.shape
    _, Ci, kT, kH, kW = w.shape
    sT, sH, sW = stride
    k_vol = Ci * kT * kH * kW
    m = B * To * Ho * Wo
    dxp = dw = None
    if m * k_vol * gy.itemsize <= IM2COL_BYTE_CAP:
        gm = np.ascontiguousarray(gy.transpose(0, 2, 3, 4, 1)).reshape(m, Co)
        if need_input:
            dxp = np.zeros(padded_shape, dtype=gy.dtype)
            dcol = (gm @ w.reshape(Co, k_vol)).reshape(B, To, Ho, Wo, Ci, kT, kH, kW)
            for kt in range(kT):
                for kh in range(kH):
                    for kw in range(kW):
                        piece = dcol[..., kt, kh, kw].transpose(0, 4, 1, 2, 3)
                        dxp[:, :, kt:kt + sT * To:sT, kh:kh + sH * Ho:sH,
                            kw:kw + sW * Wo:sW] += piece
        if need_weight:
            win = _windows(xp, (kT, kH, kW), stride)
            col = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(m, k_vol)
            dw = (gm.T @ col).reshape(w.shape)
        return dxp, dw
    if need_input:
        dxp = np.zeros(padded_shape, dtype=gy.dtype)
        gf = gy.reshape(B, Co, -1)
        for kt in range(kT):
            for kh in range(kH):
                for kw in range(kW):
                    g = np.matmul(w[:, :, kt, kh, kw].T, gf).reshape(B, Ci, To, Ho, Wo)
                    dxp[:, :, kt:kt + sT * To:sT, kh:kh + sH * Ho:sH,
                        kw:kw + sW * Wo:sW] += g
    if need_weight:
        dw = conv3d_backward_weight(gy, xp, w.shape, stride)
    return dxp, dw


def conv3d_backward_input(gy, w, stride, padded_shape):
    """Gradient w.r.t. the padded input; caller crops the padding off."""
    dxp, _ = conv3d_backward(gy, None, w, stride, padded_shape, need_weight=False)
    return dxp


def conv3d_backward_weight(gy, xp, kernel_shape, stride):
    """Gradient w.r.t. the kernels."""
    B, Co, To, Ho, Wo = gy.shape
    _, Ci, kT, kH, kW = kernel_shape
    sT, sH, sW = stride
    dw = np.zeros(kernel_shape, dtype=gy.dtype)
    gf = gy.reshape(B, Co, -1)
    for kt in range(kT):
        for kh in range(kH):
            for kw in range(kW):
                xs = xp[:, :, kt:kt + sT * To:sT, kh:kh + sH * Ho:sH, kw:kw + sW * Wo:sW]
                xs = np.ascontiguousarray(xs).reshape(B, Ci, -1)
                dw[:, :, kt, kh, kw] = np.matmul(gf, xs.transpose(0, 2, 1)).sum(axis=0)
    return dw


def maxpool3d_forward(xp, window, stride):
    """Max pooling over a pre-padded input; returns values and flat argmax indices.

    Argmax indices address the flattened padded input of one (batch, channel)
    slice, so the backward scatter needs no knowledge of the pooling geometry.
    """
    B, C, Tp, Hp, Wp = xp.shape
    kT, kH, kW = window
    sT, sH, sW = stride
    To = (Tp - kT) // sT + 1
    Ho = (Hp - kH) // sH + 1
    Wo = (Wp - kW) // sW + 1
    n_win = kT * kH * kW
    windows = np.empty((B, C, To, Ho, Wo, n_win), dtype=xp.dtype)
    offsets = np.empty(n_win, dtype=np.int64)
    i = 0
    for kt in range(kT):
        for kh in range(kH):
            for kw in range(kW):
                windows[..., i] = xp[:, :, kt:kt + sT * To:sT, kh:kh + sH * Ho:sH, kw:kw + sW * Wo:sW]
                offsets[i] = (kt * Hp + kh) * Wp + kw
                i += 1
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    ot, oh, ow = np.meshgrid(
        np.arange(To) * sT, np.arange(Ho) * sH, np.arange(Wo) * sW, indexing="ij"
    )
    base = (ot * Hp + oh) * Wp + ow
    argmax = base[None, None] + offsets[arg]
    return out, argmax


def maxpool3d_backward(gy, argmax, padded_shape):
    """Scatter upstream gradients to the argmax positions of the padded input."""
    B, C = gy.shape[:2]
    plane = padded_shape[2] * padded_shape[3] * padded_shape[4]
    slot = np.arange(B * C, dtype=np.int64).reshape(B, C, 1) * plane
    flat = (argmax.reshape(B, C, -1) + slot).ravel()
    dxp = np.bincount(flat, weights=gy.ravel().astype(np.float64),
                      minlength=B * C * plane)
    return dxp.astype(gy.dtype).reshape(padded_shape)
