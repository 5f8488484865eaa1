"""Numba-compiled kernels mirroring the numpy reference implementations.

Same contracts as `reference`: pre-padded inputs, no bias handling, argmax
indices flat into the padded (batch, channel) slice. Loops are ordered so the
innermost axis walks contiguous memory when the width stride is 1, which is
what LLVM needs to vectorize the accumulation. Every output element is
reduced serially inside a single iteration, so results are independent of
thread scheduling and bitwise reproducible.
"""

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def _conv3d_forward(xp, w, sT, sH, sW, out):
    B, Ci, Tp, Hp, Wp = xp.shape
    Co = w.shape[0]
    kT, kH, kW = w.shape[2], w.shape[3], w.shape[4]
    To, Ho, Wo = out.shape[2], out.shape[3], out.shape[4]
    for b in range(B):
        for o in range(Co):
            for ot in range(To):
                for ci in range(Ci):
                    for kt in range(kT):
                        it = ot * sT + kt
                        for kh in range(kH):
                            for oh in range(Ho):
                                ih = oh * sH + kh
                                for kw in range(kW):
                                    wv = w[o, ci, kt, kh, kw]
                                    for ow in range(Wo):
                                        out[b, o, ot, oh, ow] += wv * xp[b, ci, it, ih, ow * sW + kw]
    return out


def conv3d_forward(xp, w, stride):
    B, Ci, Tp, Hp, Wp = xp.shape
    Co, _, kT, kH, kW = w.shape
    sT, sH, sW = stride
    To = (Tp - kT) // sT + 1
    Ho = (Hp - kH) // sH + 1
    Wo = (Wp - kW) // sW + 1
    out = np.zeros((B, Co, To, Ho, Wo), dtype=xp.dtype)
    return _conv3d_forward(xp, w, sT, sH, sW, out)


@njit(cache=True)
def _conv3d_backward_input(gy, w, sT, sH, sW, dxp):
    B, Co, To, Ho, Wo = gy.shape
    Ci = w.shape[1]
    kT, kH, kW = w.shape[2], w.shape[3], w.shape[4]
    for b in range(B):
        for ci in range(Ci):
            for o in range(Co):
                for ot in range(To):
                    for kt in range(kT):
                        it = ot * sT + kt
                        for oh in range(Ho):
                            for kh in range(kH):
                                ih = oh * sH + kh
                                for kw in range(kW):
                                    wv = w[o, ci, kt, kh, kw]
                                    for ow in range(Wo):
                                        dxp[b, ci, it, ih, ow * sW + kw] += wv * gy[b, o, ot, oh, ow]
    return dxp


def conv3d_backward_input(gy, w, stride, padded_shape):
    sT, sH, sW = stride
    dxp = np.zeros(padded_shape, dtype=gy.dtype)
    return _conv3d_backward_input(gy, w, sT, sH, sW, dxp)


@njit(cache=True)
def _conv3d_backward_weight(gy, xp, sT, sH, sW, dw):
    B, Co, To, Ho, Wo = gy.shape
    Ci = dw.shape[1]
    kT, kH, kW = dw.shape[2], dw.shape[3], dw.shape[4]
    for o in range(Co):
        for ci in range(Ci):
            for kt in range(kT):
                for kh in range(kH):
                    for kw in range(kW):
                        acc = dw.dtype.type(0.0)
                        for b in range(B):
                            for ot in range(To):
                                it = ot * sT + kt
                                for oh in range(Ho):
                                    ih = oh * sH + kh
                                    for ow in range(Wo):
                                        acc += gy[b, o, ot, oh, ow] * xp[b, ci, it, ih, ow * sW + kw]
                        dw[o, ci, kt, kh, kw] = acc
    return dw


def conv3d_backward_weight(gy, xp, kernel_shape, stride):
    sT, sH, sW = stride
    dw = np.zeros(kernel_shape, dtype=gy.dtype)
    return _conv3d_backward_weight(gy, xp, sT, sH, sW, dw)


def conv3d_backward(gy, xp, w, stride, padded_shape, need_input=True, need_weight=True):
    """Fused-signature twin; the compiled loops stay separate kernels."""
    dxp = conv3d_backward_input(gy, w, stride, padded_shape) if need_input else None
    dw = conv3d_backward_weight(gy, xp, w.shape, stride) if need_weight else None
    return dxp, dw


@njit(cache=True)
def _maxpool3d_forward(xp, kT, kH, kW, sT, sH, sW, out, argmax):
    B, C, Tp, Hp, Wp = xp.shape
    To, Ho, Wo = out.shape[2], out.shape[3], out.shape[4]
    for b in range(B):
        for c in range(C):
            for ot in range(To):
                for oh in range(Ho):
                    for ow in range(Wo):
                        it0 = ot * sT
                        ih0 = oh * sH
                        iw0 = ow * sW
                        best = xp[b, c, it0, ih0, iw0]
                        besti = (it0 * Hp + ih0) * Wp + iw0
                        for kt in range(kT):
                            for kh in range(kH):
                                for kw in range(kW):
                                    v = xp[b, c, it0 + kt, ih0 + kh, iw0 + kw]
                                    if v > best:
                                        best = v
                                        besti = ((it0 + kt) * Hp + ih0 + kh) * Wp + iw0 + kw
                        out[b, c, ot, oh, ow] = best
                        argmax[b, c, ot, oh, ow] = besti
    return out, argmax


def maxpool3d_forward(xp, window, stride):
    B, C, Tp, Hp, Wp = xp.shape
    kT, kH, kW = window
    sT, sH, sW = stride
    To = (Tp - kT) // sT + 1
    Ho = (Hp - kH) // sH + 1
    Wo = (Wp - kW) // sW + 1
    out = np.empty((B, C, To, Ho, Wo), dtype=xp.dtype)
    argmax = np.empty((B, C, To, Ho, Wo), dtype=np.int64)
    return _maxpool3d_forward(xp, kT, kH, kW, sT, sH, sW, out, argmax)


@njit(cache=True)
def _maxpool3d_backward(gy, argmax, dxp_flat):
    B, C = gy.shape[0], gy.shape[1]
    n = gy.shape[2] * gy.shape[3] * gy.shape[4]
    gf = gy.reshape(B, C, n)
    fi = argmax.reshape(B, C, n)
    for b in range(B):
        for c in range(C):
            for i in range(n):
                dxp_flat[b, c, fi[b, c, i]] += gf[b, c, i]
    return dxp_flat


def maxpool3d_backward(gy, argmax, padded_shape):
    B, C = padded_shape[0], padded_shape[1]
    dxp = np.zeros((B, C, padded_shape[2] * padded_shape[3] * padded_shape[4]), dtype=gy.dtype)
    gy = np.ascontiguousarray(gy)
    argmax = np.ascontiguousarray(argmax)
    return _maxpool3d_backward(gy, argmax, dxp).reshape(padded_shape)
