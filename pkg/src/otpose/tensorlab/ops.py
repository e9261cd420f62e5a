"""Differentiable operations on :class:`~otpose.tensorlab.tensor.Tensor`.

Shape conventions used throughout the package:

* token volumes are ``(..., D, L)``: channel-tokens along axis ``-2``, the
  flattened spatial grid along ``-1``; leading axes batch independent samples;
* image stacks are ``(..., C, H, W)``.

Operations accept any leading batch axes where that is cheap; ``matmul``
broadcasts leading axes like ``numpy.matmul`` and the backward pass sums
gradients back to each operand's shape.  There is no general broadcasting
beyond that.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import _fused
from .tensor import ConfigError, DimensionError, Tensor

__all__ = [
    "add", "add_scalar", "add_const", "sub", "mul", "scale",
    "sum_all", "weighted_sum", "reshape", "transpose", "permute",
    "slice_channels", "concat",
    "matmul", "softmax_rows", "layernorm", "gelu", "relu", "sigmoid",
    "scale_rows", "bias_rows", "bias_heads", "bias_channels",
    "linear_rows", "linear_heads", "residual_scale",
    "channel_max_norm", "conv2d", "bilinear_sample",
]


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise DimensionError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum the broadcast axes of ``g`` away so it matches ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor.from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return Tensor.from_op(a.data + c, (a,), lambda g: (g,))


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-learned array, broadcast over leading axes of ``a``."""
    out = a.data + const
    if out.shape != a.data.shape:
        raise DimensionError(
            f"add_const: constant {const.shape} does not broadcast into {a.shape}")
    return Tensor.from_op(out, (a,), lambda g: (g,))


def sum_all(a: Tensor) -> Tensor:
    shape, dt = a.data.shape, a.data.dtype

    def bwd(g):
        return (np.full(shape, g, dtype=dt),)

    return Tensor.from_op(a.data.sum(dtype=dt), (a,), bwd)


def weighted_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(a * weights)`` for a constant weight array (broadcastable)."""
    w = np.asarray(weights, dtype=a.data.dtype)
    out = (a.data * w).sum(dtype=a.data.dtype)
    shape = a.data.shape

    def bwd(g):
        return (np.broadcast_to(w, shape) * g,)

    return Tensor.from_op(out, (a,), bwd)


# -- structural -------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor.from_op(a.data.reshape(shape), (a,),
                          lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise DimensionError("transpose needs rank >= 2")
    return Tensor.from_op(np.swapaxes(a.data, -1, -2), (a,),
                          lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(a.data, axes), (a,),
                          lambda g: (np.transpose(g, inverse),))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice the channel axis (-3) of an image stack; backward zero-embeds."""
    if x.data.ndim < 3:
        raise DimensionError("slice_channels: input needs rank >= 3")
    c = x.data.shape[-3]
    if not (0 <= start < stop <= c):
        raise DimensionError(
            f"slice_channels: [{start}:{stop}] out of range for {c} channels")
    idx = (Ellipsis, slice(start, stop), slice(None), slice(None))
    shape = x.data.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return Tensor.from_op(x.data[idx], (x,), bwd)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise DimensionError("concat of no tensors")
    datas = [p.data for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor.from_op(out, tuple(parts), bwd)


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy-style leading-axis broadcasting.

    The gradients are ``dA = dC @ B^T`` and ``dB = A^T @ dC``, summed over any
    broadcast leading axes.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError("matmul operands need rank >= 2")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(
            f"matmul: inner extents differ, {ad.shape} @ {bd.shape}")
    if ad.dtype != bd.dtype:
        raise DimensionError(f"matmul: dtype mismatch {ad.dtype} vs {bd.dtype}")
    out = np.matmul(ad, bd)
    a_shape, b_shape = ad.shape, bd.shape

    def bwd(g):
        da = db = None
        if a.requires_grad:
            da = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a_shape)
        if b.requires_grad:
            db = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b_shape)
        return (da, db)

    return Tensor.from_op(out, (a, b), bwd)


def softmax_rows(x: Tensor, tag: Optional[str] = None) -> Tensor:
    """Softmax over the trailing axis, computed with row-max subtraction.

    Rows of the trailing 2D block sum to 1; works for any rank >= 1.
    """
    d = x.data
    shifted = d - d.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor.from_op(y, (x,), bwd, tag=tag)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then affine.

    ``gain`` and ``bias`` are 1-D with length equal to the trailing extent;
    ``eps`` sits inside the square root.
    """
    d = x.data
    n = d.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise DimensionError(
            f"layernorm: gain/bias must have shape ({n},), got "
            f"{gain.data.shape} and {bias.data.shape}")
    if _fused.usable(d, gain.data, bias.data):
        d2 = d.reshape(-1, n)
        y2, mu_f, istd_f = _fused.ln_forward(d2, gain.data, bias.data,
                                             d.dtype.type(eps))

        def bwd_fused(g):
            dx2, dgain, dbias = _fused.ln_backward(
                np.ascontiguousarray(g.reshape(-1, n)), d2, mu_f, istd_f,
                gain.data, x.requires_grad)
            dx = dx2.reshape(d.shape) if x.requires_grad else None
            return (dx,
                    dgain.astype(d.dtype) if gain.requires_grad else None,
                    dbias.astype(d.dtype) if bias.requires_grad else None)

        return Tensor.from_op(y2.reshape(d.shape), (x, gain, bias), bwd_fused)

    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=d.dtype))
    y = (xc * istd) * gain.data + bias.data

    def bwd(g):
        # xhat is recomputed from the retained input to keep the graph lean
        xhat = (d - mu) * istd
        dxhat = g * gain.data
        dgain = dbias = dx = None
        if gain.requires_grad:
            dgain = (g * xhat).reshape(-1, n).sum(axis=0)
        if bias.requires_grad:
            dbias = g.reshape(-1, n).sum(axis=0)
        if x.requires_grad:
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dx = istd * (dxhat - m1 - xhat * m2)
        return (dx, dgain, dbias)

    return Tensor.from_op(y, (x, gain, bias), bwd)


# -- activations --------------------------------------------------------------

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU with an analytic backward.

    The tanh factor is cached for backward; recomputing it doubles the cost
    of the most expensive elementwise pass in the network.  The surrounding
    polynomial chains run fused when numba is present (tanh itself stays
    with numpy, whose SIMD implementation is faster than scalar libm).
    """
    d = x.data
    if _fused.usable(d):
        t = np.tanh(_fused.gelu_arg(d))
        y = _fused.gelu_combine(d, t)

        def bwd_fused(g):
            return (_fused.gelu_backward(np.ascontiguousarray(g), t, d),)

        return Tensor.from_op(y, (x,), bwd_fused)

    t = np.tanh(_GELU_C * (d + _GELU_A * d * d * d))
    y = 0.5 * d * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + (3.0 * _GELU_A) * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du),)

    return Tensor.from_op(y, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    d = x.data
    mask = d > 0

    def bwd(g):
        return (g * mask,)

    return Tensor.from_op(np.where(mask, d, 0.0), (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return Tensor.from_op(y, (x,), bwd)


# -- per-row / per-channel affine ---------------------------------------------

def _rows_check(x: Tensor, v: Tensor, op: str) -> int:
    if x.data.ndim < 2:
        raise DimensionError(f"{op}: input needs rank >= 2")
    d = x.data.shape[-2]
    if v.data.shape != (d,):
        raise DimensionError(f"{op}: vector must have shape ({d},), got {v.shape}")
    return d


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each row (axis -2) of ``x`` by the matching entry of ``s``."""
    d = _rows_check(x, s, "scale_rows")
    sd = s.data[:, None]
    xd = x.data
    out = xd * sd

    def bwd(g):
        dx = ds = None
        if x.requires_grad:
            dx = g * sd
        if s.requires_grad:
            ds = (g * xd).reshape(-1, d, xd.shape[-1]).sum(axis=(0, 2))
        return (dx, ds)

    return Tensor.from_op(out, (x, s), bwd)


def bias_rows(x: Tensor, b: Tensor) -> Tensor:
    d = _rows_check(x, b, "bias_rows")
    out = x.data + b.data[:, None]

    def bwd(g):
        db = g.reshape(-1, d, g.shape[-1]).sum(axis=(0, 2)) if b.requires_grad else None
        return (g, db)

    return Tensor.from_op(out, (x, b), bwd)


def linear_rows(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """Fused ``w @ x + b[:, None]`` for token volumes ``(..., D, L)``.

    One graph node instead of two keeps per-layer activation memory down.
    """
    wd, xd = w.data, x.data
    if wd.ndim != 2 or xd.ndim < 2 or wd.shape[1] != xd.shape[-2]:
        raise DimensionError(f"linear_rows: {wd.shape} @ {xd.shape}")
    m = wd.shape[0]
    if b.data.shape != (m,):
        raise DimensionError(f"linear_rows: bias must have shape ({m},)")
    out = np.matmul(wd, xd)
    out += b.data[:, None]

    def bwd(g):
        dw = dx = db = None
        if w.requires_grad:
            k, L = xd.shape[-2], xd.shape[-1]
            g2 = g.reshape(-1, m, L)
            x2 = xd.reshape(-1, k, L)
            dw = np.matmul(g2, x2.transpose(0, 2, 1)).sum(axis=0)
        if x.requires_grad:
            dx = np.matmul(wd.T, g)
        if b.requires_grad:
            db = g.reshape(-1, m, g.shape[-1]).sum(axis=(0, 2))
        return (dw, dx, db)

    return Tensor.from_op(out, (w, x, b), bwd)


def linear_heads(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """Fused per-head projection: ``w[h] @ x[:, h] + b[h][:, None]``.

    ``w`` is ``(heads, m, k)``, ``x`` is ``(B, heads, k, L)``, ``b`` is
    ``(heads, m)``.
    """
    wd, xd = w.data, x.data
    if wd.ndim != 3 or xd.ndim != 4 or wd.shape[0] != xd.shape[1] \
            or wd.shape[2] != xd.shape[2]:
        raise DimensionError(f"linear_heads: {wd.shape} @ {xd.shape}")
    h, m, k = wd.shape
    if b.data.shape != (h, m):
        raise DimensionError(f"linear_heads: bias must have shape ({h}, {m})")
    out = np.matmul(wd, xd)
    out += b.data[None, :, :, None]

    def bwd(g):
        dw = dx = db = None
        if w.requires_grad:
            dw = np.matmul(g, np.swapaxes(xd, -1, -2)).sum(axis=0)
        if x.requires_grad:
            dx = np.matmul(np.swapaxes(wd, -1, -2), g)
        if b.requires_grad:
            db = g.sum(axis=(0, -1))
        return (dw, dx, db)

    return Tensor.from_op(out, (w, x, b), bwd)


def residual_scale(x: Tensor, s: Tensor, base: Tensor) -> Tensor:
    """Fused LayerScale residual: ``s[:, None] * x + base``."""
    d = _rows_check(x, s, "residual_scale")
    if base.data.shape != x.data.shape:
        raise DimensionError(
            f"residual_scale: base {base.shape} vs branch {x.shape}")
    sd = s.data[:, None]
    xd = x.data
    out = xd * sd
    out += base.data

    def bwd(g):
        dx = g * sd if x.requires_grad else None
        ds = None
        if s.requires_grad:
            ds = (g * xd).reshape(-1, d, xd.shape[-1]).sum(axis=(0, 2))
        return (dx, ds, g)

    return Tensor.from_op(out, (x, s, base), bwd)


def bias_heads(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-(head, row) bias to ``(B, heads, D_h, L)``."""
    if x.data.ndim != 4 or b.data.shape != x.data.shape[1:3]:
        raise DimensionError(
            f"bias_heads: bias {b.shape} does not match input {x.shape}")
    out = x.data + b.data[None, :, :, None]

    def bwd(g):
        db = g.sum(axis=(0, -1)) if b.requires_grad else None
        return (g, db)

    return Tensor.from_op(out, (x, b), bwd)


def bias_channels(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to an image stack ``(..., C, H, W)``."""
    if x.data.ndim < 3:
        raise DimensionError("bias_channels: input needs rank >= 3")
    c = x.data.shape[-3]
    if b.data.shape != (c,):
        raise DimensionError(f"bias_channels: bias must have shape ({c},)")
    out = x.data + b.data[:, None, None]

    def bwd(g):
        db = None
        if b.requires_grad:
            db = g.reshape(-1, c, g.shape[-2] * g.shape[-1]).sum(axis=(0, 2))
        return (g, db)

    return Tensor.from_op(out, (x, b), bwd)


def channel_max_norm(x: Tensor, floor: float = 1e-6) -> Tensor:
    """Divide each channel of ``(..., C, H, W)`` by max(channel max, floor).

    Channels whose maximum is at or below the floor are effectively left
    near zero rather than amplified.  The gradient routes the denominator
    term through the (first) argmax position.
    """
    d = x.data
    if d.ndim < 3:
        raise DimensionError("channel_max_norm: input needs rank >= 3")
    h, w = d.shape[-2], d.shape[-1]
    flat = d.reshape(*d.shape[:-2], h * w)
    m = flat.max(axis=-1)
    idx = flat.argmax(axis=-1)
    denom = np.maximum(m, np.asarray(floor, dtype=d.dtype))
    y = flat / denom[..., None]
    out = y.reshape(d.shape)

    def bwd(g):
        gf = g.reshape(*d.shape[:-2], h * w)
        dx = gf / denom[..., None]
        # where the true max sets the denominator, its entry also shrinks
        # every normalized value: subtract sum(g*y)/denom at the argmax
        corr = np.where(m > floor, (gf * y).sum(axis=-1) / denom, 0.0)
        np.put_along_axis(dx, idx[..., None], np.take_along_axis(
            dx, idx[..., None], axis=-1) - corr[..., None], axis=-1)
        return (dx.reshape(d.shape),)

    return Tensor.from_op(out, (x,), bwd)


# -- convolution ---------------------------------------------------------------

def _conv_geometry(k: int, dilation: int, padding: Optional[int]) -> int:
    if k % 2 == 0:
        raise ConfigError(
            f"conv2d: even kernel size {k} cannot preserve the spatial size")
    if dilation < 1:
        raise ConfigError(f"conv2d: dilation must be >= 1, got {dilation}")
    need = dilation * (k - 1) // 2
    if padding is None:
        return need
    if padding != need:
        raise ConfigError(
            f"conv2d: padding {padding} does not preserve the spatial size "
            f"(need {need} for kernel {k}, dilation {dilation})")
    return padding


def conv2d(x: Tensor, w: Tensor, dilation: int = 1,
           padding: Optional[int] = None) -> Tensor:
    """Size-preserving 2-D cross-correlation with zero padding.

    ``x`` is ``(C_in, H, W)`` or ``(B, C_in, H, W)``; ``w`` is
    ``(C_out, C_in, k, k)`` with odd ``k``.  ``padding`` defaults to
    ``dilation * (k - 1) / 2`` and anything else is rejected.
    """
    xd = x.data
    wd = w.data
    if wd.ndim != 4 or wd.shape[-1] != wd.shape[-2]:
        raise DimensionError(f"conv2d: weight must be (C_out, C_in, k, k), got {wd.shape}")
    squeeze = xd.ndim == 3
    if squeeze:
        xd = xd[None]
    if xd.ndim != 4:
        raise DimensionError(f"conv2d: input must be rank 3 or 4, got {x.shape}")
    b, c, hh, ww = xd.shape
    co, ci, k, _ = wd.shape
    if ci != c:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {ci}")
    pad = _conv_geometry(k, dilation, padding)

    def im2col(src):
        xp = np.pad(src, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = np.empty((b, c, k * k, hh * ww), dtype=src.dtype)
        for t in range(k * k):
            i, j = divmod(t, k)
            ys, xs = i * dilation, j * dilation
            cols[:, :, t, :] = xp[:, :, ys:ys + hh, xs:xs + ww].reshape(
                b, c, hh * ww)
        return cols.reshape(b, c * k * k, hh * ww)

    wmat = wd.reshape(co, c * k * k)
    out = np.matmul(wmat, im2col(xd)).reshape(b, co, hh, ww)
    if squeeze:
        out = out[0]

    def bwd(g):
        # the unfolded columns are rebuilt here instead of cached: they are
        # k*k times the input size and dominate graph memory otherwise
        g4 = g[None] if squeeze else g
        gy = g4.reshape(b, co, hh * ww)
        dw = dx = None
        if w.requires_grad:
            cols2 = im2col(xd)
            gy_flat = gy.transpose(1, 0, 2).reshape(co, b * hh * ww)
            cols_flat = cols2.transpose(1, 0, 2).reshape(c * k * k, b * hh * ww)
            dw = np.matmul(gy_flat, cols_flat.T).reshape(wd.shape)
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gy).reshape(b, c, k * k, hh * ww)
            dxp = np.zeros((b, c, hh + 2 * pad, ww + 2 * pad), dtype=xd.dtype)
            for t in range(k * k):
                i, j = divmod(t, k)
                ys, xs = i * dilation, j * dilation
                dxp[:, :, ys:ys + hh, xs:xs + ww] += dcols[:, :, t].reshape(
                    b, c, hh, ww)
            dx = dxp[:, :, pad:pad + hh, pad:pad + ww] if pad else dxp
            if squeeze:
                dx = dx[0]
        return (dx, dw)

    return Tensor.from_op(out, (x, w), bwd)


# -- bilinear sampling ----------------------------------------------------------

def bilinear_sample(x: Tensor, px, py, c: int) -> Tensor:
    """Bilinearly interpolate channel ``c`` of ``x (C, H, W)`` at ``(px, py)``.

    Coordinates outside the image sample as zero.  ``px``/``py`` may be floats
    or scalar tensors; gradients flow into whichever operands are tensors.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"bilinear_sample: input must be (C, H, W), got {x.shape}")
    _, hh, ww = x.data.shape
    px_t = px if isinstance(px, Tensor) else None
    py_t = py if isinstance(py, Tensor) else None
    fx = float(px_t.data) if px_t is not None else float(px)
    fy = float(py_t.data) if py_t is not None else float(py)

    x0, y0 = int(np.floor(fx)), int(np.floor(fy))
    ax, ay = fx - x0, fy - y0
    plane = x.data[c]

    def val(yy: int, xx: int) -> float:
        if 0 <= yy < hh and 0 <= xx < ww:
            return float(plane[yy, xx])
        return 0.0

    v00, v01 = val(y0, x0), val(y0, x0 + 1)
    v10, v11 = val(y0 + 1, x0), val(y0 + 1, x0 + 1)
    wgt = ((1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax)
    out = np.asarray(wgt[0] * v00 + wgt[1] * v01 + wgt[2] * v10 + wgt[3] * v11,
                     dtype=x.data.dtype)

    parents: list[Tensor] = [x]
    if px_t is not None:
        parents.append(px_t)
    if py_t is not None:
        parents.append(py_t)

    def bwd(g):
        gs = float(g)
        grads: list[Optional[np.ndarray]] = []
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for (yy, xx), wg in zip(((y0, x0), (y0, x0 + 1), (y0 + 1, x0),
                                     (y0 + 1, x0 + 1)), wgt):
                if 0 <= yy < hh and 0 <= xx < ww:
                    dx[c, yy, xx] += gs * wg
            grads.append(dx)
        else:
            grads.append(None)
        if px_t is not None:
            dpx = (1 - ay) * (v01 - v00) + ay * (v11 - v10)
            grads.append(np.asarray(gs * dpx, dtype=x.data.dtype))
        if py_t is not None:
            dpy = (1 - ax) * (v10 - v00) + ax * (v11 - v01)
            grads.append(np.asarray(gs * dpy, dtype=x.data.dtype))
        return grads

    return Tensor.from_op(out, tuple(parents), bwd)
