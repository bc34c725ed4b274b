"""Reference 2-D convolution engine.

Three interchangeable evaluation routes for a stride-1 convolution: a
direct accumulation over kernel offsets, an im2col matrix product, and
factorized forward passes for CP and Tucker2 factor sets.  Images are
arrays of shape (channels, height, width); patches flatten in (s, h, w)
order with w fastest, matching the tensor linearization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .tensor import CpFactors, Tucker2Factors, unfold_mode

__all__ = [
    "ConvSpec",
    "im2col",
    "conv_direct",
    "cp_forward",
    "tucker2_forward",
    "cp_forward_param_count",
    "tucker2_forward_param_count",
]


@dataclass(frozen=True)
class ConvSpec:
    """Stride-1 convolution geometry: kernel dims (T,S,H,W) plus zero padding."""

    dims: tuple[int, int, int, int]
    pad_h: int = 0
    pad_w: int = 0

    def __post_init__(self):
        if len(self.dims) != 4 or any(d < 1 for d in self.dims):
            raise ValidationError(f"kernel dims must be four positive integers, got {self.dims}")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ValidationError("padding must be >= 0")

    @classmethod
    def same_padding(cls, dims) -> "ConvSpec":
        _, _, h, w = dims
        if h % 2 == 0 or w % 2 == 0:
            raise ValidationError("same padding requires odd kernel height and width")
        return cls(tuple(dims), pad_h=(h - 1) // 2, pad_w=(w - 1) // 2)

    def out_shape(self, image_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        s, hy, wx = image_shape
        t, s_k, h, w = self.dims
        if s != s_k:
            raise ValidationError(f"image has {s} channels, kernel expects {s_k}")
        hy_out = hy - h + 1 + 2 * self.pad_h
        wx_out = wx - w + 1 + 2 * self.pad_w
        if hy_out < 1 or wx_out < 1:
            raise ValidationError("kernel larger than padded image")
        return (t, hy_out, wx_out)


def _check_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValidationError(f"image must be 3-way (channels, height, width), got {x.ndim}")
    return x


def _pad(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    if spec.pad_h == 0 and spec.pad_w == 0:
        return x
    return np.pad(x, ((0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))


def im2col(x, spec: ConvSpec) -> np.ndarray:
    """Unfold image patches into the columns of a (S*H*W, H_out*W_out) matrix.

    Column j holds the flattened receptive field of output position j
    (positions run row-major, x fastest), so a convolution is exactly
    ``unfold_mode(K, 1) @ im2col(x, spec)``.
    """
    x = _check_image(x)
    spec.out_shape(x.shape)  # validates channel count and size
    _, _, h, w = spec.dims
    padded = _pad(x, spec)
    windows = sliding_window_view(padded, (h, w), axis=(1, 2))  # (S, Hy', Wx', h, w)
    patches = windows.transpose(0, 3, 4, 1, 2)  # (S, h, w, Hy', Wx')
    s = x.shape[0]
    return patches.reshape(s * h * w, -1).astype(np.float64, copy=False)


def conv_direct(k, x, spec: ConvSpec | None = None) -> np.ndarray:
    """Direct stride-1 convolution Y[t,y,x] = sum_{s,h,w} K[t,s,h,w] X[s,y+h,x+w]."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 4:
        raise ValidationError("kernel must be 4-way")
    spec = spec or ConvSpec(k.shape)
    if tuple(k.shape) != tuple(spec.dims):
        raise ValidationError(f"kernel shape {k.shape} != spec dims {spec.dims}")
    x = _check_image(x)
    t, _, h, w = spec.dims
    _, hy_out, wx_out = spec.out_shape(x.shape)
    padded = _pad(x, spec)
    out = np.zeros((t, hy_out, wx_out))
    for dh in range(h):
        for dw in range(w):
            # (t,s) x (s,y,x) contraction for this kernel offset
            out += np.tensordot(
                k[:, :, dh, dw], padded[:, dh : dh + hy_out, dw : dw + wx_out], axes=(1, 0)
            )
    return out


def cp_forward(f: CpFactors, x, spec: ConvSpec | None = None) -> np.ndarray:
    """Factorized convolution: 1x1 (u_s), depthwise Hx1 (u_h), depthwise 1xW (u_w), 1x1 (u_t)."""
    spec = spec or ConvSpec(f.dims)
    if tuple(f.dims) != tuple(spec.dims):
        raise ValidationError(f"factor dims {f.dims} != spec dims {spec.dims}")
    x = _check_image(x)
    spec.out_shape(x.shape)
    _, _, h, w = spec.dims
    z = np.tensordot(f.u_s, _pad(x, spec), axes=(0, 0))  # (R, Hy, Wx)
    hy = z.shape[1] - h + 1
    acc = np.zeros((z.shape[0], hy, z.shape[2]))
    for dh in range(h):
        acc += f.u_h[dh][:, None, None] * z[:, dh : dh + hy, :]
    wx = acc.shape[2] - w + 1
    z2 = np.zeros((acc.shape[0], hy, wx))
    for dw in range(w):
        z2 += f.u_w[dw][:, None, None] * acc[:, :, dw : dw + wx]
    return np.tensordot(f.u_t, z2, axes=(1, 0))


def tucker2_forward(f: Tucker2Factors, x, spec: ConvSpec | None = None) -> np.ndarray:
    """Factorized convolution: 1x1 (u_s), full HxW conv (core), 1x1 (u_t)."""
    spec = spec or ConvSpec(f.dims)
    if tuple(f.dims) != tuple(spec.dims):
        raise ValidationError(f"factor dims {f.dims} != spec dims {spec.dims}")
    x = _check_image(x)
    spec.out_shape(x.shape)
    z = np.tensordot(f.u_s.T, _pad(x, spec), axes=(1, 0))  # (R_S, Hy, Wx)
    core_spec = ConvSpec(f.core.shape)
    mid = conv_direct(f.core, z, core_spec)  # (R_T, Hy', Wx')
    return np.tensordot(f.u_t, mid, axes=(1, 0))


def cp_forward_param_count(dims, rank: int) -> int:
    t, s, h, w = dims
    return rank * (t + s + h + w)


def tucker2_forward_param_count(dims, ranks) -> int:
    t, s, h, w = dims
    r_t, r_s = ranks
    return t * r_t + s * r_s + r_t * r_s * h * w


def conv_via_im2col(k, x, spec: ConvSpec | None = None) -> np.ndarray:
    """Matrix-product route: fold unfold_mode(K,1) @ im2col(x) back into an image."""
    k = np.asarray(k, dtype=np.float64)
    spec = spec or ConvSpec(k.shape)
    x = _check_image(x)
    t, hy_out, wx_out = spec.out_shape(x.shape)
    flat = unfold_mode(k, 1) @ im2col(x, spec)
    return flat.reshape(t, hy_out, wx_out)
