"""Dense array kernels: convolution, max pooling, matrix product.

Tensors are plain ``numpy.ndarray`` objects in NCHW row-major layout.
Kernels preserve the dtype of their inputs, so passing ``float64`` arrays
gives the 64-bit mode used for finite-difference checks; ``float32`` is the
default everywhere else.

The raw ``OSTN`` file format is implemented at the bottom of this module.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor extents do not agree with an operation."""


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.pad < 0:
            raise ValueError(f"pad must be non-negative, got {self.pad}")
        if min(self.out_channels, self.in_channels, self.kernel_h, self.kernel_w) < 1:
            raise ValueError("channel counts and kernel extents must be positive")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.pad - self.kernel_h) // self.stride + 1
        wo = (w + 2 * self.pad - self.kernel_w) // self.stride + 1
        if h + 2 * self.pad < self.kernel_h or w + 2 * self.pad < self.kernel_w or ho < 1 or wo < 1:
            raise ShapeError(
                f"degenerate convolution output: input {h}x{w}, pad {self.pad}, "
                f"kernel {self.kernel_h}x{self.kernel_w}, stride {self.stride}"
            )
        return ho, wo


class ConvCache(NamedTuple):
    input_shape: tuple
    cols: np.ndarray  # (N*Ho*Wo, C*kh*kw)
    weights: np.ndarray
    spec: ConvSpec


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"input must be rank 4 (N,C,H,W), got rank {x.ndim}")
    if w.shape != spec.weight_shape:
        raise ShapeError(f"weights shape {w.shape} does not match spec {spec.weight_shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input channel dimension is {x.shape[1]}, weights expect {spec.in_channels}"
        )
    if b.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {b.shape}, expected ({spec.out_channels},)")


def _im2col(x: np.ndarray, spec: ConvSpec) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    ho, wo = spec.output_hw(h, w)
    p = spec.pad
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
    win = win[:, :, : (ho - 1) * spec.stride + 1 : spec.stride, : (wo - 1) * spec.stride + 1 : spec.stride]
    # (N, C, Ho, Wo, kh, kw) -> (N, Ho, Wo, C, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * spec.kernel_h * spec.kernel_w)
    return np.ascontiguousarray(cols), ho, wo


def conv2d_forward_cached(x, w, b, spec: ConvSpec) -> tuple[np.ndarray, ConvCache]:
    _check_conv(x, w, b, spec)
    cols, ho, wo = _im2col(x, spec)
    out = cols @ w.reshape(spec.out_channels, -1).T
    out += b
    out = out.reshape(x.shape[0], ho, wo, spec.out_channels).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), ConvCache(x.shape, cols, w, spec)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate ``x`` with ``w`` (zero padding) and add ``b``.

    ``out[n,o,y,x] = b[o] + sum_{c,i,j} in[n,c,y*s-pad+i, x*s-pad+j] * w[o,c,i,j]``
    """
    return conv2d_forward_cached(x, w, b, spec)[0]


def conv2d_backward(cache: ConvCache, grad_out: np.ndarray, need_input_grad: bool = True):
    """Return ``(grad_input, grad_weights, grad_bias)`` for a cached convolution.

    With ``need_input_grad=False`` the first element is ``None``.
    """
    n, c, h, w = cache.input_shape
    spec = cache.spec
    ho, wo = spec.output_hw(h, w)
    expected = (n, spec.out_channels, ho, wo)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output {expected}")

    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, spec.out_channels)
    grad_w = (g.T @ cache.cols).reshape(spec.weight_shape)
    grad_b = g.sum(axis=0)
    if not need_input_grad:
        return None, grad_w, grad_b
    kh, kw = spec.kernel_h, spec.kernel_w
    dcols = (g @ cache.weights.reshape(spec.out_channels, -1)).reshape(n, ho, wo, c, kh, kw)
    dcols = np.ascontiguousarray(dcols.transpose(4, 5, 0, 3, 1, 2))  # (kh, kw, N, C, Ho, Wo)

    p, s = spec.pad, spec.stride
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dcols[i, j]
    grad_x = dxp[:, :, p : p + h, p : p + w] if p else dxp
    return np.ascontiguousarray(grad_x), grad_w, grad_b


class PoolCache(NamedTuple):
    input_shape: tuple
    argmax: np.ndarray  # flat index into each H*W plane, shape (N, C, Ho, Wo)


def maxpool_forward(x: np.ndarray, window: int, stride: int) -> tuple[np.ndarray, PoolCache]:
    """Max pooling; ties resolve to the first element in row-major window order."""
    if x.ndim != 4:
        raise ShapeError(f"input must be rank 4 (N,C,H,W), got rank {x.ndim}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input {h}x{w}")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    flat = win.reshape(n, c, ho, wo, window * window)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    oy = (np.arange(ho) * stride)[:, None]
    ox = (np.arange(wo) * stride)[None, :]
    argmax = (oy + local // window) * w + (ox + local % window)
    return np.ascontiguousarray(out), PoolCache(x.shape, argmax)


def maxpool_backward(cache: PoolCache, grad_out: np.ndarray) -> np.ndarray:
    """Route each output gradient to its recorded argmax position."""
    n, c, h, w = cache.input_shape
    if grad_out.shape != cache.argmax.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match pool output {cache.argmax.shape}")
    idx = cache.argmax.reshape(n * c, -1)
    if idx.size and (idx.min() < 0 or idx.max() >= h * w):
        raise ValueError("corrupted pooling cache: argmax index out of range")
    plane = np.arange(n * c)[:, None] * (h * w)
    grad = np.zeros(n * c * h * w, dtype=grad_out.dtype)
    np.add.at(grad, (plane + idx).ravel(), grad_out.reshape(-1))
    return grad.reshape(n, c, h, w)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")
    return a @ b


def matmul_backward(a: np.ndarray, b: np.ndarray, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if grad_out.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(f"grad_out shape {grad_out.shape}, expected {(a.shape[0], b.shape[1])}")
    return grad_out @ b.T, a.T @ grad_out


# --- OSTN raw tensor files -------------------------------------------------

OSTN_MAGIC = b"OSTN"
OSTN_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def encode_tensor(t: np.ndarray) -> bytes:
    dtype = np.dtype(t.dtype).newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise TypeError(f"unsupported tensor dtype {t.dtype}")
    if t.ndim > 255:
        raise ShapeError("rank exceeds 255")
    head = OSTN_MAGIC + struct.pack("<BBB", OSTN_VERSION, _DTYPE_CODES[dtype], t.ndim)
    head += struct.pack(f"<{t.ndim}I", *t.shape)
    return head + np.ascontiguousarray(t, dtype=dtype).tobytes()


def read_tensor(stream: BinaryIO) -> np.ndarray:
    def take(k: int) -> bytes:
        buf = stream.read(k)
        if len(buf) != k:
            raise ValueError("truncated tensor payload")
        return buf

    if take(4) != OSTN_MAGIC:
        raise ValueError("bad tensor magic")
    version, code, rank = struct.unpack("<BBB", take(3))
    if version != OSTN_VERSION:
        raise ValueError(f"unsupported tensor version {version}")
    if code not in _CODE_DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}I", take(4 * rank))
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    data = np.frombuffer(take(count * dtype.itemsize), dtype=dtype)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def decode_tensor(buf: bytes) -> np.ndarray:
    stream = io.BytesIO(buf)
    t = read_tensor(stream)
    if stream.read(1):
        raise ValueError("trailing bytes after tensor payload")
    return t


def save_tensor(path, t: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(t))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
