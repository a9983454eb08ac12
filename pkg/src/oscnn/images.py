"""Image geometry: bilinear resize, crops, flips, mean subtraction, PPM I/O.

Images are ``float64`` arrays of shape ``(3, H, W)`` holding values in
``[0, 255]``.  Network inputs are produced by :func:`normalize`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

TEN_CROP_ORDER = ("top_left", "top_right", "bottom_left", "bottom_right", "center")


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres; aspect ratio is not preserved."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    rows = img[:, y0, :] * (1 - fy)[None, :, None] + img[:, y1, :] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx


def horizontal_flip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[..., ::-1])


def crop(img: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    return np.ascontiguousarray(img[:, top : top + size, left : left + size])


def _check_crop(img, size):
    _, h, w = img.shape
    if size > min(h, w) or size < 1:
        raise ValueError(f"crop {size} does not fit image {h}x{w}")
    return h, w


def random_crop_flip(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random ``size``x``size`` crop followed by a coin-flip mirror."""
    h, w = _check_crop(img, size)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    out = crop(img, top, left, size)
    if rng.random() < 0.5:
        out = horizontal_flip(out)
    return out


@dataclass(frozen=True)
class ViewSet:
    views: Tuple[np.ndarray, ...]
    records: Tuple[Tuple[Tuple[int, int], bool], ...]  # ((top, left), flipped)

    def __len__(self):
        return len(self.views)

    def stack(self) -> np.ndarray:
        return np.stack(self.views)


def ten_crop_offsets(h: int, w: int, size: int) -> List[Tuple[int, int]]:
    return [(0, 0), (0, w - size), (h - size, 0), (h - size, w - size),
            ((h - size) // 2, (w - size) // 2)]


def ten_crop(img: np.ndarray, size: int) -> ViewSet:
    """Four corners and the centre, then the mirror of each in the same order."""
    h, w = _check_crop(img, size)
    offsets = ten_crop_offsets(h, w, size)
    plain = [crop(img, t, l, size) for t, l in offsets]
    views = plain + [horizontal_flip(v) for v in plain]
    records = [(o, False) for o in offsets] + [(o, True) for o in offsets]
    return ViewSet(tuple(views), tuple(records))


def normalize(img: np.ndarray, channel_means, dtype=np.float32) -> np.ndarray:
    means = np.asarray(channel_means, dtype=np.float64).reshape(-1, 1, 1)
    return (np.asarray(img, dtype=np.float64) - means).astype(dtype)


def denormalize(t: np.ndarray, channel_means) -> np.ndarray:
    means = np.asarray(channel_means, dtype=np.float64).reshape(-1, 1, 1)
    return np.asarray(t, dtype=np.float64) + means


# --- binary PPM -------------------------------------------------------------

def _ppm_tokens(buf: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte ends the header


def decode_ppm(buf: bytes) -> np.ndarray:
    tokens, pos = _ppm_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise ValueError("not a binary P6 PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    data = np.frombuffer(buf, dtype=np.uint8, count=h * w * 3, offset=pos)
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64)


def encode_ppm(img: np.ndarray) -> bytes:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    _, h, w = arr.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.transpose(1, 2, 0).tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_ppm(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))
