"""Binary PPM (P6) / PGM (P5) reading and writing, maxval 255.

Images round-trip within 1/255 per channel (8-bit quantization); binary
masks round-trip exactly.  Parse failures raise DataParseError carrying the
byte offset of the problem.
"""

from __future__ import annotations

import os
from typing import Tuple

import numpy as np

from .errors import ContractError, DataParseError

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _quantize(values: np.ndarray) -> np.ndarray:
    if np.any((values < 0) | (values > 1)):
        raise ContractError("pixel values must lie in [0, 1] before saving")
    return np.round(values * 255.0).astype(np.uint8)


def save_ppm(path: str, image: np.ndarray) -> None:
    """Save a [3, H, W] float image in [0, 1] as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError(f"save_ppm needs [3, H, W], got {image.shape}")
    _, h, w = image.shape
    payload = _quantize(image).transpose(1, 2, 0)  # interleave to [H, W, 3]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(payload).tobytes())


def save_pgm(path: str, mask: np.ndarray) -> None:
    """Save a binary [H, W] mask (values {0, 1}) as P5 with values {0, 255}."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ContractError(f"save_pgm needs [H, W], got {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ContractError("mask must be binary {0, 1}")
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write((mask.astype(np.uint8) * 255).tobytes())


class _Scanner:
    """Header tokenizer tracking byte offsets; supports '#' comments."""

    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def fail(self, msg: str):
        raise DataParseError(f"{self.path}: {msg} at byte offset {self.pos}")

    def skip_space(self):
        while self.pos < len(self.buf):
            c = self.buf[self.pos:self.pos + 1]
            if c in (b"#",):
                while self.pos < len(self.buf) and self.buf[self.pos:self.pos + 1] != b"\n":
                    self.pos += 1
            elif c in _WHITESPACE:
                self.pos += 1
            else:
                return

    def read_int(self) -> int:
        self.skip_space()
        start = self.pos
        while self.pos < len(self.buf) and self.buf[self.pos:self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            self.fail("expected an ASCII integer")
        return int(self.buf[start:self.pos])


def _load_raw(path: str, magic: bytes, channels: int) -> Tuple[np.ndarray, int, int]:
    with open(path, "rb") as f:
        buf = f.read()
    sc = _Scanner(buf, os.fspath(path))
    if not buf.startswith(magic):
        sc.fail(f"expected magic {magic.decode()!r}")
    sc.pos = len(magic)
    w = sc.read_int()
    h = sc.read_int()
    maxval = sc.read_int()
    if maxval != 255:
        sc.pos -= len(str(maxval))
        sc.fail(f"unsupported maxval {maxval} (only 255)")
    if sc.pos >= len(buf) or buf[sc.pos:sc.pos + 1] not in _WHITESPACE:
        sc.fail("expected single whitespace byte after maxval")
    sc.pos += 1
    expected = w * h * channels
    payload = buf[sc.pos:]
    if len(payload) < expected:
        sc.pos = len(buf)
        sc.fail(f"payload truncated: need {expected} bytes, have {len(payload)}")
    if len(payload) > expected:
        sc.pos += expected
        sc.fail(f"trailing bytes after payload: expected exactly {expected}")
    data = np.frombuffer(payload, dtype=np.uint8)
    return data, w, h


def load_ppm(path: str) -> np.ndarray:
    """Load a binary P6 file to a [3, H, W] float32 image in [0, 1]."""
    data, w, h = _load_raw(path, b"P6", 3)
    img = data.reshape(h, w, 3).transpose(2, 0, 1)
    return (img.astype(np.float32) / 255.0)


def load_pgm(path: str) -> np.ndarray:
    """Load a binary P5 file to raw [H, W] uint8 gray levels."""
    data, w, h = _load_raw(path, b"P5", 1)
    return data.reshape(h, w).copy()


def load_mask(path: str) -> np.ndarray:
    """Load a P5 mask to binary {0, 1} (any nonzero level counts as 1)."""
    return (load_pgm(path) != 0).astype(np.uint8)
