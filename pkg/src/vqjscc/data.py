"""Binary PPM/PGM reading, random patch cropping and a synthetic image source."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

log = logging.getLogger(__name__)

_WHITESPACE = b" \t\n\r\v\f"


def _header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos : pos + 1] not in _WHITESPACE and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", start)
    return buf[start:pos], pos


def _header_int(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, end = _header_token(buf, pos)
    start = end - len(tok)
    if not tok.isdigit():
        raise ParseError(f"expected {what}, found {tok[:16]!r}", start)
    value = int(tok)
    if value < 1:
        raise ParseError(f"{what} must be positive, got {value}", start)
    return value, end


def parse_pnm(buf: bytes) -> np.ndarray:
    """Decode an 8-bit binary P5 (gray) or P6 (RGB) image to (C, H, W) in [0, 1]."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}, expected P5 or P6", 0)
    channels = 1 if magic == b"P5" else 3
    pos = 2
    if pos >= len(buf) or buf[pos : pos + 1] not in _WHITESPACE:
        raise ParseError("missing whitespace after magic number", pos)
    width, pos = _header_int(buf, pos, "width")
    height, pos = _header_int(buf, pos, "height")
    maxval, pos = _header_int(buf, pos, "maxval")
    if maxval > 255:
        raise ParseError(f"only 8-bit images are supported, maxval={maxval}", pos)
    if pos >= len(buf) or buf[pos : pos + 1] not in _WHITESPACE:
        raise ParseError("missing whitespace before pixel data", pos)
    pos += 1
    need = width * height * channels
    if len(buf) - pos < need:
        raise ParseError(f"pixel data truncated: need {need} bytes, have {len(buf) - pos}", len(buf))
    px = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    img = px.reshape(height, width, channels).transpose(2, 0, 1)
    return img.astype(np.float64) / maxval


def read_pnm(path) -> np.ndarray:
    return parse_pnm(Path(path).read_bytes())


def write_pnm(path, img: np.ndarray) -> None:
    """Write a (C, H, W) image in [0, 1] as 8-bit P5/P6."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ConfigError(f"expected a (1|3, H, W) image, got shape {img.shape}")
    c, h, w = img.shape
    px = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    head = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(head + px.tobytes())


def match_channels(img: np.ndarray, C: int) -> np.ndarray:
    if img.shape[0] == C:
        return img
    if img.shape[0] == 1 and C == 3:
        return np.repeat(img, 3, axis=0)
    if img.shape[0] == 3 and C == 1:
        return img.mean(axis=0, keepdims=True)
    raise ConfigError(f"cannot convert {img.shape[0]} channels to {C}")


def crop_origin(h: int, w: int, patch: int, rng: np.random.Generator) -> tuple[int, int]:
    if patch > h or patch > w:
        raise ConfigError(f"patch {patch} larger than image {h}x{w}")
    return int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1))


def random_crop(img: np.ndarray, patch: int, rng: np.random.Generator) -> np.ndarray:
    top, left = crop_origin(img.shape[1], img.shape[2], patch, rng)
    return img[:, top : top + patch, left : left + patch]


def list_images(path) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise ConfigError(f"dataset path does not exist: {path}")
    return sorted(q for q in p.iterdir() if q.suffix.lower() in (".ppm", ".pgm", ".pnm"))


def ingest_dataset(path, patch: int, rng: np.random.Generator, channels: int = 3, crops_per_image: int = 1) -> np.ndarray:
    """Random ``patch`` x ``patch`` crops from every image under ``path``.

    Images smaller than the patch are skipped with a warning.
    """
    if patch < 4 or patch % 4:
        raise ConfigError(f"patch size must be a positive multiple of 4, got {patch}")
    out = []
    for f in list_images(path):
        img = match_channels(read_pnm(f), channels)
        if patch > img.shape[1] or patch > img.shape[2]:
            log.warning("skipping %s: %dx%d smaller than patch %d", os.fspath(f), img.shape[1], img.shape[2], patch)
            continue
        out.extend(random_crop(img, patch, rng) for _ in range(crops_per_image))
    if not out:
        raise ConfigError(f"no usable images under {path}")
    return np.stack(out)


# ---------------------------------------------------------------------------
# synthetic images
# ---------------------------------------------------------------------------

SYNTHETIC_KINDS = ("gradient", "checkerboard", "blobs")


def _gradient(C, H, W, rng):
    yy, xx = np.mgrid[0:H, 0:W] / np.array([max(H - 1, 1), max(W - 1, 1)])[:, None, None]
    out = np.empty((C, H, W))
    for c in range(C):
        a, b = rng.uniform(-1, 1, size=2)
        g = a * xx + b * yy
        g -= g.min()
        span = g.max()
        out[c] = g / span if span > 0 else rng.uniform()
    return out


def _checkerboard(C, H, W, rng):
    cell = int(rng.integers(2, max(3, min(H, W) // 2) + 1))
    yy, xx = np.mgrid[0:H, 0:W]
    mask = ((yy // cell + xx // cell) % 2).astype(float)
    lo, hi = rng.uniform(0, 1, size=(2, C))
    return lo[:, None, None] + (hi - lo)[:, None, None] * mask[None]


def _blobs(C, H, W, rng):
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    out = np.tile(rng.uniform(0, 0.3, size=(C, 1, 1)), (1, H, W))
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        s = rng.uniform(1.5, max(2.0, min(H, W) / 3))
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        out += rng.uniform(0.2, 0.8, size=(C, 1, 1)) * bump[None]
    return np.clip(out, 0.0, 1.0)


_GENERATORS = {"gradient": _gradient, "checkerboard": _checkerboard, "blobs": _blobs}


def synthetic_images(n: int, C: int, H: int, W: int, rng: np.random.Generator, kinds=SYNTHETIC_KINDS) -> np.ndarray:
    """``n`` images in [0, 1], cycling through ``kinds``."""
    kinds = tuple(kinds)
    for k in kinds:
        if k not in _GENERATORS:
            raise ConfigError(f"unknown synthetic kind {k!r}; choose from {SYNTHETIC_KINDS}")
    return np.stack([_GENERATORS[kinds[i % len(kinds)]](C, H, W, rng) for i in range(n)])
