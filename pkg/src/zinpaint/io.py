"""Image and mask files, plus synthetic text masks.

PNG (and anything else Pillow reads) goes through Pillow.  Binary netpbm
files (``.pgm``, ``.ppm``, ``.pnm``) are handled by a small built-in codec so
the core stays usable without an image library.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .image_core import MaskImage, RasterImage

_NETPBM = {".pgm", ".ppm", ".pnm"}


# --- netpbm -------------------------------------------------------------------

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_netpbm(path) -> np.ndarray:
    """Decode binary P5 (gray) or P6 (RGB) with maxval <= 255."""
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ValueError(f"{path}: truncated netpbm header")
        fields.append(m.group(1))
        pos = m.end()
    magic, width, height, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: only binary P5/P6 netpbm is supported")
    if not 0 < maxval <= 255:
        raise ValueError(f"{path}: only 8-bit netpbm is supported")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    size = width * height * channels
    pixels = np.frombuffer(data[pos:pos + size], dtype=np.uint8)
    if pixels.size != size:
        raise ValueError(f"{path}: truncated pixel data")
    pixels = pixels.reshape(height, width, channels)
    if maxval != 255:
        pixels = np.round(pixels.astype(np.float64) * 255 / maxval).astype(np.uint8)
    return pixels if channels == 3 else pixels[:, :, 0]


def write_netpbm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    magic = b"P5" if pixels.ndim == 2 else b"P6"
    h, w = pixels.shape[:2]
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels).tobytes())


# --- generic ------------------------------------------------------------------

def _read_pixels(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in _NETPBM:
        return read_netpbm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            # alpha is dropped; palette and 16-bit modes become 8-bit RGB
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.uint8).copy()


def _write_pixels(path, pixels: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() in _NETPBM:
        write_netpbm(path, pixels)
        return
    from PIL import Image

    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    Image.fromarray(pixels).save(path)


def read_image(path) -> RasterImage:
    return RasterImage(_read_pixels(path))


def write_image(path, image: RasterImage) -> None:
    _write_pixels(path, image.data)


def read_mask(path) -> MaskImage:
    """Single-channel mask: values >= 128 are KNOWN, lower values UNKNOWN."""
    pixels = _read_pixels(path)
    if pixels.ndim == 3:
        pixels = pixels.mean(axis=2)
    return MaskImage(pixels >= 128)


def write_mask(path, mask: MaskImage) -> None:
    _write_pixels(path, mask.to_gray())


# --- text masks ---------------------------------------------------------------

_TEXT = ("the quick brown fox jumps over the lazy dog while a painter fills "
         "every missing pixel from patches found elsewhere in the picture ")


def text_mask(height: int, width: int, coverage: float = 0.2, tolerance: float = 0.001,
              font_size: int | None = None, text: str = _TEXT) -> MaskImage:
    """Mask whose UNKNOWN pixels are rendered text covering ``coverage`` of the image.

    Characters are drawn line by line until the covered fraction reaches the
    target.  When a full page of text is not enough the glyph strokes are
    thickened and the page is redrawn.  The last few pixels are adjusted along
    the glyph borders so the result lands within ``coverage +- tolerance``.
    Deterministic.
    """
    from PIL import Image, ImageDraw, ImageFont

    if not 0 < coverage < 1:
        raise ValueError("coverage must lie in (0, 1)")
    if not text.strip():
        raise ValueError("text must contain visible characters")
    total = height * width
    target = coverage * total
    if font_size is None:
        font_size = max(8, int(round(min(height, width) / 14)))
    font = ImageFont.load_default(size=font_size)
    ascent, descent = font.getmetrics()
    margin = max(2, font_size // 3)
    for stroke in range(0, font_size):
        line_h = int((ascent + descent) * 1.25) + 2 * stroke
        canvas = Image.new("L", (width, height), 0)
        draw = ImageDraw.Draw(canvas)
        x, y, i = margin, margin, 0
        covered = 0
        while covered < target - tolerance * total:
            ch = text[i % len(text)]
            i += 1
            adv = font.getlength(ch) + stroke
            if x + adv > width - margin:
                x = margin
                y += line_h
                if y + line_h > height:
                    break
            draw.text((x, y), ch, fill=255, font=font, stroke_width=stroke, stroke_fill=255)
            x += adv
            if ch != " ":
                covered = int(np.count_nonzero(np.asarray(canvas)))
        if covered >= target - tolerance * total:
            break
    ink = np.asarray(canvas) > 0
    ink = _fit_coverage(ink, int(round(target)), int(tolerance * total))
    return MaskImage(~ink)


def _fit_coverage(ink: np.ndarray, target: int, slack: int) -> np.ndarray:
    ink = ink.copy()
    count = int(ink.sum())
    if count > target + slack:
        # peel border pixels of the glyphs, last rows first
        edge = ink & ~_eroded(ink)
        idx = np.flatnonzero(edge.ravel())[::-1][: count - target]
        ink.ravel()[idx] = False
    elif count < target - slack:
        grow = _dilated(ink) & ~ink
        idx = np.flatnonzero(grow.ravel())[: target - count]
        ink.ravel()[idx] = True
    return ink


def _eroded(b: np.ndarray) -> np.ndarray:
    out = b.copy()
    out[1:] &= b[:-1]
    out[:-1] &= b[1:]
    out[:, 1:] &= b[:, :-1]
    out[:, :-1] &= b[:, 1:]
    return out


def _dilated(b: np.ndarray) -> np.ndarray:
    out = b.copy()
    out[1:] |= b[:-1]
    out[:-1] |= b[1:]
    out[:, 1:] |= b[:, :-1]
    out[:, :-1] |= b[:, 1:]
    return out
