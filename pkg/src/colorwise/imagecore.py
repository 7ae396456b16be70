"""Image containers and lossless file I/O.

Images are plain ``float64`` numpy arrays of shape ``(H, W, C)`` with
``C`` in ``{1, 3}``; masks are ``bool`` arrays of shape ``(H, W)``.
Values of 8-bit origin live in ``[0, 255]``. Quantization to bytes only
happens in :func:`save_image`.
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np
from PIL import Image

# Both aliases are documentation only.
ImageBuffer = np.ndarray
BinaryMask = np.ndarray

MAX_PIXELS = 1 << 28

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageIOError(Exception):
    """Base class for image read/write failures."""


class ImageReadError(ImageIOError):
    """The file is missing or cannot be decoded."""


class UnsupportedFormatError(ImageIOError):
    """The file is readable but not a supported format/variant."""


class DimensionOverflowError(ImageIOError):
    """Declared image dimensions are out of the supported range."""


class ImageWriteError(ImageIOError):
    """The destination could not be written."""


def as_image(data, channels: int | None = None) -> ImageBuffer:
    """Coerce ``data`` into an ``(H, W, C)`` float64 image buffer."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W, 1|3) image, got shape {img.shape}")
    if channels is not None and img.shape[2] != channels:
        raise ValueError(f"expected {channels} channels, got {img.shape[2]}")
    return img


def quantize(img: ImageBuffer) -> np.ndarray:
    """Round half away from zero, clamp to [0, 255] and return ``uint8``."""
    x = np.asarray(img, dtype=np.float64)
    rounded = np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))
    return np.clip(rounded, 0, 255).astype(np.uint8)


def _check_dims(width: int, height: int) -> None:
    if width <= 0 or height <= 0:
        raise DimensionOverflowError(f"invalid dimensions {width}x{height}")
    if width * height > MAX_PIXELS:
        raise DimensionOverflowError(
            f"{width}x{height} exceeds the {MAX_PIXELS} pixel limit"
        )


def _read_netpbm(raw: bytes, path: Path) -> ImageBuffer:
    magic = raw[:2]
    channels = 3 if magic == b"P6" else 1
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(raw):
            raise ImageReadError(f"{path}: truncated header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            fields.append(raw[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    pos += 1
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageReadError(f"{path}: malformed header") from exc
    _check_dims(width, height)
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} (only 255 supported)")
    n = width * height * channels
    body = raw[pos : pos + n]
    if len(body) < n:
        raise ImageReadError(f"{path}: expected {n} raster bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    return data.astype(np.float64)


def _read_png(raw: bytes, path: Path) -> ImageBuffer:
    try:
        with Image.open(io.BytesIO(raw)) as im:
            width, height = im.size
            _check_dims(width, height)
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            if mode == "1":
                im = im.convert("L")
                mode = "L"
            if mode not in ("L", "RGB"):
                raise UnsupportedFormatError(
                    f"{path}: PNG mode {mode!r} (only Gray8 and RGB8 supported)"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except (UnsupportedFormatError, DimensionOverflowError):
        raise
    except Image.DecompressionBombError as exc:
        raise DimensionOverflowError(f"{path}: {exc}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageReadError(f"{path}: {exc}") from exc
    return as_image(arr)


def load_image(path) -> ImageBuffer:
    """Load a PNG, binary PPM (P6) or binary PGM (P5) file.

    Returns a float64 buffer with values in ``[0, 255]``: 3 channels for
    color sources, 1 for grayscale.

    Raises:
        ImageReadError: the file cannot be read or is truncated.
        UnsupportedFormatError: not PNG/P5/P6, or an unsupported variant.
        DimensionOverflowError: dimensions are zero or too large.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageReadError(f"{path}: {exc.strerror or exc}") from exc
    if raw.startswith(PNG_SIGNATURE):
        return _read_png(raw, path)
    if raw[:2] in (b"P5", b"P6"):
        return _read_netpbm(raw, path)
    raise UnsupportedFormatError(f"{path}: not a PNG, P5 PGM or P6 PPM file")


def save_image(img: ImageBuffer, path) -> None:
    """Write ``img`` to ``path``.

    ``.ppm``/``.pgm``/``.pnm`` extensions produce binary netpbm, anything
    else PNG. Values are rounded half away from zero and clamped to
    ``[0, 255]``.
    """
    img = as_image(img)
    path = Path(path)
    data = quantize(img)
    height, width, channels = data.shape
    ext = path.suffix.lower()
    try:
        if ext in (".ppm", ".pgm", ".pnm"):
            if ext == ".ppm" and channels != 3:
                raise ValueError("PPM output needs a 3-channel image")
            if ext == ".pgm" and channels != 1:
                raise ValueError("PGM output needs a 1-channel image")
            magic = b"P6" if channels == 3 else b"P5"
            header = magic + b"\n%d %d\n255\n" % (width, height)
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(data.tobytes())
        else:
            mode = "RGB" if channels == 3 else "L"
            pil = Image.fromarray(data[:, :, 0] if channels == 1 else data, mode=mode)
            pil.save(path, format="PNG")
    except OSError as exc:
        raise ImageWriteError(f"{path}: {exc.strerror or exc}") from exc


def load_mask(path, threshold: float = 127.5) -> BinaryMask:
    """Load a mask image; pixels brighter than ``threshold`` are inside."""
    img = load_image(path)
    return img.mean(axis=2) > threshold


def save_mask(mask: BinaryMask, path) -> None:
    save_image(np.asarray(mask, dtype=np.float64)[:, :, None] * 255.0, path)


def check_mask(img: ImageBuffer, mask: BinaryMask) -> BinaryMask:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    return mask


def apply_mask(img: ImageBuffer, mask: BinaryMask) -> ImageBuffer:
    """Return a copy of ``img`` with pixels outside ``mask`` set to zero."""
    img = as_image(img)
    mask = check_mask(img, mask)
    out = img.copy()
    out[~mask] = 0.0
    return out


def resize_bilinear(img: ImageBuffer, height: int, width: int) -> ImageBuffer:
    """Bilinear resize with half-pixel centers and edge clamping."""
    img = as_image(img)
    h0, w0, _ = img.shape
    if (h0, w0) == (height, width):
        return img.copy()

    def coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0, n_in - 1)
        lo = np.floor(c).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    y0, y1, fy = coords(height, h0)
    x0, x1, fx = coords(width, w0)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_mask(mask: BinaryMask, height: int, width: int) -> BinaryMask:
    resized = resize_bilinear(np.asarray(mask, dtype=np.float64), height, width)
    return resized[:, :, 0] >= 0.5


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
