"""sRGB <-> CIELAB (D65) conversion, grayscale and L/AB recombination.

A ``LabImage`` is an ``(H, W, 3)`` float64 array holding ``L, a, b``.
"""

from __future__ import annotations

import numpy as np

from .imagecore import ImageBuffer, as_image

LabImage = np.ndarray

# IEC 61966-2-1 linear sRGB -> XYZ
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
# D65 as implied by the primaries, so RGB white maps to exactly a = b = 0.
WHITE_D65 = SRGB_TO_XYZ.sum(axis=1)

_EPSILON = (6.0 / 29.0) ** 3
_KAPPA = (29.0 / 6.0) ** 2 / 3.0

REC601 = np.array([0.299, 0.587, 0.114])


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.asarray(c, dtype=np.float64)
    safe = np.maximum(c, 0.0031308)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * safe ** (1 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _EPSILON, np.cbrt(t), _KAPPA * t + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > 6.0 / 29.0, t**3, (t - 4.0 / 29.0) / _KAPPA)


def rgb_to_lab(img: ImageBuffer) -> LabImage:
    """Convert an 8-bit-scale sRGB image to CIELAB under D65."""
    img = as_image(img, channels=3)
    xyz = srgb_to_linear(img / 255.0) @ SRGB_TO_XYZ.T
    fx, fy, fz = np.moveaxis(_f(xyz / WHITE_D65), -1, 0)
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb(lab: LabImage, clamp: bool = True) -> ImageBuffer:
    """Inverse of :func:`rgb_to_lab`; out-of-gamut values are clamped."""
    lab = as_image(lab, channels=3)
    L, a, b = np.moveaxis(lab, -1, 0)
    fy = (L + 16.0) / 116.0
    f = np.stack([fy + a / 500.0, fy, fy - b / 200.0], axis=-1)
    xyz = _f_inv(f) * WHITE_D65
    lin = xyz @ XYZ_TO_SRGB.T
    if clamp:
        lin = np.clip(lin, 0.0, 1.0)
    rgb = linear_to_srgb(lin) * 255.0
    return np.clip(rgb, 0.0, 255.0) if clamp else rgb


def merge_l_ab(style_src: LabImage, color_src: LabImage) -> LabImage:
    """Lightness from ``style_src``, chroma channels from ``color_src``."""
    style_src = as_image(style_src, channels=3)
    color_src = as_image(color_src, channels=3)
    if style_src.shape != color_src.shape:
        raise ValueError(
            f"cannot merge {style_src.shape[:2]} lightness with {color_src.shape[:2]} chroma"
        )
    out = color_src.copy()
    out[:, :, 0] = style_src[:, :, 0]
    return out


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """Rec. 601 luma as a 1-channel image."""
    img = as_image(img, channels=3)
    return (img @ REC601)[:, :, None]


def lightness_gray(img: ImageBuffer) -> ImageBuffer:
    """The neutral gray with the same CIELAB lightness, as a 1-channel image.

    Alternative to :func:`to_grayscale` when the gray rendition must keep
    the L channel exactly instead of approximating it by luma.
    """
    lab = rgb_to_lab(img)
    lab[:, :, 1:] = 0.0
    return lab_to_rgb(lab)[:, :, :1]


def gray_to_rgb(gray: ImageBuffer) -> ImageBuffer:
    gray = as_image(gray, channels=1)
    return np.repeat(gray, 3, axis=2)


def luminance(colors) -> np.ndarray:
    """Rec. 601 luma of an ``(..., 3)`` array of colors."""
    return np.asarray(colors, dtype=np.float64) @ REC601


def delta_e76(lab1, lab2) -> np.ndarray:
    """CIE76 color difference between broadcastable ``(..., 3)`` Lab arrays."""
    d = np.asarray(lab1, dtype=np.float64) - np.asarray(lab2, dtype=np.float64)
    return np.sqrt(np.sum(d * d, axis=-1))


def colors_to_lab(colors) -> np.ndarray:
    """Lab values for an ``(n, 3)`` list of sRGB colors."""
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 1, 3)
    return rgb_to_lab(colors).reshape(-1, 3)
