import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def three_blocks(h=12, w=18):
    """Solid red / green / blue vertical bands."""
    img = np.zeros((h, w, 3))
    band = w // 3
    img[:, :band] = (255, 0, 0)
    img[:, band : 2 * band] = (0, 255, 0)
    img[:, 2 * band :] = (0, 0, 255)
    return img


@pytest.fixture
def blocks():
    return three_blocks()


def gray_texture(h=32, w=32):
    """Gray image with stripes and a disc; levels 55, 90 and 200."""
    y, x = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    g = np.where(np.sin(2 * np.pi * 3 * x) >= 0, 200.0, 90.0)
    g = np.where((x - 0.5) ** 2 + (y - 0.5) ** 2 < 0.09, 55.0, g)
    return np.repeat(g[:, :, None], 3, axis=2).astype(np.float64)


def solid(color, h=32, w=32):
    img = np.zeros((h, w, 3))
    img[...] = color
    return img


def two_tone(h=32, w=32, top=(180, 95, 80), bottom=(80, 115, 165), split=20):
    """Muted red over muted blue; both stay in gamut over a wide L range."""
    img = solid(bottom, h, w)
    img[:split] = top
    return img


def shaded_two_tone(h=32, w=32):
    """:func:`two_tone` with a left-to-right brightness ramp."""
    ramp = 40.0 * ((np.arange(w) + 0.5) / w - 0.5)
    return two_tone(h, w) + ramp[None, :, None]


def diagonal_stripes(h=32, w=32, levels=(60.0, 190.0), period=8):
    yy, xx = np.mgrid[0:h, 0:w]
    g = np.where((yy + xx) % period < period // 2, *levels)
    return np.repeat(g[:, :, None], 3, axis=2)


def photo_like(h=40, w=40, seed=0):
    """Three noisy color regions with smooth shading, a stand-in for a photo."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    img = np.empty((h, w, 3))
    sky = yy < 0.45
    grass = (yy >= 0.45) & (xx < 0.7)
    img[sky] = (90, 140, 220)
    img[grass] = (70, 150, 60)
    img[~sky & ~grass] = (200, 120, 50)
    img += 12 * (xx[..., None] - 0.5) + r.normal(0, 5, img.shape)
    return np.clip(img, 0, 255)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
