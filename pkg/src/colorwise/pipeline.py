"""Two-branch color/style jobs, LAB merge and palette metrics.

Diffusion modes run on a small toy latent: the content image (or a
synthetic ``toy:WxH`` target) is downsampled so its longest side is
``Config.latent_size`` and used as a 3-channel latent in ``[-1, 1]``, which
makes every clean estimate its own decoded image.
"""

from __future__ import annotations

import re
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    correspond_by_proportion,
    kmeans_colors,
    lloyd,
    masks_from_clusters,
)
from .colorspace import (
    colors_to_lab,
    delta_e76,
    gray_to_rgb,
    lab_to_rgb,
    lightness_gray,
    luminance,
    merge_l_ab,
    rgb_to_lab,
    to_grayscale,
)
from .config import Config
from .diffusion import (
    AnchoredDenoiser,
    ColorContext,
    InterventionSchedule,
    StyleContext,
    ToyAttention,
    decode_latent,
    ddim_invert,
    encode_image,
    forward_mix,
    make_schedule,
    run_conditioned_denoise,
)
from .imagecore import as_image, load_image, resize_bilinear, resize_mask
from .recolor import masked_recolor

MODES = ("color-only", "style-only", "color+style", "lab-swap", "recolor-image")

_TOY_RE = re.compile(r"^toy:(\d+)x(\d+)$")


class JobError(ValueError):
    """A job is missing inputs required by its mode."""


@dataclass
class TransferJob:
    mode: str
    content: object = "toy:32x32"  # path, ``toy:WxH`` or an image array
    color_ref: object = None
    style_ref: object = None
    config: Config = field(default_factory=Config)
    content_mask: np.ndarray | None = None
    ref_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise JobError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        needs_color = self.mode in ("color-only", "color+style", "lab-swap", "recolor-image")
        needs_style = self.mode in ("style-only", "color+style", "lab-swap")
        if needs_color and self.color_ref is None:
            raise JobError(f"mode {self.mode} needs a color reference")
        if needs_style and self.style_ref is None:
            raise JobError(f"mode {self.mode} needs a style reference")


# ---------------------------------------------------------------------------
# inputs


def toy_target(width: int, height: int) -> np.ndarray:
    """Synthetic gray content: a dark disc with stripes on a lighter field."""
    y, x = np.meshgrid(
        (np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width, indexing="ij"
    )
    img = np.full((height, width), 170.0)
    disc = (x - 0.5) ** 2 + (y - 0.5) ** 2 < 0.3**2
    img[disc] = 80.0
    stripes = np.sin(2 * np.pi * 4 * (x + y)) > 0.3
    img[stripes & ~disc] = 210.0
    img[stripes & disc] = 110.0
    return gray_to_rgb(img[:, :, None])


def _as_rgb(img) -> np.ndarray:
    img = as_image(img)
    return gray_to_rgb(img) if img.shape[2] == 1 else img


def _source(src) -> np.ndarray:
    if isinstance(src, np.ndarray):
        return _as_rgb(src)
    return _as_rgb(load_image(src))


def latent_shape(height: int, width: int, max_side: int) -> tuple[int, int]:
    scale = min(1.0, max_side / max(height, width))
    return max(1, round(height * scale)), max(1, round(width * scale))


def content_image(job: TransferJob) -> np.ndarray:
    """Content target at latent resolution, ``(h, w, 3)`` in [0, 255]."""
    src = job.content
    if isinstance(src, str):
        m = _TOY_RE.match(src)
        if m:
            w, h = int(m.group(1)), int(m.group(2))
            if w < 1 or h < 1:
                raise JobError(f"bad toy size {src!r}")
            src = toy_target(w, h)
    img = _source(src)
    h, w = latent_shape(img.shape[0], img.shape[1], job.config.latent_size)
    return resize_bilinear(img, h, w)


def _reference(src, shape: tuple[int, int]) -> np.ndarray:
    return resize_bilinear(_source(src), *shape)


def _mask_at(mask, shape):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    return mask if mask.shape == shape else resize_mask(mask, *shape)


def _noise(cfg: Config, n: int, stream: int) -> np.ndarray:
    return np.random.default_rng([cfg.seed_latent, stream]).standard_normal((n, 3))


# ---------------------------------------------------------------------------
# branches


@dataclass
class BranchRun:
    """The pieces shared by a branch's reference and generation runs."""

    shape: tuple[int, int]
    target: np.ndarray
    cfg: Config

    def __post_init__(self):
        cfg = self.cfg
        self.sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
        self.n = self.shape[0] * self.shape[1]

    def decode(self, z: np.ndarray) -> np.ndarray:
        return decode_latent(z, self.shape)

    def generation_noise(self, branch: str) -> np.ndarray:
        stream = 1 if (branch == "style" and not self.cfg.share_latent) else 0
        return _noise(self.cfg, self.n, stream)

    def initial_latent(self, noise: np.ndarray) -> np.ndarray:
        return forward_mix(encode_image(self.target), noise, self.sched, self.sched.T)

    def isched(self, color: bool, style: bool) -> InterventionSchedule:
        c = self.cfg
        return InterventionSchedule(
            c.color_window_start, c.color_window_end, c.style_window_start, color, style
        )

    def reference_trajectory(self, ref_img: np.ndarray, attention: ToyAttention | None = None):
        """Invert ``ref_img`` and re-sample it, recording clean estimates per step."""
        den = AnchoredDenoiser(_noise(self.cfg, self.n, 2), self.sched, attention)
        z_T = ddim_invert(encode_image(ref_img), den, self.sched)
        z0s: dict[int, np.ndarray] = {}
        trace: dict = {}
        run_conditioned_denoise(
            z_T,
            den,
            self.sched,
            self.isched(False, False),
            on_step=lambda t, z0: z0s.__setitem__(t, z0.copy()),
            trace=trace if attention is not None else None,
        )
        return z0s, trace.get("features", {})


def _branch(job: TransferJob) -> BranchRun:
    target = content_image(job)
    return BranchRun(shape=target.shape[:2], target=target, cfg=job.config)


def _finish(run: BranchRun, z: np.ndarray) -> np.ndarray:
    return np.clip(run.decode(z), 0.0, 255.0)


def run_unconditioned(job: TransferJob, branch: str = "color") -> np.ndarray:
    """Baseline generation: the same initial latent with no interventions."""
    run = _branch(job)
    noise = run.generation_noise(branch)
    den = AnchoredDenoiser(noise, run.sched)
    z = run_conditioned_denoise(run.initial_latent(noise), den, run.sched, run.isched(False, False))
    return _finish(run, z)


def run_color_branch(job: TransferJob, on_step: Callable | None = None) -> np.ndarray:
    """Generate the content with masked latent recoloring from ``color_ref``."""
    if job.color_ref is None:
        raise JobError("color branch needs a color reference")
    run = _branch(job)
    cfg = run.cfg
    ref = _reference(job.color_ref, run.shape)
    ref_z0, _ = run.reference_trajectory(ref)
    ctx = ColorContext(
        ref_z0=ref_z0,
        decode=run.decode,
        k=cfg.k,
        seed=cfg.seed_kmeans,
        eps=cfg.eps,
        stride=cfg.cluster_stride,
        space=cfg.kmeans_space,
        gen_mask=_mask_at(job.content_mask, run.shape),
        ref_mask=_mask_at(job.ref_mask, run.shape),
    )
    noise = run.generation_noise("color")
    den = AnchoredDenoiser(noise, run.sched)
    step = None if on_step is None else (lambda t, z0: on_step(t, run.decode(z0)))
    z = run_conditioned_denoise(
        run.initial_latent(noise), den, run.sched, run.isched(True, False), color_ctx=ctx, on_step=step
    )
    return _finish(run, z)


def style_gray(img: np.ndarray, luma: str = "grayscale") -> np.ndarray:
    """3-channel gray rendition of a style reference."""
    img = _as_rgb(img)
    g = to_grayscale(img) if luma == "grayscale" else lightness_gray(img)
    return gray_to_rgb(g)


def run_style_branch(
    job: TransferJob, on_step: Callable | None = None, trace: dict | None = None
) -> np.ndarray:
    """Generate the content with attention KV injection from the gray ``style_ref``."""
    if job.style_ref is None:
        raise JobError("style branch needs a style reference")
    run = _branch(job)
    cfg = run.cfg
    attn = ToyAttention(run.shape, sharpness=cfg.attn_sharpness, strength=cfg.attn_strength)
    ref = style_gray(_reference(job.style_ref, run.shape), cfg.style_luma)
    _, ref_feats = run.reference_trajectory(ref, attn)
    noise = run.generation_noise("style")
    den = AnchoredDenoiser(noise, run.sched, attn)
    step = None if on_step is None else (lambda t, z0: on_step(t, run.decode(z0)))
    z = run_conditioned_denoise(
        run.initial_latent(noise),
        den,
        run.sched,
        run.isched(False, True),
        style_ctx=StyleContext(ref_feats),
        on_step=step,
        trace=trace,
    )
    return _finish(run, z)


@dataclass
class FullResult:
    color: np.ndarray
    style: np.ndarray
    lab: np.ndarray  # merged, before the gamut clamp
    image: np.ndarray


def merge_branches(style_out: np.ndarray, color_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lab = merge_l_ab(rgb_to_lab(style_out), rgb_to_lab(color_out))
    return lab, lab_to_rgb(lab)


def run_full_detailed(
    job: TransferJob, on_color_step: Callable | None = None, on_style_step: Callable | None = None
) -> FullResult:
    color = run_color_branch(job, on_color_step)
    style = run_style_branch(job, on_style_step)
    lab, image = merge_branches(style, color)
    return FullResult(color=color, style=style, lab=lab, image=image)


def run_full(job: TransferJob) -> np.ndarray:
    """Lightness of the style branch merged with chroma of the color branch."""
    return run_full_detailed(job).image


def lab_swap(style_img, color_img) -> np.ndarray:
    """L channel of ``style_img`` with the a/b channels of ``color_img``.

    ``color_img`` is bilinearly resized to ``style_img``'s size if needed.
    """
    style = _source(style_img)
    color = resize_bilinear(_source(color_img), *style.shape[:2])
    return lab_to_rgb(merge_l_ab(rgb_to_lab(style), rgb_to_lab(color)))


def recolor_image(
    content,
    ref,
    k: int = 3,
    seed: int = 0,
    eps: float = 1e-5,
    content_mask=None,
    ref_mask=None,
    space: str = "rgb",
) -> np.ndarray:
    """Masked recoloring applied directly to pixels, no diffusion involved."""
    img = _source(content)
    ref_img = _reference(ref, img.shape[:2])
    gmask = _mask_at(content_mask, img.shape[:2])
    rmask = _mask_at(ref_mask, img.shape[:2])
    gen_cs = kmeans_colors(img, k, gmask, seed, space)
    ref_cs = kmeans_colors(ref_img, k, rmask, seed, space)
    out = masked_recolor(
        img,
        ref_img,
        masks_from_clusters(gen_cs),
        masks_from_clusters(ref_cs),
        correspond_by_proportion(gen_cs, ref_cs),
        eps=eps,
    )
    return np.clip(out, 0.0, 255.0)


def run_job(job: TransferJob, on_step: Callable | None = None) -> np.ndarray:
    """Run ``job`` according to its mode.

    ``on_step(branch, t, image)`` receives the decoded clean estimate of
    every denoising step of the diffusion modes.
    """
    cfg = job.config

    def hook(branch):
        return None if on_step is None else (lambda t, img: on_step(branch, t, img))

    if job.mode == "color-only":
        return run_color_branch(job, hook("color"))
    if job.mode == "style-only":
        return run_style_branch(job, hook("style"))
    if job.mode == "color+style":
        return run_full_detailed(job, hook("color"), hook("style")).image
    if job.mode == "lab-swap":
        return lab_swap(job.style_ref, job.color_ref)
    return recolor_image(
        job.content,
        job.color_ref,
        cfg.k,
        cfg.seed_kmeans,
        cfg.eps,
        job.content_mask,
        job.ref_mask,
        cfg.kmeans_space,
    )


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Palette:
    colors: np.ndarray  # (n, 3) RGB, most common first
    proportions: np.ndarray  # (n,), sums to 1

    def __len__(self):
        return len(self.proportions)

    @property
    def lab(self) -> np.ndarray:
        return colors_to_lab(self.colors)


def dominant_palette(img, n: int = 3, mask=None) -> Palette:
    """The ``n`` k-means colors of an image (seed 0), by proportion."""
    if n < 1:
        raise ValueError("palette size must be >= 1")
    pixels = _as_rgb(img).reshape(-1, 3)
    if mask is not None:
        pixels = pixels[np.asarray(mask, dtype=bool).ravel()]
    centers, labels = lloyd(pixels, n, seed=0)
    counts = np.bincount(labels, minlength=n).astype(np.float64)
    order = sorted(range(n), key=lambda j: (-counts[j], float(luminance(centers[j])), j))
    return Palette(colors=centers[order], proportions=counts[order] / counts.sum())


def palette_distance(a: Palette, b: Palette) -> float:
    """Proportion-weighted mean CIE76 difference of rank-matched colors.

    Pair ``i`` is weighted by the mean of its two proportions.
    """
    if len(a) != len(b):
        raise ValueError(f"palette sizes differ: {len(a)} vs {len(b)}")
    w = 0.5 * (a.proportions + b.proportions)
    return float(np.sum(w * delta_e76(a.lab, b.lab)))


def _corner_span() -> float:
    corners = np.array([[r, g, b] for r in (0, 255) for g in (0, 255) for b in (0, 255)], float)
    lab = colors_to_lab(corners)
    return float(delta_e76(lab[:, None, :], lab[None, :, :]).max())


MAX_PALETTE_DISTANCE = _corner_span()


def chroma_distance(rgb1, rgb2) -> float:
    """Euclidean distance between two colors in the a/b plane."""
    l1, l2 = colors_to_lab([rgb1, rgb2])
    return float(np.hypot(*(l1[1:] - l2[1:])))


def hue_difference(rgb1, rgb2) -> float:
    """CIE76 hue difference ``dH*ab`` between two colors.

    The part of ``dE*ab`` left after removing the lightness and chroma
    differences; a lighter or duller version of the same hue scores 0.
    """
    l1, l2 = colors_to_lab([rgb1, rgb2])
    c1, c2 = np.hypot(l1[1], l1[2]), np.hypot(l2[1], l2[2])
    dh2 = (l1[1] - l2[1]) ** 2 + (l1[2] - l2[2]) ** 2 - (c1 - c2) ** 2
    return float(np.sqrt(max(dh2, 0.0)))


def chroma_palette(img, n: int = 2, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """k-means (seed 0) over the a/b channels only.

    Returns ``(ab_centers, proportions)`` sorted by proportion, so two
    images with different lightness can be compared on color alone.
    """
    ab = rgb_to_lab(_as_rgb(img))[:, :, 1:].reshape(-1, 2)
    if mask is not None:
        ab = ab[np.asarray(mask, dtype=bool).ravel()]
    centers, labels = lloyd(ab, n, seed=0)
    counts = np.bincount(labels, minlength=n).astype(np.float64)
    order = sorted(range(n), key=lambda j: (-counts[j], j))
    return centers[order], counts[order] / counts.sum()


def _sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    p = np.pad(gray, 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return np.hypot(gx, gy)


def edge_map(img, rel_threshold: float = 0.25, space: str = "lightness") -> np.ndarray:
    """Sobel edges thresholded relative to the strongest response.

    ``space="lightness"`` looks at CIELAB L only; ``space="lab"`` uses the
    Euclidean norm of the per-channel Lab gradients, so a hue boundary at
    constant lightness still counts as an edge.
    """
    img = as_image(img)
    if img.shape[2] == 1:
        lab = gray_to_L(img)[:, :, None]
    else:
        lab = rgb_to_lab(img)
    if space == "lightness":
        mag = _sobel_magnitude(lab[:, :, 0])
    elif space == "lab":
        mag = np.sqrt(sum(_sobel_magnitude(lab[:, :, c]) ** 2 for c in range(lab.shape[2])))
    else:
        raise ValueError(f"unknown edge space {space!r}")
    top = mag.max()
    if top <= 1e-9:
        return np.zeros(mag.shape, dtype=bool)
    return mag > rel_threshold * top


def gray_to_L(gray: np.ndarray) -> np.ndarray:
    return rgb_to_lab(gray_to_rgb(as_image(gray, channels=1)))[:, :, 0]


def edge_change_fraction(a, b, rel_threshold: float = 0.25, space: str = "lightness") -> float:
    """Fraction of pixels whose edge/no-edge label differs between images."""
    return float(np.mean(edge_map(a, rel_threshold, space) != edge_map(b, rel_threshold, space)))
