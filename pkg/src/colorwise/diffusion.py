"""Deterministic DDIM sampling/inversion and the conditioned denoising loop.

Latent codes are ``(N, D)`` float arrays. Timesteps run ``t = T .. 1``
while denoising; the *progress index* of the step that consumes ``z_t`` is
``T - t + 1``, so 1 is the first denoising step and ``T`` the last.
Intervention windows are stated as fractions of that progress.

Denoisers are callables ``denoiser(z_t, t, context) -> eps`` returning a
noise prediction of the same shape as ``z_t``. ``context`` is a
:class:`StepContext` or ``None``.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionFeatures, InjectionGate, attend, gated_attend
from .colorspace import rgb_to_lab
from .clustering import (
    DEFAULT_K,
    correspond_by_proportion,
    kmeans_colors,
    masks_from_clusters,
)
from .recolor import DEFAULT_EPS, masked_recolor

Denoiser = Callable[..., np.ndarray]


class NumericalError(ArithmeticError):
    """A latent became non-finite during sampling or inversion."""


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray  # length T + 1, alpha_bar[0] == 1

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 2:
            raise ValueError("alpha_bar needs at least two entries")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1")
        if np.any(ab <= 0) or np.any(ab > 1):
            raise ValueError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1


def make_schedule(T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with ``alpha_bar_t = prod_{i<=t} (1 - beta_i)``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))


def _check_t(sched: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [1, {sched.T}]")


def predict_z0(z_t, eps, sched: NoiseSchedule, t: int) -> np.ndarray:
    """Clean-latent estimate ``(z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)``."""
    _check_t(sched, t)
    ab = sched.alpha_bar[t]
    return (z_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


def _renoise(z0, eps, sched: NoiseSchedule, t: int) -> np.ndarray:
    ab_prev = sched.alpha_bar[t - 1]
    return math.sqrt(ab_prev) * z0 + math.sqrt(1.0 - ab_prev) * eps


def ddim_step(z_t, eps, sched: NoiseSchedule, t: int) -> np.ndarray:
    """One deterministic (sigma = 0) DDIM update ``z_t -> z_{t-1}``."""
    return _renoise(predict_z0(z_t, eps, sched, t), eps, sched, t)


def _check_finite(z, what: str, t: int) -> None:
    if not np.all(np.isfinite(z)):
        raise NumericalError(f"non-finite {what} at timestep {t}")


def ddim_sample(z_T, denoiser: Denoiser, sched: NoiseSchedule) -> np.ndarray:
    z = np.asarray(z_T, dtype=np.float64)
    for t in range(sched.T, 0, -1):
        z = ddim_step(z, denoiser(z, t, None), sched, t)
        _check_finite(z, "latent", t)
    return z


def ddim_invert(z0, denoiser: Denoiser, sched: NoiseSchedule) -> np.ndarray:
    """Run the DDIM recurrence from ``t = 1`` up to ``T``.

    The noise prediction for the ``t-1 -> t`` move is evaluated at
    ``(z_{t-1}, t)``.
    """
    z = np.asarray(z0, dtype=np.float64)
    for t in range(1, sched.T + 1):
        eps = denoiser(z, t, None)
        ab_prev, ab = sched.alpha_bar[t - 1], sched.alpha_bar[t]
        x0 = (z - math.sqrt(1.0 - ab_prev) * eps) / math.sqrt(ab_prev)
        z = math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
        _check_finite(z, "inverted latent", t)
    return z


def forward_mix(z0, noise, sched: NoiseSchedule, t: int) -> np.ndarray:
    """``sqrt(ab_t) z0 + sqrt(1 - ab_t) noise``."""
    ab = sched.alpha_bar[t]
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * noise


def toy_denoiser(target, sched: NoiseSchedule) -> Denoiser:
    """Analytic noise predictor whose clean estimate is always ``target``.

    ``eps(z_t, t) = (z_t - sqrt(ab_t) target) / sqrt(1 - ab_t)``, defined
    for ``t >= 1`` only. Every DDIM trajectory under it ends at ``target``.
    """
    target = np.asarray(target, dtype=np.float64)
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")

    def denoise(z_t, t, context=None):
        if t < 1:
            raise ValueError("the toy denoiser is undefined at t = 0")
        ab = sched.alpha_bar[t]
        return (z_t - math.sqrt(ab) * target) / math.sqrt(1.0 - ab)

    return denoise


# ---------------------------------------------------------------------------
# conditioned loop


@dataclass(frozen=True)
class InterventionSchedule:
    """Timestep windows, as fractions of denoising progress.

    Color recoloring is active on steps with progress in
    ``(color_window_start, color_window_end]``; style injection on steps
    with progress strictly above ``style_window_start``. The two windows may
    not overlap.
    """

    color_window_start: float = 0.0
    color_window_end: float = 0.8
    style_window_start: float = 0.8
    color_enabled: bool = False
    style_enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.color_window_start <= self.color_window_end <= 1.0:
            raise ValueError("need 0 <= color_window_start <= color_window_end <= 1")
        if not 0.0 <= self.style_window_start <= 1.0:
            raise ValueError("style_window_start must lie in [0, 1]")
        if self.color_window_end > self.style_window_start:
            raise ValueError(
                f"color window ends at {self.color_window_end} but style starts at "
                f"{self.style_window_start}; the windows must not overlap"
            )

    def color_active(self, progress: int, T: int) -> bool:
        return (
            self.color_enabled
            and progress > self.color_window_start * T + 1e-9
            and progress <= self.color_window_end * T + 1e-9
        )

    def style_threshold(self, T: int) -> float:
        return self.style_window_start * T

    def gate(self, progress: int, T: int) -> InjectionGate:
        # snap so that e.g. 0.8 * 50 compares as exactly 40
        thr = self.style_threshold(T)
        if abs(thr - round(thr)) < 1e-9:
            thr = float(round(thr))
        return InjectionGate(t_start_style=thr, current_t=progress)


@dataclass
class StepContext:
    t: int
    progress: int
    gate: InjectionGate | None = None
    ref_features: AttentionFeatures | None = None
    trace: dict | None = None


@dataclass
class ColorContext:
    """Inputs of the masked latent recoloring step.

    ``ref_z0`` maps each timestep to the reference trajectory's clean
    estimate. ``decode`` turns a latent into an ``(H, W, 3)`` pixel image
    used for clustering.
    """

    ref_z0: dict[int, np.ndarray]
    decode: Callable[[np.ndarray], np.ndarray]
    k: int = DEFAULT_K
    seed: int = 0
    eps: float = DEFAULT_EPS
    stride: int = 1
    space: str = "rgb"
    gen_mask: np.ndarray | None = None
    ref_mask: np.ndarray | None = None
    _cached: tuple | None = field(default=None, repr=False)
    _calls: int = field(default=0, repr=False)

    def apply(self, z0: np.ndarray, t: int) -> np.ndarray:
        ref = self.ref_z0[t]
        if self._cached is None or self._calls % max(self.stride, 1) == 0:
            gen_cs = kmeans_colors(self.decode(z0), self.k, self.gen_mask, self.seed, self.space)
            ref_cs = kmeans_colors(self.decode(ref), self.k, self.ref_mask, self.seed, self.space)
            self._cached = (
                masks_from_clusters(gen_cs),
                masks_from_clusters(ref_cs),
                correspond_by_proportion(gen_cs, ref_cs),
            )
        self._calls += 1
        masks_gen, masks_ref, corr = self._cached
        return masked_recolor(z0, ref, masks_gen, masks_ref, corr, eps=self.eps)


@dataclass
class StyleContext:
    """Reference attention features, keyed by timestep."""

    features: dict[int, AttentionFeatures]


def run_conditioned_denoise(
    z_T,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    isched: InterventionSchedule,
    color_ctx: ColorContext | None = None,
    style_ctx: StyleContext | None = None,
    on_step: Callable[[int, np.ndarray], None] | None = None,
    trace: dict | None = None,
) -> np.ndarray:
    """DDIM loop with windowed color recoloring and style KV injection.

    Inside the color window the clean estimate is recolored against the
    reference estimate of the same timestep and recombined with the
    original noise prediction. Inside the style window the denoiser is
    handed an open :class:`InjectionGate` plus the reference features.
    Steps outside both windows perform exactly the plain DDIM update.

    ``on_step(t, z0)`` sees every (possibly recolored) clean estimate.
    """
    if isched.color_enabled and color_ctx is None:
        raise ValueError("color branch enabled without a color context")
    if isched.style_enabled and style_ctx is None:
        raise ValueError("style branch enabled without reference features")
    T = sched.T
    z = np.asarray(z_T, dtype=np.float64)
    for t in range(T, 0, -1):
        progress = T - t + 1
        ctx = None
        if isched.style_enabled or trace is not None:
            ctx = StepContext(t=t, progress=progress, trace=trace)
            if isched.style_enabled:
                ctx.gate = isched.gate(progress, T)
                if ctx.gate.open:
                    ctx.ref_features = style_ctx.features[t]
        eps = denoiser(z, t, ctx)
        z0 = predict_z0(z, eps, sched, t)
        if isched.color_active(progress, T):
            z0 = color_ctx.apply(z0, t)
        if on_step is not None:
            on_step(t, z0)
        z = _renoise(z0, eps, sched, t)
        _check_finite(z, "latent", t)
    return z


# ---------------------------------------------------------------------------
# toy model used by the pipeline


def encode_image(img: np.ndarray) -> np.ndarray:
    """Pixel image ``(H, W, C)`` in [0, 255] -> latent ``(H*W, C)`` in [-1, 1]."""
    img = np.asarray(img, dtype=np.float64)
    return (img / 127.5 - 1.0).reshape(-1, img.shape[2])


def decode_latent(z: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    return ((np.asarray(z) + 1.0) * 127.5).reshape(h, w, -1)


@dataclass(frozen=True)
class ToyAttention:
    """Fixed feature map of the toy denoiser's single self-attention layer.

    Queries and keys are a Fourier encoding of token position plus an angle
    encoding of token CIELAB lightness, so a color token and its gray
    rendition get the same key; values are the clean-latent estimate.
    ``sharpness`` scales the logits, ``strength`` the residual applied when
    reference keys/values are injected.
    """

    shape: tuple[int, int]
    freqs: tuple[float, ...] = (1.0, 2.0, 4.0)
    sharpness: float = 400.0
    strength: float = 1.0

    def positional(self) -> np.ndarray:
        h, w = self.shape
        y, x = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
        y, x = y.ravel(), x.ravel()
        cols = []
        for f in self.freqs:
            cols += [np.cos(np.pi * f * y), np.sin(np.pi * f * y)]
            cols += [np.cos(np.pi * f * x), np.sin(np.pi * f * x)]
        return np.stack(cols, axis=1)

    def features(self, x0: np.ndarray) -> AttentionFeatures:
        rgb = np.clip((x0 + 1.0) * 127.5, 0.0, 255.0)
        light = rgb_to_lab(rgb[:, None, :])[:, 0, 0] / 100.0
        phi = np.concatenate(
            [self.positional(), np.stack([np.cos(np.pi * light), np.sin(np.pi * light)], axis=1)],
            axis=1,
        )
        qk = phi * math.sqrt(self.sharpness)
        return AttentionFeatures(q=qk, k=qk, v=x0)


class AnchoredDenoiser:
    """Toy noise predictor that always answers with a fixed noise field.

    Its clean estimate ``(z_t - sqrt(1 - ab_t) noise) / sqrt(ab_t)`` keeps
    whatever content the latent currently carries, so an edit made to the
    clean estimate at one step persists through later steps. Starting from
    ``forward_mix(target, noise, sched, T)`` it regenerates ``target``.

    With an :class:`ToyAttention` layer and an open gate in the step
    context, the estimate gains the residual
    ``strength * (attend(Q, K_ref, V_ref) - attend(Q, K, V))``.
    """

    def __init__(self, noise, sched: NoiseSchedule, attention: ToyAttention | None = None):
        self.noise = np.asarray(noise, dtype=np.float64)
        self.sched = sched
        self.attention = attention

    def clean_estimate(self, z_t, t: int) -> np.ndarray:
        ab = self.sched.alpha_bar[t]
        return (z_t - math.sqrt(1.0 - ab) * self.noise) / math.sqrt(ab)

    def __call__(self, z_t, t, context: StepContext | None = None):
        if t < 1:
            raise ValueError("the toy denoiser is undefined at t = 0")
        ab = self.sched.alpha_bar[t]
        x0 = self.clean_estimate(z_t, t)
        if self.attention is not None and context is not None:
            feats = self.attention.features(x0)
            trace = context.trace
            if trace is not None:
                trace.setdefault("features", {})[t] = feats
            gate = context.gate
            if gate is not None and gate.open:
                injected = gated_attend(feats, context.ref_features, gate)
                own = attend(feats.q, feats.k, feats.v)
                if trace is not None:
                    trace.setdefault("attention", {})[t] = injected
                x0 = x0 + self.attention.strength * (injected - own)
        return (z_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)
