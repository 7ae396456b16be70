"""Whitening/recoloring covariance matching and its mask-aware form.

Everything operates on ``(N, D)`` sample matrices: pixels with D = 3, or
latent codes with D latent channels. Covariances use the unbiased
``1/(N-1)`` normalisation.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .clustering import Correspondence

DEFAULT_EPS = 1e-5
# eigenvalues below this fraction of the largest count as zero
RANK_TOL = 1e-12


class DegenerateCovarianceError(ArithmeticError):
    """Whitening with eps=0 was requested for a rank-deficient covariance."""


def _as_samples(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"{name} must be an (N, D) matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"{name} needs at least 2 samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def mean_cov(x) -> tuple[np.ndarray, np.ndarray]:
    x = _as_samples(x)
    mu = x.mean(axis=0)
    c = x - mu
    cov = c.T @ c / (x.shape[0] - 1)
    return mu, 0.5 * (cov + cov.T)


def eig_sym(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenpairs with negatives clamped and a fixed sign convention.

    Each eigenvector is flipped so its components sum to a non-negative value
    (largest-magnitude component positive on ties), which keeps "brighter"
    pointing the same way in the source and reference bases.
    """
    lam, U = np.linalg.eigh(cov)
    lam = np.maximum(lam, 0.0)
    s = U.sum(axis=0)
    tie = np.abs(s) < 1e-12
    if np.any(tie):
        pivot = U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])]
        s = np.where(tie, pivot, s)
    return lam, U * np.where(s < 0, -1.0, 1.0)


def _is_degenerate(lam: np.ndarray) -> bool:
    top = lam.max(initial=0.0)
    return top <= 0.0 or lam.min() <= RANK_TOL * top


def _whiten_parts(x: np.ndarray, eps: float):
    mu, cov = mean_cov(x)
    lam, U = eig_sym(cov)
    # numerically empty directions hold only round-off; scaling them up would
    # let repeated recoloring amplify it without bound
    keep = lam > RANK_TOL * max(lam.max(initial=0.0), eps)
    scale = np.zeros_like(lam)
    scale[keep] = 1.0 / np.sqrt(lam[keep] + eps)
    return mu, lam, U, scale


def whiten(x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """PCA-whiten samples: ``(Lambda + eps)^(-1/2) U^T (x - mu)``, row-wise.

    Directions whose variance is below ``RANK_TOL`` times the larger of
    the top eigenvalue and ``eps`` carry only round-off and map to zero.
    """
    x = _as_samples(x)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    mu, _, U, scale = _whiten_parts(x, eps)
    return ((x - mu) @ U) * scale


def recolor_transform(x, ref, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Give ``x`` the mean and covariance of ``ref``.

    ``out = U_ref Lambda_ref^(1/2) whiten(x) + mu_ref``. With ``eps = 0``
    both covariances must be full rank.

    Raises:
        ValueError: channel mismatch, too few samples, non-finite input.
        DegenerateCovarianceError: ``eps == 0`` with a rank-deficient
            source or reference covariance.
    """
    x = _as_samples(x, "x")
    ref = _as_samples(ref, "ref")
    if x.shape[1] != ref.shape[1]:
        raise ValueError(f"channel mismatch: {x.shape[1]} vs {ref.shape[1]}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    mu_r, cov_r = mean_cov(ref)
    lam_r, U_r = eig_sym(cov_r)
    mu_x, lam_x, U_x, scale = _whiten_parts(x, eps)
    if eps == 0 and (_is_degenerate(lam_r) or _is_degenerate(lam_x)):
        raise DegenerateCovarianceError("rank-deficient covariance requires eps > 0")
    white = ((x - mu_x) @ U_x) * scale
    return (white * np.sqrt(lam_r)) @ U_r.T + mu_r


def _flat_mask(mask, n: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool).ravel()
    if m.size != n:
        raise ValueError(f"mask covers {m.size} samples, data has {n}")
    return m


def masked_recolor(
    gen,
    ref,
    masks_gen: Sequence,
    masks_ref: Sequence,
    corr: Correspondence,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Recolor each generation region from its matched reference region.

    ``gen`` and ``ref`` are ``(N, D)`` matrices or ``(H, W, D)`` arrays whose
    pixels are the samples; the result has the shape of ``gen``. For every
    pair ``(g, r)`` in ``corr``, samples under ``masks_gen[g]`` are replaced
    with :func:`recolor_transform` of themselves against the samples under
    ``masks_ref[r]``. Samples covered by no generation mask are returned
    unchanged, bit for bit. Statistics come from the masked samples only.

    A generation region with a single sample is moved to the reference
    region mean, the zero-variance limit of the transform.

    Raises:
        ValueError: overlapping generation masks, mismatched lengths, or an
            empty reference region for a matched pair.
    """
    gen_arr = np.asarray(gen, dtype=np.float64)
    ref_arr = np.asarray(ref, dtype=np.float64)
    d = gen_arr.shape[-1]
    g = gen_arr.reshape(-1, d)
    r = ref_arr.reshape(-1, ref_arr.shape[-1])
    if r.shape[1] != d:
        raise ValueError(f"channel mismatch: {d} vs {r.shape[1]}")
    if len(masks_gen) != len(masks_ref) or len(corr.pairs) != len(masks_gen):
        raise ValueError("masks and correspondence must all have length k")
    mg = [_flat_mask(m, g.shape[0]) for m in masks_gen]
    mr = [_flat_mask(m, r.shape[0]) for m in masks_ref]
    if mg and np.any(np.sum(mg, axis=0) > 1):
        raise ValueError("generation masks overlap")

    out = g.copy()
    for gi, ri in corr.pairs:
        sel = mg[gi]
        n = int(sel.sum())
        if n == 0:
            continue
        ref_region = r[mr[ri]]
        if ref_region.shape[0] == 0:
            raise ValueError(f"reference region {ri} matched to cluster {gi} is empty")
        if n == 1 or ref_region.shape[0] == 1:
            out[sel] = ref_region.mean(axis=0)
        else:
            out[sel] = recolor_transform(g[sel], ref_region, eps=eps)
    return out.reshape(gen_arr.shape)


def relative_cov_error(out, ref) -> float:
    """``||cov(out) - cov(ref)||_F / ||cov(ref)||_F``."""
    _, c_out = mean_cov(out)
    _, c_ref = mean_cov(ref)
    return float(np.linalg.norm(c_out - c_ref) / np.linalg.norm(c_ref))
