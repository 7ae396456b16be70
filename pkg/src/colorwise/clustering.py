"""K-means color clusters, proportion-based correspondence and masks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .colorspace import luminance, rgb_to_lab
from .imagecore import BinaryMask, ImageBuffer, as_image, check_mask

DEFAULT_K = 3
MAX_ITER = 300
TOL = 1e-6


class ClusteringError(ValueError):
    """Raised when an image cannot be split into the requested clusters."""


@dataclass(frozen=True)
class ColorCluster:
    centroid: np.ndarray  # mean RGB of members
    member_indices: np.ndarray  # flat row-major pixel indices

    @property
    def member_count(self) -> int:
        return int(self.member_indices.size)


@dataclass(frozen=True)
class ClusterSet:
    clusters: list[ColorCluster]
    source_dims: tuple[int, int]  # (width, height)
    mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.clusters)

    @property
    def proportions(self) -> np.ndarray:
        counts = np.array([c.member_count for c in self.clusters], dtype=np.float64)
        return counts / counts.sum()

    @property
    def centroids(self) -> np.ndarray:
        return np.stack([c.centroid for c in self.clusters])

    def labels(self) -> np.ndarray:
        """Per-pixel cluster label image, ``-1`` outside the input mask."""
        width, height = self.source_dims
        labels = np.full(width * height, -1, dtype=int)
        for i, c in enumerate(self.clusters):
            labels[c.member_indices] = i
        return labels.reshape(height, width)


@dataclass(frozen=True)
class Correspondence:
    pairs: list[tuple[int, int]]  # (gen cluster index, ref cluster index)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ClusteringError(f"fewer than {k} distinct colors")
        idx = rng.choice(n, p=d2 / total)
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )


def lloyd(points: np.ndarray, k: int, seed: int = 0, max_iter: int = MAX_ITER, tol: float = TOL):
    """Plain Lloyd iterations from k-means++ seeding.

    Returns ``(centers, labels)``. An emptied cluster is re-seeded at the
    point farthest from its currently assigned center.
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(np.unique(points, axis=0)) < k:
        raise ClusteringError(f"fewer than {k} distinct colors to cluster")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(points, k, rng)
    labels = np.zeros(len(points), dtype=int)
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            own = d2[np.arange(len(points)), labels].copy()
            for j in empty:
                own[counts[labels] <= 1] = -np.inf
                far = int(np.argmax(own))
                counts[labels[far]] -= 1
                counts[j] += 1
                labels[far] = j
                own[far] = -np.inf
        new = np.stack([points[labels == j].mean(axis=0) for j in range(k)])
        shift = np.max(np.sqrt(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        if shift < tol:
            break
    # final assignment consistent with the returned centers
    d2 = _sq_dists(points, centers)
    final = np.argmin(d2, axis=1)
    if np.all(np.bincount(final, minlength=k) > 0):
        labels = final
    return centers, labels


def kmeans_colors(
    img: ImageBuffer,
    k: int = DEFAULT_K,
    mask: BinaryMask | None = None,
    seed: int = 0,
    space: str = "rgb",
) -> ClusterSet:
    """Cluster the pixels of a 3-channel image into ``k`` color groups.

    Args:
        img: ``(H, W, 3)`` image in pixel units.
        k: number of clusters.
        mask: optional region restricting which pixels take part.
        seed: seed of the k-means++ initialisation.
        space: ``"rgb"`` (default) or ``"lab"`` distance.

    Raises:
        ClusteringError: fewer distinct unmasked pixels than ``k``.
    """
    img = as_image(img, channels=3)
    height, width, _ = img.shape
    flat = img.reshape(-1, 3)
    if mask is None:
        idx = np.arange(height * width)
    else:
        mask = check_mask(img, mask)
        idx = np.flatnonzero(mask.ravel())
    if idx.size < k:
        raise ClusteringError(f"{idx.size} unmasked pixels, need at least k={k}")
    pixels = flat[idx]
    if space == "rgb":
        feats = pixels
    elif space == "lab":
        feats = rgb_to_lab(pixels[:, None, :])[:, 0, :]
    else:
        raise ValueError(f"unknown clustering space {space!r}")
    _, labels = lloyd(feats, k, seed=seed)
    clusters = [
        ColorCluster(centroid=pixels[labels == j].mean(axis=0), member_indices=idx[labels == j])
        for j in range(k)
    ]
    return ClusterSet(clusters=clusters, source_dims=(width, height), mask=mask)


def rank_clusters(cs: ClusterSet) -> list[int]:
    """Cluster indices ordered by size desc, then luminance asc, then index."""
    keys = [
        (-c.member_count, float(luminance(c.centroid)), i) for i, c in enumerate(cs.clusters)
    ]
    return [key[2] for key in sorted(keys)]


def correspond_by_proportion(gen: ClusterSet, ref: ClusterSet) -> Correspondence:
    """Pair clusters of equal size rank between two cluster sets."""
    if gen.k != ref.k:
        raise ValueError(f"cluster count mismatch: {gen.k} vs {ref.k}")
    return Correspondence(pairs=list(zip(rank_clusters(gen), rank_clusters(ref))))


def masks_from_clusters(cs: ClusterSet) -> list[BinaryMask]:
    width, height = cs.source_dims
    masks = []
    for c in cs.clusters:
        m = np.zeros(width * height, dtype=bool)
        m[c.member_indices] = True
        masks.append(m.reshape(height, width))
    return masks


def within_cluster_ss(points: np.ndarray, labels: np.ndarray) -> float:
    """Sum of squared distances of points to their cluster means."""
    total = 0.0
    for j in np.unique(labels):
        p = points[labels == j]
        total += float(np.sum((p - p.mean(axis=0)) ** 2))
    return total
