"""Synthetic instance generators for the desk-scale experiments."""

from __future__ import annotations

import numpy as np

from ..core import make_rng


def _simplex_centers(num_clusters: int, dim: int, separation: float) -> np.ndarray:
    """Mutually equidistant cluster centers embedded in R^dim."""
    m = num_clusters
    if dim < m - 1:
        raise ValueError(f"dim {dim} too small for {m} equidistant centers")
    centered = np.eye(m) - 1.0 / m  # rows span an (m-1)-dim subspace
    q, _ = np.linalg.qr(centered.T)
    pts = centered @ q[:, : m - 1]  # pairwise distance sqrt(2), preserved by Q
    pts *= separation / np.sqrt(2.0)
    out = np.zeros((m, dim))
    out[:, : m - 1] = pts
    return out


def generate_blobs(num_clusters: int, per_cluster: int, dim: int, spread: float,
                   seed: int) -> np.ndarray:
    """Gaussian blobs around equidistant centers (k-means stand-in data).

    Center separation is max(1, 10 * spread), so clusters stay well apart
    relative to their spread. Deterministic per seed.
    """
    if min(num_clusters, per_cluster, dim) < 1 or spread <= 0:
        raise ValueError("all generator parameters must be positive")
    separation = max(1.0, 10.0 * spread)
    centers = _simplex_centers(num_clusters, dim, separation)
    rng = make_rng(seed, 0xB10B)
    points = []
    for c in range(num_clusters):
        points.append(centers[c] + spread * rng.standard_normal((per_cluster, dim)))
    return np.vstack(points)


def generate_lowrank(rows: int, cols: int, rank: int, box=(1.0, 5.0),
                     observe_frac: float = 0.3, seed: int = 0):
    """Exactly-rank-r matrix inside the box, with an 80/20 observed/heldout
    split of a uniform observation mask.

    Factor entries are drawn so every product lands inside the box, and the
    final multiplicative rescale (which preserves the rank) pins the largest
    entry to the box ceiling. Returns (observed, heldout, truth) with
    observed/heldout as lists of (i, j, value).
    """
    lo, hi = float(box[0]), float(box[1])
    if rank > min(rows, cols):
        raise ValueError("rank cannot exceed min(rows, cols)")
    if not 0.0 < observe_frac < 1.0:
        raise ValueError("observe_frac must be in (0, 1)")
    if not 0.0 < lo < hi:
        raise ValueError("box must satisfy 0 < lo < hi")
    rng = make_rng(seed, 0x10A4)
    f_lo, f_hi = np.sqrt(lo / rank), np.sqrt(hi / rank)
    U = rng.uniform(f_lo, f_hi, size=(rows, rank))
    V = rng.uniform(f_lo, f_hi, size=(cols, rank))
    truth = U @ V.T  # every entry already inside [lo, hi]
    truth *= hi / truth.max()
    total = rows * cols
    selected = rng.permutation(total)[: round(observe_frac * total)]
    num_train = round(0.8 * selected.size)
    def entries(flat):
        return [(int(f) // cols, int(f) % cols, float(truth[f // cols, f % cols]))
                for f in flat]
    return entries(selected[:num_train]), entries(selected[num_train:]), truth
