"""Downsampling embeddings and dynamic-time-warping alignment cost.

The DTW recurrence is the symmetric three-step pattern

    D(i, j) = d(i, j) + min(D(i-1, j-1), D(i-1, j), D(i, j-1))

over a precomputed local-distance matrix. Rows of the cumulative table are
filled with a running-minimum formulation (a path enters row i at some
column k and then moves horizontally), which gives the exact same table as
the cell-by-cell recurrence without a Python inner loop. Path length for
normalization counts the cells on the optimal path, recovered by
backtracking with diagonal-first tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOCAL_DISTANCES = ("cosine", "euclidean", "sqeuclidean")


@dataclass(frozen=True)
class DtwConfig:
    local_distance: str = "cosine"
    normalize: bool = True  # divide by the optimal path's cell count

    def __post_init__(self):
        if self.local_distance not in LOCAL_DISTANCES:
            raise ValueError("unknown local distance: %s" % self.local_distance)


def downsample_embed(frames: np.ndarray, k: int = 10) -> np.ndarray:
    """k equally spaced frames, linearly interpolated, concatenated in order.

    Sample positions are i * (T - 1) / (k - 1); a one-frame segment repeats
    its frame k times. A 13-dim input with the default k gives 130 dims.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    t = frames.shape[0]
    if t == 1:
        return np.tile(frames[0], k)
    positions = np.arange(k) * (t - 1) / (k - 1)
    lo = np.floor(positions).astype(int)
    hi = np.minimum(lo + 1, t - 1)
    frac = (positions - lo)[:, None]
    sampled = frames[lo] * (1.0 - frac) + frames[hi] * frac
    return sampled.reshape(-1)


def local_distance_matrix(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Pairwise frame distances, (T_a, T_b).

    Cosine distance of a zero-norm frame against anything is defined as 1.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            "frame dimensions differ: %d vs %d" % (a.shape[1], b.shape[1])
        )
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = na[:, None] * nb[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = (a @ b.T) / denom
        dist = 1.0 - sim
        dist[denom == 0.0] = 1.0
        return dist
    sq = (
        (a * a).sum(axis=1)[:, None]
        - 2.0 * (a @ b.T)
        + (b * b).sum(axis=1)[None, :]
    )
    np.maximum(sq, 0.0, out=sq)
    if metric == "sqeuclidean":
        return sq
    if metric == "euclidean":
        return np.sqrt(sq)
    raise ValueError("unknown local distance: %s" % metric)


def _cumulative_table(dist: np.ndarray) -> np.ndarray:
    t_a, t_b = dist.shape
    table = np.empty_like(dist)
    table[0] = np.cumsum(dist[0])
    for i in range(1, t_a):
        prev = table[i - 1]
        # Best cost of stepping into row i at column k, from above or diagonal.
        enter = np.empty(t_b)
        enter[0] = prev[0]
        np.minimum(prev[1:], prev[:-1], out=enter[1:])
        row_cumsum = np.cumsum(dist[i])
        shifted = np.concatenate(([0.0], row_cumsum[:-1]))
        best = np.minimum.accumulate(enter - shifted)
        table[i] = row_cumsum + best
    return table


def _path_length(table: np.ndarray) -> int:
    """Cell count of the optimal path, ties resolved diagonal, up, left."""
    i, j = table.shape[0] - 1, table.shape[1] - 1
    length = 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = table[i - 1, j - 1], table[i - 1, j], table[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        length += 1
    return length


def dtw_cost(a: np.ndarray, b: np.ndarray, cfg: DtwConfig | None = None) -> float:
    """Alignment cost of two (T, D) sequences under the configured metric."""
    cfg = cfg or DtwConfig()
    dist = local_distance_matrix(a, b, cfg.local_distance)
    table = _cumulative_table(dist)
    cost = float(table[-1, -1])
    if cfg.normalize:
        cost /= _path_length(table)
    return cost
