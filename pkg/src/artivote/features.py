"""Network input features for point tuples.

A tuple of M points (the first two are the major points that define the
voting baseline) yields pairwise offset vectors, folded pairwise normal
cosines, and one SHOT descriptor per point. Pair order is fixed:
itertools.combinations order over (i, j) with i < j.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from .cloud import LabeledCloud
from .shot import DESCRIPTOR_SIZE, shot_descriptors

DEFAULT_SHOT_RADIUS_REL = 0.15  # times the cloud bounding-box diagonal
DEFAULT_D_MIN_REL = 0.01
DEFAULT_NORMAL_K = 30


@dataclass
class TupleSample:
    """One sampled tuple with its features.

    f1: 3 * C(M,2) pairwise offsets p_i - p_j (meters), f2: C(M,2) folded
    normal cosines in [0, 1], shot: (M, 352) unit-norm (or zero) descriptors.
    """

    indices: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    shot: np.ndarray


@dataclass
class FeatureBatch:
    """Stacked features for K tuples: f1 (K, 30), f2 (K, 10), shot (K, M, 352)."""

    f1: np.ndarray
    f2: np.ndarray
    shot: np.ndarray

    @property
    def n(self) -> int:
        return self.f1.shape[0]


def pair_indices(m: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = list(combinations(range(m), 2))
    ii = np.array([p[0] for p in pairs])
    jj = np.array([p[1] for p in pairs])
    return ii, jj


def estimate_normals(points: np.ndarray, viewpoint, k: int = DEFAULT_NORMAL_K) -> np.ndarray:
    """Per-point unit normals from k-NN PCA, oriented toward the viewpoint."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k)
    neigh = points[idx]
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k - 1)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    toward = np.asarray(viewpoint, dtype=float) - points
    flip = np.einsum("nd,nd->n", normals, toward) < 0
    normals[flip] = -normals[flip]
    return normals


def shot_descriptor(cloud: LabeledCloud, index: int, radius: float) -> np.ndarray:
    """SHOT descriptor of one cloud point (zero vector if no neighbors)."""
    return shot_descriptors(cloud.points, cloud.normals, radius, indices=np.array([index]))[0]


def sample_tuples(
    cloud: LabeledCloud,
    K: int = 100000,
    M: int = 5,
    d_min: float | None = None,
    *,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample K tuples of M distinct point indices, uniformly.

    Tuples whose major-point baseline is shorter than d_min (default
    0.01 * diag) are redrawn up to 100 times, then accepted as-is.
    """
    n = cloud.n
    if n < M:
        raise ValueError(f"cloud has {n} points, need at least M={M}")
    if d_min is None:
        d_min = DEFAULT_D_MIN_REL * cloud.diag

    def draw_distinct(m: int) -> np.ndarray:
        out = rng.integers(0, n, size=(m, M))
        while True:
            s = np.sort(out, axis=1)
            bad = np.flatnonzero((np.diff(s, axis=1) == 0).any(axis=1))
            if bad.size == 0:
                return out
            out[bad] = rng.integers(0, n, size=(bad.size, M))

    idx = draw_distinct(K)
    pending = np.arange(K)
    for _ in range(100):
        base = np.linalg.norm(
            cloud.points[idx[pending, 0]] - cloud.points[idx[pending, 1]], axis=1
        )
        pending = pending[base < d_min]
        if pending.size == 0:
            break
        idx[pending] = draw_distinct(pending.size)
    return idx


def batch_tuple_features(
    cloud: LabeledCloud,
    tuples: np.ndarray,
    shot_radius: float | None = None,
    tree: cKDTree | None = None,
) -> FeatureBatch:
    """Features for many tuples at once; descriptors are computed once per
    distinct point index and gathered."""
    tuples = np.asarray(tuples)
    if shot_radius is None:
        shot_radius = DEFAULT_SHOT_RADIUS_REL * cloud.diag
    k, m = tuples.shape
    ii, jj = pair_indices(m)

    pts = cloud.points[tuples]  # (K, M, 3)
    f1 = (pts[:, ii, :] - pts[:, jj, :]).reshape(k, -1)
    nrm = cloud.normals[tuples]
    f2 = np.abs(np.einsum("kpd,kpd->kp", nrm[:, ii, :], nrm[:, jj, :]))

    unique, inverse = np.unique(tuples.ravel(), return_inverse=True)
    desc = shot_descriptors(cloud.points, cloud.normals, shot_radius, indices=unique, tree=tree)
    shot = desc[inverse].reshape(k, m, DESCRIPTOR_SIZE)
    return FeatureBatch(f1=f1, f2=f2, shot=shot)


def tuple_features(cloud: LabeledCloud, indices, shot_radius: float | None = None) -> TupleSample:
    """Features for a single tuple (first two indices are the major points)."""
    indices = np.asarray(indices)
    batch = batch_tuple_features(cloud, indices[None, :], shot_radius)
    return TupleSample(indices=indices, f1=batch.f1[0], f2=batch.f2[0], shot=batch.shot[0])
