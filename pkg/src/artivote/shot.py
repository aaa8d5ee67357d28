"""SHOT local descriptors (signature of histograms of orientations).

352-dimensional descriptor per point: a local reference frame from the
distance-weighted neighborhood covariance with majority-sign
disambiguation, then 32 spatial bins (8 azimuth x 2 elevation x 2 radial)
each holding an 11-bin histogram of cos(angle) between neighbor normals
and the frame's z axis, filled with quadrilinear interpolation and
L2-normalized. Points with no neighbors inside the support get the zero
vector.

Flat layout: index = ((azimuth * 2 + elevation) * 2 + radial) * 11 + cosine.
"""

import numpy as np
from scipy.spatial import cKDTree

N_AZIMUTH = 8
N_ELEVATION = 2
N_RADIAL = 2
N_COSINE = 11
DESCRIPTOR_SIZE = N_AZIMUTH * N_ELEVATION * N_RADIAL * N_COSINE  # 352


def _local_frames(rel: np.ndarray, dist: np.ndarray, qi: np.ndarray, nq: int, radius: float):
    """Batched LRFs from weighted covariance of neighbor offsets.

    rel/dist are flattened neighbor offsets with qi mapping each row to its
    query point. Returns (x, y, z) axes of shape (nq, 3) each.
    """
    w = radius - dist
    wsum = np.bincount(qi, weights=w, minlength=nq)
    outer = w[:, None, None] * (rel[:, :, None] * rel[:, None, :])
    cov = np.zeros((nq, 3, 3))
    np.add.at(cov, qi, outer)
    denom = np.where(wsum > 0, wsum, 1.0)
    cov /= denom[:, None, None]

    _, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    x = vecs[:, :, 2].copy()
    z = vecs[:, :, 0].copy()

    # orient each axis toward the majority of neighbors
    counts = np.bincount(qi, minlength=nq).astype(float)
    for axis in (x, z):
        dots = np.einsum("pd,pd->p", rel, axis[qi])
        pos = np.bincount(qi, weights=(dots >= 0).astype(float), minlength=nq)
        flip = pos * 2 < counts
        axis[flip] = -axis[flip]
    y = np.cross(z, x)
    return x, y, z


def shot_descriptors(
    points: np.ndarray,
    normals: np.ndarray,
    radius: float,
    indices: np.ndarray | None = None,
    tree: cKDTree | None = None,
) -> np.ndarray:
    """Descriptors for points[indices] (all points when indices is None)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    if indices is None:
        indices = np.arange(points.shape[0])
    indices = np.asarray(indices)
    nq = indices.shape[0]
    if tree is None:
        tree = cKDTree(points)

    centers = points[indices]
    neigh = tree.query_ball_point(centers, r=radius, return_sorted=True)
    counts = np.fromiter((len(m) for m in neigh), dtype=np.int64, count=nq)
    desc = np.zeros((nq, DESCRIPTOR_SIZE))
    if counts.sum() == 0:
        return desc

    qi = np.repeat(np.arange(nq), counts)
    pj = np.concatenate([np.asarray(m, dtype=np.int64) for m in neigh])
    rel = points[pj] - centers[qi]
    dist = np.linalg.norm(rel, axis=1)

    x, y, z = _local_frames(rel, dist, qi, nq, radius)

    # histogram contributions exclude the query point itself
    keep = dist > 1e-12
    qi, pj, rel, dist = qi[keep], pj[keep], rel[keep], dist[keep]
    if qi.size == 0:
        return desc

    lx = np.einsum("pd,pd->p", rel, x[qi])
    ly = np.einsum("pd,pd->p", rel, y[qi])
    lz = np.einsum("pd,pd->p", rel, z[qi])

    cosine = np.clip(np.einsum("pd,pd->p", normals[pj], z[qi]), -1.0, 1.0)
    f_cos = (cosine + 1.0) / 2.0 * N_COSINE - 0.5
    azimuth = np.arctan2(ly, lx)
    f_az = (azimuth + np.pi) / (2.0 * np.pi) * N_AZIMUTH - 0.5
    sin_el = np.clip(lz / dist, -1.0, 1.0)
    f_el = (sin_el + 1.0) / 2.0 * N_ELEVATION - 0.5
    f_rad = dist / (radius / 2.0) - 0.5

    def split(f, nbins, wrap):
        i0 = np.floor(f).astype(np.int64)
        frac = f - i0
        i1 = i0 + 1
        if wrap:
            i0 %= nbins
            i1 %= nbins
        else:
            i0 = np.clip(i0, 0, nbins - 1)
            i1 = np.clip(i1, 0, nbins - 1)
        return (i0, 1.0 - frac), (i1, frac)

    az_parts = split(f_az, N_AZIMUTH, wrap=True)
    el_parts = split(f_el, N_ELEVATION, wrap=False)
    rad_parts = split(f_rad, N_RADIAL, wrap=False)
    cos_parts = split(f_cos, N_COSINE, wrap=False)

    flat = desc.ravel()
    for ia, wa in az_parts:
        for ie, we in el_parts:
            w_ae = wa * we
            for ir, wr in rad_parts:
                w_aer = w_ae * wr
                spatial = ((ia * N_ELEVATION + ie) * N_RADIAL + ir) * N_COSINE
                for ic, wc in cos_parts:
                    np.add.at(flat, qi * DESCRIPTOR_SIZE + spatial + ic, w_aer * wc)

    norms = np.linalg.norm(desc, axis=1)
    nz = norms > 0
    desc[nz] /= norms[nz, None]
    return desc
