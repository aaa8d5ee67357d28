"""Single-view depth rendering of articulated models by raycasting.

A pinhole camera shoots one ray per pixel; the first ray-triangle hit
yields the point, its part label and the face normal oriented toward the
camera. Rays that miss the scene bounding box are culled up front.
"""

from dataclasses import dataclass

import numpy as np

from .cloud import LabeledCloud, bbox_diagonal
from .objects import ArticulatedModel


class RenderError(RuntimeError):
    """Raised when the camera sees no part of the object."""


@dataclass(frozen=True)
class CameraPose:
    """Spherical camera pose looking at a fixed point, +z up."""

    azimuth_deg: float
    elevation_deg: float
    distance: float
    look_at: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "look_at", np.asarray(self.look_at, dtype=float))

    def position(self) -> np.ndarray:
        az = np.deg2rad(self.azimuth_deg)
        el = np.deg2rad(self.elevation_deg)
        offset = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        return self.look_at + self.distance * offset


def sample_view(rng: np.random.Generator, look_at=(0.0, 0.0, 0.0)) -> CameraPose:
    """Uniform camera pose in front of the object.

    Azimuth in [-60, 60] degrees, elevation in [0, 60] degrees, distance in
    [0.6, 1.2] meters, always looking at `look_at`.
    """
    return CameraPose(
        azimuth_deg=float(rng.uniform(-60.0, 60.0)),
        elevation_deg=float(rng.uniform(0.0, 60.0)),
        distance=float(rng.uniform(0.6, 1.2)),
        look_at=look_at,
    )


def _pixel_rays(camera: CameraPose, width: int, height: int, fov_v_deg: float) -> np.ndarray:
    pos = camera.position()
    forward = camera.look_at - pos
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    focal = (height / 2.0) / np.tan(np.deg2rad(fov_v_deg) / 2.0)
    xs = (np.arange(width) + 0.5 - width / 2.0) / focal
    ys = (np.arange(height) + 0.5 - height / 2.0) / focal
    dirs = (
        xs[None, :, None] * right
        + ys[:, None, None] * down
        + forward
    ).reshape(-1, 3)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _bbox_hits(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = np.where(np.abs(dirs) < 1e-300, 1e-300, dirs)
    t0 = (lo - origin) / d
    t1 = (hi - origin) / d
    tnear = np.minimum(t0, t1).max(axis=1)
    tfar = np.maximum(t0, t1).min(axis=1)
    return tfar >= np.maximum(tnear, 0.0)


def render_cloud(
    model: ArticulatedModel,
    camera: CameraPose,
    width: int = 640,
    height: int = 480,
    fov_v_deg: float = 60.0,
    pixel_subsample: int | None = None,
    rng: np.random.Generator | None = None,
) -> LabeledCloud:
    """Raycast the model into a labeled cloud, one point per hit pixel.

    pixel_subsample, when given, traces only that many rays chosen
    uniformly (seeded by rng) among the rays that pass the bounding-box
    cull; the surviving hits are a uniform random subset of the full
    render's hit pixels.
    """
    tris, part_ids = model.mesh()
    origin = camera.position()
    dirs = _pixel_rays(camera, width, height, fov_v_deg)

    lo = tris.reshape(-1, 3).min(axis=0) - 1e-9
    hi = tris.reshape(-1, 3).max(axis=0) + 1e-9
    candidate = np.flatnonzero(_bbox_hits(origin, dirs, lo, hi))
    if pixel_subsample is not None and candidate.size > pixel_subsample:
        if rng is None:
            raise ValueError("pixel_subsample requires an rng")
        candidate = np.sort(rng.choice(candidate, size=pixel_subsample, replace=False))
    dirs = dirs[candidate]

    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_tri = np.full(n_rays, -1, dtype=np.int64)
    eps = 1e-12
    for k in range(tris.shape[0]):
        v0, v1, v2 = tris[k]
        e1 = v1 - v0
        e2 = v2 - v0
        tvec = origin - v0
        qvec = np.cross(tvec, e1)
        t_num = float(np.dot(e2, qvec))
        pvec = np.cross(dirs, e2)
        det = pvec @ e1
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u = (pvec @ tvec) * inv
        v = (dirs @ qvec) * inv
        t = t_num * inv
        hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1.0 + eps) & (t > 1e-9)
        closer = hit & (t < best_t)
        best_t[closer] = t[closer]
        best_tri[closer] = k

    hits = best_tri >= 0
    if not np.any(hits):
        raise RenderError("camera sees nothing")
    t_hit = best_t[hits]
    d_hit = dirs[hits]
    tri_hit = best_tri[hits]
    points = origin + t_hit[:, None] * d_hit

    e1 = tris[tri_hit, 1] - tris[tri_hit, 0]
    e2 = tris[tri_hit, 2] - tris[tri_hit, 0]
    normals = np.cross(e1, e2)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    flip = np.einsum("ij,ij->i", normals, origin - points) < 0
    normals[flip] = -normals[flip]

    return LabeledCloud(
        points=points,
        normals=normals,
        labels=part_ids[tri_hit],
        viewpoint=origin,
        diag=bbox_diagonal(points),
    )
