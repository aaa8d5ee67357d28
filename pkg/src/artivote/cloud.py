"""Labeled single-view point clouds and their on-disk PLY format.

Clouds are stored as ASCII PLY with per-vertex x y z nx ny nz label and
two header comments carrying the camera viewpoint and the bounding-box
diagonal of the original (noise-free) cloud.
"""

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class LabeledCloud:
    """N points with normals, per-point part labels and the camera origin.

    labels are part indices in {0..J}; -1 marks injected outlier points.
    diag is the bounding-box diagonal of the original clean cloud and is
    the reference scale for noise magnitudes and feature radii.
    """

    points: np.ndarray
    normals: np.ndarray
    labels: np.ndarray
    viewpoint: np.ndarray
    diag: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.normals = np.asarray(self.normals, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.viewpoint = np.asarray(self.viewpoint, dtype=float)
        n = self.points.shape[0]
        if n == 0:
            raise ValueError("cloud must contain at least one point")
        if self.points.shape != (n, 3) or self.normals.shape != (n, 3):
            raise ValueError("points and normals must be (N, 3)")
        if self.labels.shape != (n,):
            raise ValueError("labels must be (N,)")
        if not self.diag > 0:
            raise ValueError("diag must be positive")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def copy(self) -> "LabeledCloud":
        return LabeledCloud(
            self.points.copy(), self.normals.copy(), self.labels.copy(),
            self.viewpoint.copy(), self.diag,
        )

    def with_normals(self, normals: np.ndarray) -> "LabeledCloud":
        return replace(self, normals=np.asarray(normals, dtype=float))


def bbox(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=float)
    return pts.min(axis=0), pts.max(axis=0)


def bbox_diagonal(points: np.ndarray) -> float:
    lo, hi = bbox(points)
    return float(np.linalg.norm(hi - lo))


def subsample(cloud: LabeledCloud, n: int, rng: np.random.Generator) -> LabeledCloud:
    """Uniform subsample to at most n points, preserving original order."""
    if cloud.n <= n:
        return cloud.copy()
    idx = np.sort(rng.choice(cloud.n, size=n, replace=False))
    return LabeledCloud(
        cloud.points[idx], cloud.normals[idx], cloud.labels[idx],
        cloud.viewpoint.copy(), cloud.diag,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def save_ply(cloud: LabeledCloud, path) -> None:
    header = [
        "ply",
        "format ascii 1.0",
        "comment viewpoint {} {} {}".format(*[_fmt(v) for v in cloud.viewpoint]),
        f"comment diag {_fmt(cloud.diag)}",
        f"element vertex {cloud.n}",
        "property double x",
        "property double y",
        "property double z",
        "property double nx",
        "property double ny",
        "property double nz",
        "property int label",
        "end_header",
    ]
    rows = [
        " ".join([_fmt(p[0]), _fmt(p[1]), _fmt(p[2]),
                  _fmt(m[0]), _fmt(m[1]), _fmt(m[2]), str(int(l))])
        for p, m, l in zip(cloud.points, cloud.normals, cloud.labels)
    ]
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(header + rows))
        f.write("\n")


def load_ply(path) -> LabeledCloud:
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    viewpoint = None
    diag = None
    n = None
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("comment viewpoint "):
            viewpoint = np.array([float(v) for v in line.split()[2:5]])
        elif line.startswith("comment diag "):
            diag = float(line.split()[2])
        elif line.startswith("element vertex "):
            n = int(line.split()[2])
        elif line == "end_header":
            body_at = i + 1
            break
    if body_at is None or n is None:
        raise ValueError(f"{path}: malformed PLY header")
    if viewpoint is None or diag is None:
        raise ValueError(f"{path}: missing viewpoint/diag header comments")
    data = np.array(
        [line.split() for line in lines[body_at:body_at + n]], dtype=float
    )
    if data.shape != (n, 7):
        raise ValueError(f"{path}: expected {n} rows of 7 values")
    return LabeledCloud(
        points=data[:, 0:3],
        normals=data[:, 3:6],
        labels=data[:, 6].astype(np.int32),
        viewpoint=viewpoint,
        diag=diag,
    )
