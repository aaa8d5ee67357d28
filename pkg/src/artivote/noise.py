"""Two-family point cloud noise: Gaussian distortion and box outliers.

A fraction rho_d of points is jittered with isotropic Gaussian noise whose
std is sigma_d times the clean cloud's bounding-box diagonal; a fraction
rho_o is replaced by uniform samples in a box sigma_o times the original
bounding box, centered on it, and gets label -1. Normals of touched points
are left stale on purpose; they get re-estimated before feature extraction.
"""

from dataclasses import dataclass

import numpy as np

from .cloud import LabeledCloud, bbox


@dataclass(frozen=True)
class NoiseSpec:
    rho_d: float
    sigma_d: float
    rho_o: float
    sigma_o: float

    def __post_init__(self):
        if min(self.rho_d, self.sigma_d, self.rho_o, self.sigma_o) < 0:
            raise ValueError("noise parameters must be nonnegative")
        if self.rho_d > 1 or self.rho_o > 1:
            raise ValueError("rho_d and rho_o are fractions in [0, 1]")

    @property
    def is_clean(self) -> bool:
        return self.rho_d == 0 and self.rho_o == 0


_LEVELS = (
    NoiseSpec(0.0, 0.0, 0.0, 0.0),
    NoiseSpec(0.1, 0.01, 0.001, 1.0),
    NoiseSpec(0.2, 0.01, 0.002, 1.0),
    NoiseSpec(0.1, 0.02, 0.001, 2.0),
    NoiseSpec(0.2, 0.02, 0.002, 2.0),
)


def noise_level(level: int) -> NoiseSpec:
    """The five benchmark noise levels, 0 (clean) through 4 (worst)."""
    if not 0 <= level <= 4:
        raise ValueError(f"noise level must be in 0..4, got {level}")
    return _LEVELS[level]


def apply_noise(cloud: LabeledCloud, spec: NoiseSpec, rng: np.random.Generator) -> LabeledCloud:
    """Corrupt a cloud: exactly round(rho_d*N) points distorted and
    round(rho_o*N) points replaced by outliers (disjoint sets)."""
    n = cloud.n
    n_out = int(round(spec.rho_o * n))
    n_dist = int(round(spec.rho_d * n))
    out = cloud.copy()
    if n_out == 0 and n_dist == 0:
        return out

    outlier_idx = rng.choice(n, size=n_out, replace=False)
    keep = np.setdiff1d(np.arange(n), outlier_idx, assume_unique=False)
    distort_idx = rng.choice(keep, size=n_dist, replace=False)

    if n_dist:
        sigma = spec.sigma_d * cloud.diag
        out.points[distort_idx] += rng.normal(0.0, sigma, size=(n_dist, 3))
    if n_out:
        lo, hi = bbox(cloud.points)
        center = (lo + hi) / 2.0
        half = (hi - lo) / 2.0 * spec.sigma_o
        out.points[outlier_idx] = center + rng.uniform(-1.0, 1.0, size=(n_out, 3)) * half
        out.labels[outlier_idx] = -1
    return out
