"""Sparse vote accumulation and peak extraction for joint estimation.

Every tuple that survives the articulation-score filter deposits one vote
per candidate: along its (mu, nu) circle for the joint origin, along its
(mu_a, nu_a) circle for the affordable point, and along its theta cone for
the joint direction. Counts are integers, so accumulators merge exactly
regardless of how the tuples were partitioned.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .cloud import LabeledCloud, bbox
from .features import (DEFAULT_D_MIN_REL, DEFAULT_NORMAL_K, DEFAULT_SHOT_RADIUS_REL,
                       batch_tuple_features, estimate_normals, sample_tuples)
from .geometry import VoteTargets
from .model import (BatchPrediction, ModelWeights, predict_batch,
                    soft_targets, theta_bin_centers)

_Z = np.array([0.0, 0.0, 1.0])
_X = np.array([1.0, 0.0, 0.0])


class InsufficientEvidenceError(RuntimeError):
    """Raised when too few tuples pass the articulation-score filter."""


@dataclass(frozen=True)
class VoteConfig:
    step_deg: float = 2.0
    voxel_size: float = 0.01
    score_threshold: float = 0.5
    max_candidates: int = 720

    def __post_init__(self):
        if self.step_deg <= 0 or self.voxel_size <= 0:
            raise ValueError("step_deg and voxel_size must be positive")
        if not 0.0 < self.score_threshold < 1.0:
            raise ValueError("score_threshold must lie in (0, 1)")

    def candidate_angles(self) -> np.ndarray:
        n = int(np.ceil(360.0 / self.step_deg))
        if n > self.max_candidates:
            n = self.max_candidates
        return np.deg2rad(np.arange(n) * (360.0 / n if n == self.max_candidates
                                          else self.step_deg))


@dataclass
class OriginAccumulator:
    """Sparse voxel counts over an axis-aligned box (cell size in meters)."""

    lo: np.ndarray
    hi: np.ndarray
    cell: float
    counts: dict[int, int] = field(default_factory=dict)
    dropped: int = 0

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.shape = np.maximum(np.ceil((self.hi - self.lo) / self.cell), 1).astype(np.int64)

    @staticmethod
    def for_cloud(cloud: LabeledCloud, cell: float) -> "OriginAccumulator":
        lo, hi = bbox(cloud.points)
        center = (lo + hi) / 2.0
        half = np.maximum((hi - lo) / 2.0, cell) * 1.2  # inflate 20%
        return OriginAccumulator(center - half, center + half, cell)

    def _flat(self, idx: np.ndarray) -> np.ndarray:
        return (idx[:, 0] * self.shape[1] + idx[:, 1]) * self.shape[2] + idx[:, 2]

    def _unflat(self, key: int) -> np.ndarray:
        iz = key % self.shape[2]
        rem = key // self.shape[2]
        return np.array([rem // self.shape[1], rem % self.shape[1], iz], dtype=np.int64)

    def add_points(self, pts: np.ndarray) -> None:
        pts = np.atleast_2d(pts)
        idx = np.floor((pts - self.lo) / self.cell).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < self.shape), axis=1)
        self.dropped += int((~ok).sum())
        keys, reps = np.unique(self._flat(idx[ok]), return_counts=True)
        for k, r in zip(keys.tolist(), reps.tolist()):
            self.counts[k] = self.counts.get(k, 0) + r

    def total(self) -> int:
        return sum(self.counts.values())

    def compatible(self, other: "OriginAccumulator") -> bool:
        return (np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)
                and self.cell == other.cell)

    def peak(self) -> tuple[np.ndarray, int]:
        """Winning cell index and its count; ties go to the lexicographically
        smallest cell coordinate."""
        if not self.counts:
            raise ValueError("empty accumulator")
        best = min((-c, k) for k, c in self.counts.items())
        return self._unflat(best[1]), -best[0]

    def cell_center(self, idx: np.ndarray) -> np.ndarray:
        return self.lo + (np.asarray(idx) + 0.5) * self.cell


@dataclass
class DirectionAccumulator:
    """Counts over an azimuth x polar grid on the unit sphere (no folding)."""

    n_az: int = 360
    n_pol: int = 180
    counts: dict[int, int] = field(default_factory=dict)
    dropped: int = 0

    def add_dirs(self, dirs: np.ndarray) -> None:
        dirs = np.atleast_2d(dirs)
        az = np.degrees(np.arctan2(dirs[:, 1], dirs[:, 0]))  # [-180, 180]
        iaz = np.floor(az + 180.0).astype(np.int64) % self.n_az
        pol = np.degrees(np.arccos(np.clip(dirs[:, 2], -1.0, 1.0)))
        ipol = np.minimum(np.floor(pol).astype(np.int64), self.n_pol - 1)
        keys, reps = np.unique(iaz * self.n_pol + ipol, return_counts=True)
        for k, r in zip(keys.tolist(), reps.tolist()):
            self.counts[k] = self.counts.get(k, 0) + r

    def total(self) -> int:
        return sum(self.counts.values())

    def compatible(self, other: "DirectionAccumulator") -> bool:
        return self.n_az == other.n_az and self.n_pol == other.n_pol

    def cell_center(self, iaz: int, ipol: int) -> np.ndarray:
        az = np.deg2rad((iaz + 0.5) * 360.0 / self.n_az - 180.0)
        pol = np.deg2rad((ipol + 0.5) * 180.0 / self.n_pol)
        return np.array([np.sin(pol) * np.cos(az), np.sin(pol) * np.sin(az), np.cos(pol)])

    def peak(self) -> tuple[tuple[int, int], int]:
        if not self.counts:
            raise ValueError("empty accumulator")
        best = min((-c, k) for k, c in self.counts.items())
        return (best[1] // self.n_pol, best[1] % self.n_pol), -best[0]


def merge(a, b):
    """Cell-wise sum of two accumulators with identical configuration."""
    if type(a) is not type(b) or not a.compatible(b):
        raise ValueError("accumulator config mismatch")
    if isinstance(a, OriginAccumulator):
        out = OriginAccumulator(a.lo, a.hi, a.cell)
    else:
        out = DirectionAccumulator(a.n_az, a.n_pol)
    out.counts = dict(a.counts)
    for k, c in b.counts.items():
        out.counts[k] = out.counts.get(k, 0) + c
    out.dropped = a.dropped + b.dropped
    return out


def _batched_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized version of geometry.perpendicular_basis."""
    e1 = _Z - d[:, 2:3] * d
    n1 = np.linalg.norm(e1, axis=1)
    fallback = n1 < 1e-6
    if np.any(fallback):
        alt = _X - d[fallback, 0:1] * d[fallback]
        e1[fallback] = alt
        n1[fallback] = np.linalg.norm(alt, axis=1)
    e1 /= n1[:, None]
    return e1, np.cross(d, e1)


def _circles(p1, p2, mu, nu, angles):
    d = p2 - p1
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    e1, e2 = _batched_basis(d)
    foot = p1 + mu[:, None] * d
    ring = (np.cos(angles)[None, :, None] * e1[:, None, :]
            + np.sin(angles)[None, :, None] * e2[:, None, :])
    return foot[:, None, :] + nu[:, None, None] * ring


def _cones(p1, p2, theta, angles):
    d = p2 - p1
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    e1, e2 = _batched_basis(d)
    s = np.sqrt(np.maximum(0.0, 1.0 - theta * theta))
    ring = (np.cos(angles)[None, :, None] * e1[:, None, :]
            + np.sin(angles)[None, :, None] * e2[:, None, :])
    return theta[:, None, None] * d[:, None, :] + s[:, None, None] * ring


def _as_batch(predictions) -> BatchPrediction:
    if isinstance(predictions, BatchPrediction):
        return predictions
    stack = lambda f: np.stack([np.asarray(getattr(p, f)) for p in predictions])
    return BatchPrediction(*[stack(f) for f in ("mu", "nu", "theta_dist", "mu_a", "nu_a", "c_hat")])


def cast_votes(
    cloud: LabeledCloud,
    tuples: np.ndarray,
    predictions,
    config: VoteConfig,
    j: int = 0,
    apply_score_filter: bool = True,
    bounds: OriginAccumulator | None = None,
):
    """Accumulate votes for joint j from every tuple whose predicted
    articulation score clears the threshold (all tuples when the filter is
    disabled). Returns (origin, direction, affordable-point) accumulators.
    """
    pred = _as_batch(predictions)
    tuples = np.asarray(tuples)
    if pred.n != tuples.shape[0]:
        raise ValueError("predictions and tuples must be aligned")

    template = bounds if bounds is not None else OriginAccumulator.for_cloud(cloud, config.voxel_size)
    origin_acc = OriginAccumulator(template.lo, template.hi, template.cell)
    afford_acc = OriginAccumulator(template.lo, template.hi, template.cell)
    dir_acc = DirectionAccumulator()

    sel = pred.c_hat[:, j] > config.score_threshold if apply_score_filter \
        else np.ones(pred.n, dtype=bool)
    if not np.any(sel):
        return origin_acc, dir_acc, afford_acc

    p1 = cloud.points[tuples[sel, 0]]
    p2 = cloud.points[tuples[sel, 1]]
    angles = config.candidate_angles()
    centers = theta_bin_centers(pred.theta_dist.shape[-1])
    theta_star = centers[np.argmax(pred.theta_dist[sel, j, :], axis=-1)]

    origin_acc.add_points(
        _circles(p1, p2, pred.mu[sel, j], np.maximum(pred.nu[sel, j], 0.0), angles).reshape(-1, 3))
    dir_acc.add_dirs(_cones(p1, p2, theta_star, angles).reshape(-1, 3))
    afford_acc.add_points(
        _circles(p1, p2, pred.mu_a[sel, j], np.maximum(pred.nu_a[sel, j], 0.0), angles).reshape(-1, 3))
    return origin_acc, dir_acc, afford_acc


def extract_origin(acc: OriginAccumulator) -> np.ndarray:
    """Vote-weighted centroid of the 3x3x3 neighborhood around the peak cell."""
    peak_idx, _ = acc.peak()
    total = 0.0
    centroid = np.zeros(3)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                idx = peak_idx + np.array([dx, dy, dz])
                if np.any(idx < 0) or np.any(idx >= acc.shape):
                    continue
                c = acc.counts.get(int(acc._flat(idx[None])[0]), 0)
                if c:
                    total += c
                    centroid += c * acc.cell_center(idx)
    return centroid / total


def _dense_counts(acc: DirectionAccumulator) -> np.ndarray:
    dense = np.zeros((acc.n_az, acc.n_pol))
    for k, c in acc.counts.items():
        dense[k // acc.n_pol, k % acc.n_pol] = c
    return dense


def _row_window_sums(row: np.ndarray, half: int) -> np.ndarray:
    """Circular sum of `row` over a window of +-half cells per position."""
    n = row.shape[0]
    if half * 2 + 1 >= n:
        return np.full(n, row.sum())
    ext = np.concatenate([row[-half:], row, row[:half]])
    c = np.concatenate([[0.0], np.cumsum(ext)])
    return c[2 * half + 1:] - c[:n]


def extract_direction(acc: DirectionAccumulator) -> np.ndarray:
    """Refined peak direction from the spherical grid.

    The neighborhood is one cell-size (in angle) around each cell: the
    azimuth window grows as 1/sin(polar) toward the poles, where fixed-size
    grid cells degenerate to slivers, and polar neighbors across a pole map
    onto the opposite azimuth. The peak is the cell whose neighborhood
    holds the most votes (ties to the lexicographically smallest cell);
    the estimate is the vote-weighted mean of neighborhood cell centers.
    """
    if not acc.counts:
        raise ValueError("empty accumulator")
    dense = _dense_counts(acc)
    cell_deg = 180.0 / acc.n_pol
    pol_centers = (np.arange(acc.n_pol) + 0.5) * cell_deg
    halves = np.minimum(
        np.ceil(cell_deg / np.maximum(np.sin(np.deg2rad(pol_centers)), 1e-9)).astype(int),
        acc.n_az // 2)

    windowed = np.stack([_row_window_sums(dense[:, p], int(halves[p]))
                         for p in range(acc.n_pol)], axis=1)  # (n_az, n_pol)
    score = windowed.copy()
    score[:, 1:] += windowed[:, :-1]
    score[:, :-1] += windowed[:, 1:]
    # over-the-pole neighbors live on the opposite azimuth
    flip = np.roll(windowed, acc.n_az // 2, axis=0)
    score[:, 0] += flip[:, 0]
    score[:, -1] += flip[:, -1]

    iaz, ipol = np.unravel_index(int(np.argmax(score)), score.shape)
    cells = set()
    for dp in (-1, 0, 1):
        p = ipol + dp
        a0 = iaz
        if p < 0:
            p, a0 = 0, iaz + acc.n_az // 2
        elif p >= acc.n_pol:
            p, a0 = acc.n_pol - 1, iaz + acc.n_az // 2
        for da in range(-int(halves[p]), int(halves[p]) + 1):
            cells.add(((a0 + da) % acc.n_az, p))
    vec = np.zeros(3)
    for a, p in cells:
        c = dense[a, p]
        if c:
            vec += c * acc.cell_center(a, p)
    n = np.linalg.norm(vec)
    if n < 1e-12:
        return acc.cell_center(iaz, ipol)
    return vec / n


def oracle_predictions(targets: list[VoteTargets], n_bins: int = 60) -> BatchPrediction:
    """Predictions that reproduce ground-truth targets exactly (score 1
    becomes a confident positive, 0 a confident negative)."""
    mu = np.stack([t.mu for t in targets])
    nu = np.stack([t.nu for t in targets])
    theta = np.stack([t.theta for t in targets])
    mu_a = np.stack([t.mu_a for t in targets])
    nu_a = np.stack([t.nu_a for t in targets])
    scores = np.stack([t.scores for t in targets]).astype(float)
    return BatchPrediction(mu=mu, nu=nu, theta_dist=soft_targets(theta, n_bins),
                           mu_a=mu_a, nu_a=nu_a, c_hat=np.where(scores > 0, 0.99, 0.01))


@dataclass
class JointEstimate:
    kind: str
    direction: np.ndarray
    origin: np.ndarray
    afford: np.ndarray
    votes: int
    surviving_tuples: int


def infer(
    cloud: LabeledCloud,
    weights: ModelWeights,
    vote_config: VoteConfig | None = None,
    K: int = 4096,
    M: int = 5,
    seed: int = 0,
    reestimate_normals: bool = True,
    apply_score_filter: bool = True,
    min_surviving: int = 10,
) -> list[JointEstimate]:
    """Full pipeline: normals -> tuples -> features -> network -> votes -> peaks.

    Deterministic for a fixed seed. Raises InsufficientEvidenceError when a
    joint keeps fewer than min_surviving tuples after the score filter.
    """
    cfg = vote_config or VoteConfig()
    meta = weights.meta
    rng = np.random.default_rng(seed)
    work = cloud
    if reestimate_normals:
        work = cloud.with_normals(estimate_normals(
            cloud.points, cloud.viewpoint, k=int(meta.get("normal_k", DEFAULT_NORMAL_K))))
    d_min = float(meta.get("d_min_rel", DEFAULT_D_MIN_REL)) * work.diag
    radius = float(meta.get("shot_radius_rel", DEFAULT_SHOT_RADIUS_REL)) * work.diag
    tuples = sample_tuples(work, K, M, d_min, rng=rng)
    feats = batch_tuple_features(work, tuples, radius)
    pred = predict_batch(weights, feats)

    kinds = meta.get("joint_kinds", ["revolute"] * weights.config.n_joints)
    estimates = []
    for j in range(weights.config.n_joints):
        surviving = int((pred.c_hat[:, j] > cfg.score_threshold).sum()) \
            if apply_score_filter else pred.n
        if apply_score_filter and surviving < min_surviving:
            raise InsufficientEvidenceError("insufficient articulation evidence")
        origin_acc, dir_acc, afford_acc = cast_votes(
            work, tuples, pred, cfg, j, apply_score_filter=apply_score_filter)
        _, votes = origin_acc.peak()
        estimates.append(JointEstimate(
            kind=kinds[j],
            direction=extract_direction(dir_acc),
            origin=extract_origin(origin_acc),
            afford=extract_origin(afford_acc),
            votes=votes,
            surviving_tuples=surviving,
        ))
    return estimates


def save_estimates(estimates: list[JointEstimate], path) -> None:
    doc = [
        {
            "kind": e.kind,
            "u": list(map(float, e.direction)),
            "q": list(map(float, e.origin)),
            "a": list(map(float, e.afford)),
            "votes": int(e.votes),
            "surviving_tuples": int(e.surviving_tuples),
        }
        for e in estimates
    ]
    with open(path, "w", encoding="ascii") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_estimates(path) -> list[JointEstimate]:
    with open(path, "r", encoding="ascii") as f:
        doc = json.load(f)
    return [
        JointEstimate(kind=e["kind"], direction=np.array(e["u"]), origin=np.array(e["q"]),
                      afford=np.array(e["a"]), votes=e["votes"],
                      surviving_tuples=e["surviving_tuples"])
        for e in doc
    ]
