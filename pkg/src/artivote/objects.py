"""Procedural articulated objects assembled from axis-aligned boxes.

Part 0 is the static base; part j (j >= 1) is the movable part driven by
joint j. Boxes are stored in the rest configuration; setting a joint state
moves its part by the corresponding rigid motion. The object's front faces
+x, up is +z.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from .cloud import LabeledCloud
from .geometry import JointParams, RigidTransform, VoteTargets, afford_offsets, joint_offsets, rigid_from_joint

CATEGORIES = ("door-cabinet", "drawer-cabinet", "microwave-like")

# Box faces as corner-index quads; corner i has coords from the bit pattern
# (i&1 -> x, i&2 -> y, i&4 -> z), quads wound so the outward normal is right.
_FACE_QUADS = (
    (0, 4, 6, 2),  # -x
    (1, 3, 7, 5),  # +x
    (0, 1, 5, 4),  # -y
    (2, 6, 7, 3),  # +y
    (0, 2, 3, 1),  # -z
    (4, 5, 7, 6),  # +z
)


@dataclass(frozen=True)
class BoxPart:
    """Axis-aligned box in the rest frame: center and full side lengths."""

    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=float))
        if np.any(self.size <= 0):
            raise ValueError("box sides must be positive")

    def corners(self) -> np.ndarray:
        h = self.size / 2.0
        bits = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)])
        return self.center + (2.0 * bits - 1.0) * h

    def triangles(self) -> np.ndarray:
        """(12, 3, 3) triangle vertices with outward winding."""
        c = self.corners()
        tris = []
        for a, b, cc, d in _FACE_QUADS:
            tris.append(c[[a, b, cc]])
            tris.append(c[[a, cc, d]])
        return np.stack(tris)

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the box surface (0 on the surface)."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        h = self.size / 2.0
        d = np.abs(p) - h
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(np.max(d, axis=1), 0.0)
        return outside - inside


@dataclass(frozen=True)
class Joint:
    """Joint parameters plus motion limits and the current state."""

    params: JointParams
    limits: tuple[float, float]
    state: float

    def __post_init__(self):
        lo, hi = self.limits
        if not lo <= self.state <= hi:
            raise ValueError(f"joint state {self.state} outside limits [{lo}, {hi}]")

    @property
    def kind(self) -> str:
        return self.params.kind

    @property
    def direction(self) -> np.ndarray:
        return self.params.direction

    @property
    def origin(self) -> np.ndarray:
        return self.params.origin

    def transform(self, state: float | None = None) -> RigidTransform:
        s = self.state if state is None else state
        return rigid_from_joint(self.kind, s, self.direction, self.origin)


@dataclass(frozen=True)
class ArticulatedModel:
    """parts[i] is the tuple of boxes composing part i (0 = base); part j
    moves with joint j for j >= 1."""

    category: str
    parts: tuple[tuple[BoxPart, ...], ...]
    joints: tuple[Joint, ...]
    affordable_points_rest: tuple[np.ndarray, ...]
    scale: float
    seed: int

    def __post_init__(self):
        if len(self.parts) != len(self.joints) + 1:
            raise ValueError("need exactly one movable part per joint plus the base")
        if len(self.affordable_points_rest) != len(self.joints):
            raise ValueError("need one affordable point per joint")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def at_state(self, j: int, state: float) -> "ArticulatedModel":
        joints = list(self.joints)
        joints[j] = replace(joints[j], state=state)
        return replace(self, joints=tuple(joints))

    def part_transform(self, part: int, state: float | None = None) -> RigidTransform:
        if part == 0:
            return RigidTransform.identity()
        return self.joints[part - 1].transform(state)

    def affordable_point(self, j: int) -> np.ndarray:
        """Affordable point of joint j in the current configuration."""
        return self.joints[j].transform().apply(self.affordable_points_rest[j])

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """World-space triangles (T, 3, 3) and their part indices (T,)."""
        tris = []
        parts = []
        for i, boxes in enumerate(self.parts):
            tf = self.part_transform(i)
            for box in boxes:
                t = box.triangles()
                if i > 0:
                    t = t @ tf.rotation.T + tf.translation
                tris.append(t)
                parts.append(np.full(len(t), i, dtype=np.int32))
        return np.concatenate(tris), np.concatenate(parts)

    def surface_distance(self, points: np.ndarray, part: int | None = None) -> np.ndarray:
        """Distance to the nearest surface of `part` (or of any part) in the
        current configuration."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        best = np.full(pts.shape[0], np.inf)
        which = range(len(self.parts)) if part is None else [part]
        for i in which:
            local = self.part_transform(i).inverse().apply(pts)
            for box in self.parts[i]:
                best = np.minimum(best, box.surface_distance(local))
        return best


def build_object(category: str, seed: int) -> ArticulatedModel:
    """Deterministically generate one articulated object of the category."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    rng = np.random.default_rng(seed)
    scale = float(rng.uniform(0.8, 1.1))
    t = 0.02 * scale  # panel thickness

    if category == "door-cabinet":
        w = float(rng.uniform(0.32, 0.46)) * scale
        h = float(rng.uniform(0.42, 0.60)) * scale
        d = float(rng.uniform(0.24, 0.34)) * scale
        body = BoxPart(center=(-t / 2.0, 0.0, 0.0), size=(d - t, w, h))
        # full-width door with a top rail gap, so some base always shows frontally
        gap = float(rng.uniform(0.08, 0.15)) * h
        zc = -gap / 2.0
        door = BoxPart(center=((d - t) / 2.0, 0.0, zc), size=(t, w, h - gap))
        # hinge side is a category constant (category-level generalization);
        # positive state swings the door outward (+x)
        hinge_side = -1.0
        hinge_y = hinge_side * w / 2.0
        u = np.array([0.0, 0.0, hinge_side])
        q = np.array([(d - t) / 2.0, hinge_y, zc])
        joint = Joint(JointParams("revolute", u, q), (0.0, np.pi / 2.0), 0.0)
        afford = np.array([(d - t) / 2.0, -hinge_y, zc])
        # bar handle near the free edge; breaks the left/right mirror symmetry
        handle_y = hinge_side * (0.07 * w - w / 2.0)
        handle = BoxPart(center=(d / 2.0 + 0.015 * scale, handle_y, zc),
                         size=(0.03 * scale, 0.024 * scale, 0.45 * (h - gap)))
        return ArticulatedModel(category, ((body,), (door, handle)), (joint,),
                                (afford,), scale, seed)

    if category == "microwave-like":
        w = float(rng.uniform(0.40, 0.52)) * scale
        h = float(rng.uniform(0.28, 0.38)) * scale
        d = float(rng.uniform(0.28, 0.38)) * scale
        body = BoxPart(center=(-t / 2.0, 0.0, 0.0), size=(d - t, w, h))
        # door covers part of the front; the recessed body face shows around it
        dw = float(rng.uniform(0.68, 0.80)) * w
        dh = float(rng.uniform(0.80, 0.90)) * h
        door_y = -(w - dw) / 2.0  # flush against the left, panel strip on the right
        door = BoxPart(center=((d - t) / 2.0, door_y, 0.0), size=(t, dw, dh))
        hinge_y = door_y - dw / 2.0
        u = np.array([0.0, 0.0, -1.0])  # hinge on the -y edge opens outward
        q = np.array([(d - t) / 2.0, hinge_y, 0.0])
        joint = Joint(JointParams("revolute", u, q), (0.0, np.pi / 2.0), 0.0)
        free_y = door_y + dw / 2.0
        afford = np.array([(d - t) / 2.0, free_y, 0.0])
        handle = BoxPart(center=(d / 2.0 + 0.015 * scale, free_y - 0.06 * dw, 0.0),
                         size=(0.03 * scale, 0.024 * scale, 0.6 * dh))
        return ArticulatedModel(category, ((body,), (door, handle)), (joint,),
                                (afford,), scale, seed)

    # drawer-cabinet
    w = float(rng.uniform(0.32, 0.45)) * scale
    h = float(rng.uniform(0.45, 0.60)) * scale
    d = float(rng.uniform(0.30, 0.40)) * scale
    body = BoxPart(center=(-t / 2.0, 0.0, 0.0), size=(d - t, w, h))
    row = int(rng.integers(0, 3))
    zc = (row - 1) * h / 3.0
    dh = 0.28 * h
    dd = 0.90 * d
    drawer = BoxPart(center=(d / 2.0 - dd / 2.0, 0.0, zc), size=(dd, 0.94 * w, dh))
    u = np.array([1.0, 0.0, 0.0])
    q = np.array([d / 2.0, 0.0, zc])  # center of the drawer front at rest
    joint = Joint(JointParams("prismatic", u, q), (0.0, 0.3 * d), 0.0)
    afford = q.copy()
    handle = BoxPart(center=(d / 2.0 + 0.015 * scale, 0.0, zc),
                     size=(0.03 * scale, 0.5 * w, 0.026 * scale))
    return ArticulatedModel(category, ((body,), (drawer, handle)), (joint,),
                            (afford,), scale, seed)


def tuple_targets(model: ArticulatedModel, cloud: LabeledCloud, indices) -> VoteTargets:
    """Ground-truth voting targets of one point tuple against every joint.

    The articulation score of joint j is 1 exactly when the two major
    points lie one on the base and one on part j (in either order).
    """
    idx = np.asarray(indices)
    p1 = cloud.points[idx[0]]
    p2 = cloud.points[idx[1]]
    l1 = int(cloud.labels[idx[0]])
    l2 = int(cloud.labels[idx[1]])
    J = model.n_joints
    mu = np.zeros(J)
    nu = np.zeros(J)
    theta = np.zeros(J)
    mu_a = np.zeros(J)
    nu_a = np.zeros(J)
    scores = np.zeros(J, dtype=np.int8)
    for j, joint in enumerate(model.joints):
        mu[j], nu[j], theta[j] = joint_offsets(p1, p2, joint.origin, joint.direction)
        mu_a[j], nu_a[j] = afford_offsets(p1, p2, model.affordable_point(j))
        scores[j] = 1 if {l1, l2} == {0, j + 1} else 0
    return VoteTargets(mu, nu, theta, mu_a, nu_a, scores)


def batch_tuple_targets(model: ArticulatedModel, cloud: LabeledCloud, tuples: np.ndarray):
    """Vectorized tuple_targets for K tuples.

    Returns (offsets, theta, scores): offsets is (K, J, 4) with columns
    (mu, nu, mu_a, nu_a), theta is (K, J), scores is (K, J) int8.
    """
    tuples = np.asarray(tuples)
    k = tuples.shape[0]
    p1 = cloud.points[tuples[:, 0]]
    p2 = cloud.points[tuples[:, 1]]
    l1 = cloud.labels[tuples[:, 0]]
    l2 = cloud.labels[tuples[:, 1]]
    d = p2 - p1
    d = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-12)
    J = model.n_joints
    offsets = np.zeros((k, J, 4))
    theta = np.zeros((k, J))
    scores = np.zeros((k, J), dtype=np.int8)
    for j, joint in enumerate(model.joints):
        rel_q = joint.origin - p1
        mu = np.einsum("kd,kd->k", rel_q, d)
        nu = np.linalg.norm(rel_q - mu[:, None] * d, axis=1)
        a = model.affordable_point(j)
        rel_a = a - p1
        mu_a = np.einsum("kd,kd->k", rel_a, d)
        nu_a = np.linalg.norm(rel_a - mu_a[:, None] * d, axis=1)
        offsets[:, j, 0] = mu
        offsets[:, j, 1] = nu
        offsets[:, j, 2] = mu_a
        offsets[:, j, 3] = nu_a
        theta[:, j] = np.clip(d @ joint.direction, -1.0, 1.0)
        scores[:, j] = ((np.minimum(l1, l2) == 0) & (np.maximum(l1, l2) == j + 1)).astype(np.int8)
    return offsets, theta, scores


def save_model_json(model: ArticulatedModel, path) -> None:
    doc = {
        "category": model.category,
        "scale": model.scale,
        "seed": model.seed,
        "parts": [
            [{"center": list(map(float, b.center)), "size": list(map(float, b.size))}
             for b in part]
            for part in model.parts
        ],
        "joints": [
            {
                "kind": j.kind,
                "direction": list(map(float, j.direction)),
                "origin": list(map(float, j.origin)),
                "limits": [float(j.limits[0]), float(j.limits[1])],
                "state": float(j.state),
            }
            for j in model.joints
        ],
        "affordable_points": [list(map(float, a)) for a in model.affordable_points_rest],
    }
    with open(path, "w", encoding="ascii") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model_json(path) -> ArticulatedModel:
    with open(path, "r", encoding="ascii") as f:
        doc = json.load(f)
    parts = tuple(
        tuple(BoxPart(np.array(b["center"]), np.array(b["size"])) for b in part)
        for part in doc["parts"]
    )
    joints = tuple(
        Joint(
            JointParams(j["kind"], np.array(j["direction"]), np.array(j["origin"])),
            (j["limits"][0], j["limits"][1]),
            j["state"],
        )
        for j in doc["joints"]
    )
    affords = tuple(np.array(a) for a in doc["affordable_points"])
    return ArticulatedModel(doc["category"], parts, joints, affords, doc["scale"], doc["seed"])
