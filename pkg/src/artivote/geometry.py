"""Geometric primitives for point-tuple voting on articulated objects.

Everything here is a pure function of its arguments, works in SI units
(meters, radians), and uses plain float64 numpy arrays: points and
directions are shape (3,), rotations are (3, 3).
"""

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-9
DEGENERATE_BASELINE = 1e-9
# reference axis tolerance for the circle/cone in-plane basis
_Z_ALIGN_TOL = 1e-6

_Z = np.array([0.0, 0.0, 1.0])
_X = np.array([1.0, 0.0, 0.0])


class DegenerateBaselineError(ValueError):
    """Raised when a tuple's two major points (nearly) coincide."""


def as_vec3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


def normalize(v: np.ndarray) -> np.ndarray:
    v = as_vec3(v)
    n = np.linalg.norm(v)
    if n <= DEGENERATE_BASELINE:
        raise ValueError("cannot normalize a (near-)zero vector")
    return v / n


def check_unit(v: np.ndarray, name: str = "direction") -> np.ndarray:
    v = as_vec3(v)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be a unit vector")
    return v


def baseline_direction(p1, p2) -> np.ndarray:
    """Unit vector from the first major point to the second."""
    d = as_vec3(p2) - as_vec3(p1)
    n = np.linalg.norm(d)
    if n <= DEGENERATE_BASELINE:
        raise DegenerateBaselineError("degenerate tuple baseline")
    return d / n


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation acting as x -> R @ x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = as_vec3(self.translation)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.linalg.norm(R @ R.T - np.eye(3)) > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        # self after other: (self @ other).apply(x) == self.apply(other.apply(x))
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -(self.rotation.T @ self.translation))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("expected a 4x4 matrix")
        return RigidTransform(m[:3, :3], m[:3, 3])


@dataclass(frozen=True)
class JointParams:
    """One articulation joint: axis direction + a point on the axis.

    For prismatic joints the origin is still meaningful (the center of the
    movable part's front surface in its rest configuration).
    """

    kind: str
    direction: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        object.__setattr__(self, "direction", check_unit(self.direction, "joint direction"))
        object.__setattr__(self, "origin", as_vec3(self.origin))


@dataclass
class VoteTargets:
    """Per-joint voting targets for one point tuple.

    All fields are arrays over the object's J joints: along-baseline offset
    mu, perpendicular radius nu (>= 0), direction cosine theta in [-1, 1],
    the same two offsets for the affordable point, and the binary
    articulation score.
    """

    mu: np.ndarray
    nu: np.ndarray
    theta: np.ndarray
    mu_a: np.ndarray
    nu_a: np.ndarray
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.mu_a = np.atleast_1d(np.asarray(self.mu_a, dtype=float))
        self.nu_a = np.atleast_1d(np.asarray(self.nu_a, dtype=float))
        self.scores = np.atleast_1d(np.asarray(self.scores, dtype=np.int8))
        if np.any(self.nu < 0) or np.any(self.nu_a < 0):
            raise ValueError("nu and nu_a must be nonnegative")
        if np.any(np.abs(self.theta) > 1.0):
            raise ValueError("theta must lie in [-1, 1]")

    @property
    def n_joints(self) -> int:
        return self.mu.shape[0]


def joint_offsets(p1, p2, q, u) -> tuple[float, float, float]:
    """Offsets of the joint axis (u, q) relative to the baseline p1 -> p2.

    Returns (mu, nu, theta): the projection of q - p1 onto the baseline
    direction, the perpendicular distance of q from the baseline, and the
    cosine between u and the baseline (clamped to [-1, 1]).
    """
    p1 = as_vec3(p1)
    q = as_vec3(q)
    u = check_unit(u, "joint direction")
    d = baseline_direction(p1, p2)
    rel = q - p1  # difference form keeps the result translation invariant
    mu = float(np.dot(rel, d))
    nu = float(np.linalg.norm(rel - mu * d))
    theta = float(np.clip(np.dot(u, d), -1.0, 1.0))
    return mu, nu, theta


def afford_offsets(p1, p2, a) -> tuple[float, float]:
    """Offsets (mu_a, nu_a) of the affordable point a relative to the baseline."""
    p1 = as_vec3(p1)
    a = as_vec3(a)
    d = baseline_direction(p1, p2)
    rel = a - p1
    mu_a = float(np.dot(rel, d))
    nu_a = float(np.linalg.norm(rel - mu_a * d))
    return mu_a, nu_a


def perpendicular_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal basis (e1, e2) of the plane normal to d.

    e1 is the component of global +z orthogonal to d; if d is within 1e-6
    of +-z, the +x axis is used instead. e2 = d x e1.
    """
    d = as_vec3(d)
    e1 = _Z - np.dot(_Z, d) * d
    n = np.linalg.norm(e1)
    if n < _Z_ALIGN_TOL:
        e1 = _X - np.dot(_X, d) * d
        n = np.linalg.norm(e1)
    e1 = e1 / n
    e2 = np.cross(d, e1)
    return e1, e2


def _candidate_angles(step_deg: float) -> np.ndarray:
    if step_deg <= 0:
        raise ValueError("step_deg must be positive")
    n = int(np.ceil(360.0 / step_deg))
    return np.deg2rad(step_deg) * np.arange(n)


def circle_candidates(p1, p2, mu: float, nu: float, step_deg: float) -> np.ndarray:
    """Enumerate the circle of points consistent with offsets (mu, nu).

    Returns ceil(360 / step_deg) points at distance nu from the foot point
    p1 + mu * dir, all in the plane through the foot with normal dir. The
    first candidate lies along the deterministic reference perpendicular.
    """
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    p1 = as_vec3(p1)
    d = baseline_direction(p1, p2)
    e1, e2 = perpendicular_basis(d)
    ang = _candidate_angles(step_deg)
    foot = p1 + mu * d
    return foot + nu * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


def cone_candidates(p1, p2, theta: float, step_deg: float) -> np.ndarray:
    """Enumerate unit directions v with v . dir(p1, p2) == theta.

    The candidates sweep the cone of aperture arccos(theta) around the
    baseline at a constant angular interval.
    """
    if abs(theta) > 1.0:
        raise ValueError("theta must lie in [-1, 1]")
    d = baseline_direction(p1, p2)
    e1, e2 = perpendicular_basis(d)
    ang = _candidate_angles(step_deg)
    s = np.sqrt(max(0.0, 1.0 - theta * theta))
    return theta * d + s * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


def rotation_about_axis(u: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about the unit axis u."""
    u = check_unit(u)
    c, s = np.cos(angle), np.sin(angle)
    ux, uy, uz = u
    K = np.array([[0.0, -uz, uy], [uz, 0.0, -ux], [-uy, ux, 0.0]])
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(u, u)


def rigid_from_joint(kind: str, delta: float, u, q) -> RigidTransform:
    """Rigid motion produced by advancing a joint by delta.

    Revolute: rotation by delta radians about the line (u, q).
    Prismatic: translation by delta meters along u.
    """
    u = check_unit(u)
    q = as_vec3(q)
    if kind == "revolute":
        R = rotation_about_axis(u, delta)
        return RigidTransform(R, q - R @ q)
    if kind == "prismatic":
        return RigidTransform(np.eye(3), delta * u)
    raise ValueError(f"unknown joint kind {kind!r}")


def line_line_distance(u1, q1, u2, q2) -> float:
    """Minimum distance between the lines (u1, q1) and (u2, q2), in meters.

    Falls back to point-to-line distance when the lines are parallel.
    """
    u1 = check_unit(u1)
    u2 = check_unit(u2)
    q1 = as_vec3(q1)
    q2 = as_vec3(q2)
    cross = np.cross(u1, u2)
    cn = np.linalg.norm(cross)
    dq = q1 - q2
    if cn < 1e-12:
        return float(np.linalg.norm(dq - np.dot(dq, u2) * u2))
    return float(abs(np.dot(dq, cross)) / cn)


def direction_angle(u1, u2) -> float:
    """Angle between two unit directions, in degrees. Signs are not folded."""
    u1 = check_unit(u1)
    u2 = check_unit(u2)
    return float(np.degrees(np.arccos(np.clip(np.dot(u1, u2), -1.0, 1.0))))
