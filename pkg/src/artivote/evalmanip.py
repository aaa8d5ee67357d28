"""Perception metrics, grasp selection, joint-constrained planning and an
ideal-kinematic execution model.

Execution assumes the gripper is rigidly attached to the movable part: at
every step the commanded pose is projected onto the one-parameter manifold
of poses reachable through the true joint, and the projection residual is
the tracking error. Exceeding the attach tolerance detaches the gripper;
the part then stays at the last successfully tracked state.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .cloud import LabeledCloud
from .geometry import (JointParams, RigidTransform, direction_angle,
                       line_line_distance, rigid_from_joint)
from .objects import ArticulatedModel
from .voting import JointEstimate


class GraspError(ValueError):
    """Raised when a grasp cannot attach to the movable part."""


@dataclass
class PerceptionRecord:
    """Estimation errors in evaluation units (centimeters / degrees)."""

    origin_cm: float
    direction_deg: float
    afford_cm: float
    noise_level: int = 0
    category: str = ""
    seed: int = 0


def ground_truth_estimate(model: ArticulatedModel, j: int = 0) -> JointEstimate:
    joint = model.joints[j]
    return JointEstimate(kind=joint.kind, direction=joint.direction.copy(),
                         origin=joint.origin.copy(), afford=model.affordable_point(j),
                         votes=0, surviving_tuples=0)


def evaluate(estimate: JointEstimate, truth: JointEstimate,
             noise_level: int = 0, category: str = "", seed: int = 0) -> PerceptionRecord:
    """Perception errors of an estimate against ground truth.

    Revolute origin error is the line-to-line distance (invariant along the
    axis); prismatic origin error is the plain L2 distance. Meters convert
    to centimeters here, at the evaluation boundary.
    """
    if estimate.kind != truth.kind:
        raise ValueError(f"joint kind mismatch: {estimate.kind} vs {truth.kind}")
    if truth.kind == "revolute":
        origin_m = line_line_distance(estimate.direction, estimate.origin,
                                      truth.direction, truth.origin)
    else:
        origin_m = float(np.linalg.norm(estimate.origin - truth.origin))
    return PerceptionRecord(
        origin_cm=100.0 * origin_m,
        direction_deg=direction_angle(estimate.direction, truth.direction),
        afford_cm=100.0 * float(np.linalg.norm(estimate.afford - truth.afford)),
        noise_level=noise_level, category=category, seed=seed,
    )


@dataclass
class GraspCandidate:
    pose: RigidTransform
    score: float


@dataclass
class GraspSet:
    candidates: list[GraspCandidate]

    def __len__(self) -> int:
        return len(self.candidates)


def sample_grasps(cloud: LabeledCloud, n: int, rng: np.random.Generator) -> GraspSet:
    """Stub grasp proposer: antipodal-style poses on random surface points,
    approach axis opposite the surface normal, random scores."""
    idx = rng.integers(0, cloud.n, size=n)
    cands = []
    for i in idx:
        approach = -cloud.normals[i]
        approach = approach / np.linalg.norm(approach)
        ref = np.array([0.0, 0.0, 1.0])
        if abs(np.dot(ref, approach)) > 1.0 - 1e-6:
            ref = np.array([1.0, 0.0, 0.0])
        x = ref - np.dot(ref, approach) * approach
        x /= np.linalg.norm(x)
        y = np.cross(approach, x)
        R = np.column_stack([x, y, approach])
        cands.append(GraspCandidate(RigidTransform(R, cloud.points[i]), float(rng.random())))
    return GraspSet(cands)


def select_grasp(grasps: GraspSet, a_hat: np.ndarray) -> RigidTransform:
    """Grasp whose position is closest to the affordable point; ties go to
    the higher score, then the lower index."""
    if len(grasps) == 0:
        raise ValueError("empty grasp set")
    a_hat = np.asarray(a_hat, dtype=float)
    best = min(
        (float(np.linalg.norm(c.pose.translation - a_hat)), -c.score, i)
        for i, c in enumerate(grasps.candidates)
    )
    return grasps.candidates[best[2]].pose


def save_grasps(grasps: GraspSet, path) -> None:
    doc = [{"pose": [list(map(float, row)) for row in c.pose.as_matrix()],
            "score": float(c.score)} for c in grasps.candidates]
    with open(path, "w", encoding="ascii") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_grasps(path) -> GraspSet:
    with open(path, "r", encoding="ascii") as f:
        doc = json.load(f)
    return GraspSet([GraspCandidate(RigidTransform.from_matrix(np.array(g["pose"])),
                                    float(g["score"])) for g in doc])


@dataclass
class TrajectoryPlan:
    """Open-loop waypoints: each consecutive pair is related by exactly one
    per-step joint motion of the (estimated) joint."""

    waypoints: list[RigidTransform]
    delta: float
    joint: JointParams


def plan(T0: RigidTransform, estimate: JointEstimate, total_delta: float,
         n_steps: int) -> TrajectoryPlan:
    """Precompute n_steps+1 gripper poses by repeatedly advancing the
    estimated joint by total_delta / n_steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    delta = total_delta / n_steps
    step = rigid_from_joint(estimate.kind, delta, estimate.direction, estimate.origin)
    waypoints = [T0]
    for _ in range(n_steps):
        waypoints.append(step @ waypoints[-1])
    return TrajectoryPlan(waypoints, delta,
                          JointParams(estimate.kind, estimate.direction, estimate.origin))


def plan_tracked(T_t: RigidTransform, estimate: JointEstimate, delta: float) -> RigidTransform:
    """One-step target computed from the current (sensed) gripper pose."""
    return rigid_from_joint(estimate.kind, delta, estimate.direction, estimate.origin) @ T_t


@dataclass
class TrackedPolicy:
    """Per-step re-constrained policy: each command starts from the pose the
    gripper actually reached, unlike a precomputed TrajectoryPlan."""

    estimate: JointEstimate
    delta: float
    n_steps: int


@dataclass
class AttachTol:
    pos: float = 0.02       # meters
    ang_deg: float = 10.0


@dataclass
class ManipOutcome:
    achieved: float     # signed joint-state change, rad or m
    target: float
    classification: str  # success | half-success | failure
    detach_step: int | None = None
    category: str = ""
    noise_level: int = 0
    planner: str = ""
    seed: int = 0

    @property
    def ratio(self) -> float:
        return self.achieved / self.target if self.target else 0.0


def _rotation_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _project_state(joint, s0: float, grasp0: RigidTransform, x: np.ndarray,
                   s_prev: float) -> float:
    """Joint state whose attached-gripper position best matches x."""
    u, q = joint.direction, joint.origin
    if joint.kind == "prismatic":
        s = s0 + float(np.dot(x - grasp0.translation, u))
    else:
        w0 = grasp0.translation - q
        w0p = w0 - np.dot(w0, u) * u
        wxp = (x - q) - np.dot(x - q, u) * u
        if np.linalg.norm(w0p) < 1e-9 or np.linalg.norm(wxp) < 1e-9:
            return s_prev
        s = s0 + float(np.arctan2(np.dot(u, np.cross(w0p, wxp)), np.dot(w0p, wxp)))
    lo, hi = joint.limits
    return float(np.clip(s, lo, hi))


def simulate_kinematic(policy, model: ArticulatedModel, j: int, target_delta: float,
                       grasp: RigidTransform, tol: AttachTol = AttachTol()) -> ManipOutcome:
    """Execute a TrajectoryPlan or TrackedPolicy against the true joint.

    Classification: success when the achieved state change covers at least
    0.85 of the target; half-success when the gripper detached after at
    least 0.5 of the target; failure otherwise.
    """
    joint = model.joints[j]
    s0 = joint.state
    if float(model.surface_distance(grasp.translation[None], part=j + 1)[0]) > tol.pos:
        raise GraspError("grasp not attached at start")

    tracked = isinstance(policy, TrackedPolicy)
    if tracked:
        n_steps = policy.n_steps
    else:
        commands = policy.waypoints[1:]
        n_steps = len(commands)

    ang_tol = np.deg2rad(tol.ang_deg)
    s = s0
    current = grasp
    detach_step = None
    for t in range(n_steps):
        cmd = plan_tracked(current, policy.estimate, policy.delta) if tracked else commands[t]
        s_new = _project_state(joint, s0, grasp, cmd.translation, s)
        reached = rigid_from_joint(joint.kind, s_new - s0, joint.direction, joint.origin) @ grasp
        pos_err = float(np.linalg.norm(cmd.translation - reached.translation))
        ang_err = _rotation_angle(cmd.rotation, reached.rotation)
        if pos_err > tol.pos or ang_err > ang_tol:
            detach_step = t
            break
        s = s_new
        current = reached

    achieved = s - s0
    ratio = achieved / target_delta if target_delta else 0.0
    if ratio >= 0.85:
        cls = "success"
    elif detach_step is not None and ratio >= 0.5:
        cls = "half-success"
    else:
        cls = "failure"
    return ManipOutcome(achieved=achieved, target=target_delta, classification=cls,
                        detach_step=detach_step)


def records_to_jsonl(records, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        for r in records:
            f.write(json.dumps(asdict(r), sort_keys=True))
            f.write("\n")


def jsonl_to_dicts(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def aggregate_perception(rows: list[dict]) -> list[dict]:
    """Mean/std of each error metric per noise level (the sweep layout)."""
    levels = sorted({r["noise_level"] for r in rows})
    table = []
    for lvl in levels:
        sub = [r for r in rows if r["noise_level"] == lvl]
        entry = {"noise_level": lvl, "count": len(sub)}
        for key in ("origin_cm", "direction_deg", "afford_cm"):
            vals = np.array([r[key] for r in sub])
            entry[f"{key}_mean"] = float(vals.mean())
            entry[f"{key}_std"] = float(vals.std())
        table.append(entry)
    return table


def aggregate_manipulation(rows: list[dict]) -> list[dict]:
    levels = sorted({(r["noise_level"], r.get("planner", "")) for r in rows})
    table = []
    for lvl, planner in levels:
        sub = [r for r in rows if r["noise_level"] == lvl and r.get("planner", "") == planner]
        n = len(sub)
        succ = sum(r["classification"] == "success" for r in sub)
        half = sum(r["classification"] == "half-success" for r in sub)
        table.append({
            "noise_level": lvl, "planner": planner, "count": n,
            "success_rate": succ / n if n else 0.0,
            "half_success_rate": half / n if n else 0.0,
            "failure_rate": (n - succ - half) / n if n else 0.0,
        })
    return table
