"""Batch plumbing: dataset generation, training-set assembly, perception
evaluation sweeps and manipulation trial batches.

All randomness derives from numpy SeedSequences keyed by (seed, category,
instance, state, view), so results are bit-reproducible no matter how the
work is scheduled. ARTIVOTE_THREADS caps the worker count.
"""

import json
import os
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .cloud import load_ply, save_ply, subsample
from .evalmanip import (AttachTol, GraspError, ManipOutcome, PerceptionRecord,
                        evaluate, ground_truth_estimate, plan, sample_grasps,
                        select_grasp, simulate_kinematic, TrackedPolicy)
from .features import (DEFAULT_D_MIN_REL, DEFAULT_NORMAL_K, DEFAULT_SHOT_RADIUS_REL,
                       batch_tuple_features, sample_tuples)
from .geometry import RigidTransform
from .model import (ModelConfig, TrainConfig, TrainResult, TupleDataset, train)
from .noise import apply_noise, noise_level
from .objects import ArticulatedModel, batch_tuple_targets, build_object, load_model_json, save_model_json
from .render import render_cloud, sample_view
from .voting import JointEstimate, VoteConfig, infer

CATEGORY_ORDER = ("door-cabinet", "drawer-cabinet", "microwave-like")


def resolve_workers(requested: int | None = None) -> int:
    env = os.environ.get("ARTIVOTE_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    if requested is None:
        return max(1, cap)
    return max(1, min(requested, cap))


def parallel_map(fn, tasks: list, workers: int | None = None) -> list:
    """Order-preserving map; runs inline when only one worker is allowed."""
    workers = resolve_workers(workers)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(fn, tasks)


def _seed_for(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _instance_seed(master: int, category: str, instance: int) -> int:
    cat_idx = CATEGORY_ORDER.index(category)
    ss = np.random.SeedSequence([master, cat_idx, instance])
    return int(ss.generate_state(1)[0])


@dataclass
class GenConfig:
    out: str
    categories: tuple[str, ...]
    instances: int
    seed: int
    states: int = 40
    views: int = 5
    max_points: int = 1024
    width: int = 640
    height: int = 480
    pixel_subsample: int | None = 8192


def _instance_dir(root, category: str, instance: int) -> Path:
    return Path(root) / category / f"inst_{instance:04d}"


def generate_instance(cfg: GenConfig, category: str, instance: int) -> None:
    """Build one object and render its states x views grid of clouds."""
    inst_dir = _instance_dir(cfg.out, category, instance)
    (inst_dir / "clouds").mkdir(parents=True, exist_ok=True)
    model = build_object(category, _instance_seed(cfg.seed, category, instance))
    save_model_json(model, inst_dir / "model.json")

    cat_idx = CATEGORY_ORDER.index(category)
    lo, hi = model.joints[0].limits
    states = []
    cameras = {}
    for si in range(cfg.states):
        state_rng = _seed_for(cfg.seed, cat_idx, instance, si)
        state = float(state_rng.uniform(lo, hi))
        states.append(state)
        posed = model.at_state(0, state)
        for vi in range(cfg.views):
            view_rng = _seed_for(cfg.seed, cat_idx, instance, si, vi)
            cam = sample_view(view_rng)
            cloud = render_cloud(posed, cam, cfg.width, cfg.height,
                                 pixel_subsample=cfg.pixel_subsample, rng=view_rng)
            if cfg.max_points:
                cloud = subsample(cloud, cfg.max_points, view_rng)
            save_ply(cloud, inst_dir / "clouds" / f"s{si:02d}_v{vi}.ply")
            cameras[f"s{si:02d}_v{vi}"] = [cam.azimuth_deg, cam.elevation_deg, cam.distance]
    with open(inst_dir / "states.json", "w", encoding="ascii") as f:
        json.dump({"states": states, "cameras": cameras}, f, indent=2, sort_keys=True)
        f.write("\n")


def _gen_task(args) -> None:
    cfg, category, instance = args
    generate_instance(cfg, category, instance)


def generate_dataset(cfg: GenConfig, workers: int | None = None) -> None:
    tasks = [(cfg, c, i) for c in cfg.categories for i in range(cfg.instances)]
    parallel_map(_gen_task, tasks, workers)


def instance_clouds(data_dir, category: str, instance: int) -> list[Path]:
    d = _instance_dir(data_dir, category, instance) / "clouds"
    return sorted(d.glob("s*_v*.ply"))


def load_instance(data_dir, category: str, instance: int):
    inst_dir = _instance_dir(data_dir, category, instance)
    model = load_model_json(inst_dir / "model.json")
    with open(inst_dir / "states.json", "r", encoding="ascii") as f:
        states = json.load(f)["states"]
    return model, states


def _state_index(path: Path) -> int:
    return int(path.stem[1:3])


@dataclass
class FeatureParams:
    shot_radius_rel: float = DEFAULT_SHOT_RADIUS_REL
    d_min_rel: float = DEFAULT_D_MIN_REL
    normal_k: int = DEFAULT_NORMAL_K


def _cloud_rows(model: ArticulatedModel, states: list[float], path: Path,
                tuples_per_cloud: int, rng: np.random.Generator,
                fp: FeatureParams) -> TupleDataset:
    cloud = load_ply(path)
    posed = model.at_state(0, states[_state_index(path)])
    tuples = sample_tuples(cloud, tuples_per_cloud, 5,
                           fp.d_min_rel * cloud.diag, rng=rng)
    feats = batch_tuple_features(cloud, tuples, fp.shot_radius_rel * cloud.diag)
    offsets, theta, scores = batch_tuple_targets(posed, cloud, tuples)
    return TupleDataset(
        f1=feats.f1.astype(np.float32), f2=feats.f2.astype(np.float32),
        shot=feats.shot.astype(np.float32), offsets=offsets.astype(np.float32),
        theta=theta.astype(np.float32), scores=scores,
    )


def _rows_task(args) -> TupleDataset:
    data_dir, category, instance, tuples_per_cloud, seed, fp = args
    model, states = load_instance(data_dir, category, instance)
    cat_idx = CATEGORY_ORDER.index(category)
    parts = []
    for ci, path in enumerate(instance_clouds(data_dir, category, instance)):
        rng = _seed_for(seed, 7, cat_idx, instance, ci)
        parts.append(_cloud_rows(model, states, path, tuples_per_cloud, rng, fp))
    return TupleDataset.concatenate(parts)


def build_training_set(data_dir, category: str, instances: list[int],
                       tuples_per_cloud: int, seed: int,
                       fp: FeatureParams = FeatureParams(),
                       workers: int | None = None) -> TupleDataset:
    tasks = [(data_dir, category, i, tuples_per_cloud, seed, fp) for i in instances]
    return TupleDataset.concatenate(parallel_map(_rows_task, tasks, workers))


def train_category(data_dir, category: str, instances: list[int],
                   train_cfg: TrainConfig, tuples_per_cloud: int = 24,
                   model_cfg: ModelConfig | None = None,
                   fp: FeatureParams = FeatureParams(),
                   workers: int | None = None) -> TrainResult:
    """Assemble clean training tuples for the category and fit the network."""
    dataset = build_training_set(data_dir, category, instances,
                                 tuples_per_cloud, train_cfg.seed, fp, workers)
    model0, _ = load_instance(data_dir, category, instances[0])
    cfg = model_cfg or ModelConfig(n_joints=model0.n_joints)
    result = train(dataset, train_cfg, model_config=cfg)
    result.weights.meta = {
        "category": category,
        "joint_kinds": [j.kind for j in model0.joints],
        "shot_radius_rel": fp.shot_radius_rel,
        "d_min_rel": fp.d_min_rel,
        "normal_k": fp.normal_k,
        "tuples_per_cloud": tuples_per_cloud,
    }
    return result


@dataclass
class EvalItem:
    """One evaluated cloud: the perception record plus what trials need."""

    record: PerceptionRecord
    estimate: JointEstimate
    category: str
    instance: int
    cloud_path: str
    state: float
    noise_level: int


def evaluate_cloud(data_dir, category: str, instance: int, path: Path,
                   weights, level: int, vote_cfg: VoteConfig, K: int, seed: int,
                   apply_score_filter: bool = True) -> EvalItem:
    model, states = load_instance(data_dir, category, instance)
    state = states[_state_index(path)]
    posed = model.at_state(0, state)
    cloud = load_ply(path)
    cat_idx = CATEGORY_ORDER.index(category)
    ci = instance_clouds(data_dir, category, instance).index(path)
    rng = _seed_for(seed, 11, cat_idx, instance, ci, level)
    noisy = apply_noise(cloud, noise_level(level), rng)
    est = infer(noisy, weights, vote_cfg, K=K, seed=int(rng.integers(2 ** 31)),
                reestimate_normals=(level > 0),
                apply_score_filter=apply_score_filter)[0]
    rec = evaluate(est, ground_truth_estimate(posed), noise_level=level,
                   category=category, seed=seed)
    return EvalItem(rec, est, category, instance, str(path), state, level)


def _eval_task(args) -> EvalItem:
    return evaluate_cloud(*args)


def evaluate_perception(data_dir, category: str, instances: list[int], weights,
                        levels: list[int], vote_cfg: VoteConfig, K: int, seed: int,
                        states_per_instance: int | None = None,
                        views_per_state: int | None = None,
                        apply_score_filter: bool = True,
                        workers: int | None = None) -> list[EvalItem]:
    """Sweep noise levels over held-out instances.

    states_per_instance / views_per_state thin the stored grid (evaluating
    every stored cloud at five levels is the full protocol; desk runs use a
    subset)."""
    tasks = []
    for inst in instances:
        paths = instance_clouds(data_dir, category, inst)
        if states_per_instance is not None or views_per_state is not None:
            by_state: dict[int, list[Path]] = {}
            for p in paths:
                by_state.setdefault(_state_index(p), []).append(p)
            sel_states = sorted(by_state)
            if states_per_instance is not None:
                stride = max(1, len(sel_states) // states_per_instance)
                sel_states = sel_states[::stride][:states_per_instance]
            paths = []
            for s in sel_states:
                group = sorted(by_state[s])
                if views_per_state is not None:
                    group = group[:views_per_state]
                paths.extend(group)
        for path in paths:
            for level in levels:
                tasks.append((data_dir, category, inst, path, weights, level,
                              vote_cfg, K, seed, apply_score_filter))
    return parallel_map(_eval_task, tasks, workers)


def manipulation_trial(model: ArticulatedModel, state: float, estimate: JointEstimate,
                       grasp, planner: str, rate: float, n_steps: int,
                       tol: AttachTol, direction: str = "pull") -> ManipOutcome:
    """One kinematic execution of a pull/push task from joint state `state`."""
    posed = model.at_state(0, state)
    lo, hi = model.joints[0].limits
    delta = rate * (hi - lo) * (1.0 if direction == "pull" else -1.0)
    if planner == "tracked":
        policy = TrackedPolicy(estimate, delta / n_steps, n_steps)
    else:
        policy = plan(grasp, estimate, delta, n_steps)
    try:
        out = simulate_kinematic(policy, posed, 0, delta, grasp, tol)
    except GraspError:
        out = ManipOutcome(achieved=0.0, target=delta, classification="failure",
                           detach_step=0)
    out.planner = planner
    return out


def trials_from_estimates(items: list[EvalItem], data_dir, n_trials: int, seed: int,
                          planners=("tracked", "open-loop"), direction: str = "pull",
                          n_steps: int = 50, n_grasps: int = 64,
                          tol: AttachTol = AttachTol()) -> list[ManipOutcome]:
    """Manipulation trials driven by perception estimates.

    Each trial draws a task rate in [0.1, 0.7] of the joint limit, picks an
    evaluated cloud with enough travel room, selects the stub grasp nearest
    the estimated affordable point, and runs every planner from the same
    grasp for a paired comparison.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    outcomes = []
    models = {}
    for t in range(n_trials):
        rate = float(rng.uniform(0.1, 0.7))
        order = rng.permutation(len(items))
        chosen = None
        for k in order:
            it = items[int(k)]
            key = (it.category, it.instance)
            if key not in models:
                models[key] = load_instance(data_dir, it.category, it.instance)[0]
            lo, hi = models[key].joints[0].limits
            room = (hi - it.state) if direction == "pull" else (it.state - lo)
            if room >= rate * (hi - lo):
                chosen = it
                break
        if chosen is None:
            chosen = items[int(order[0])]
            model = models[(chosen.category, chosen.instance)]
            lo, hi = model.joints[0].limits
            room = (hi - chosen.state) if direction == "pull" else (chosen.state - lo)
            rate = max(room / (hi - lo), 1e-3)
        model = models[(chosen.category, chosen.instance)]
        posed = model.at_state(0, chosen.state)
        cloud = load_ply(chosen.cloud_path)
        grasp_rng = np.random.default_rng(np.random.SeedSequence([seed, 17, t]))
        noisy = apply_noise(cloud, noise_level(chosen.noise_level), grasp_rng)
        grasp = select_grasp(sample_grasps(noisy, n_grasps, grasp_rng), chosen.estimate.afford)
        for planner in planners:
            out = manipulation_trial(model, chosen.state, chosen.estimate, grasp,
                                     planner, rate, n_steps, tol, direction)
            out.category = chosen.category
            out.noise_level = chosen.noise_level
            out.seed = seed + t
            outcomes.append(out)
    return outcomes


def perfect_trials(category: str, n_trials: int, seed: int, planners=("tracked",),
                   direction: str = "pull", n_steps: int = 50,
                   tol: AttachTol = AttachTol()) -> list[ManipOutcome]:
    """Trials with ground-truth estimates and a grasp at the true affordable
    point, over randomized objects, states and task rates."""
    outcomes = []
    for t in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 19, t]))
        model = build_object(category, int(rng.integers(2 ** 31)))
        lo, hi = model.joints[0].limits
        rate = float(rng.uniform(0.1, 0.7))
        span = (hi - lo) * (1.0 - rate)
        state = float(lo + rng.uniform(0.0, span)) if direction == "pull" \
            else float(hi - rng.uniform(0.0, span))
        posed = model.at_state(0, state)
        truth = ground_truth_estimate(posed)
        grasp_rot = np.eye(3)
        grasp = RigidTransform(grasp_rot, truth.afford)
        planner = planners[t % len(planners)] if len(planners) > 1 else planners[0]
        out = manipulation_trial(model, state, truth, grasp, planner, rate,
                                 n_steps, tol, direction)
        out.category = category
        out.seed = seed + t
        outcomes.append(out)
    return outcomes


def write_csv(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("nothing to report")
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r[c]) for c in cols))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines))
        f.write("\n")
