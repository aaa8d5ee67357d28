"""artivote: articulation joint and affordable-point estimation from noisy
single-view point clouds via point-tuple voting, plus joint-constrained
manipulation planning."""

from .cloud import LabeledCloud, load_ply, save_ply, subsample
from .evalmanip import (AttachTol, GraspSet, ManipOutcome, PerceptionRecord,
                        TrajectoryPlan, evaluate, ground_truth_estimate, plan,
                        plan_tracked, sample_grasps, select_grasp,
                        simulate_kinematic)
from .features import (TupleSample, estimate_normals, sample_tuples,
                       shot_descriptor, tuple_features)
from .geometry import (JointParams, RigidTransform, VoteTargets, afford_offsets,
                       circle_candidates, cone_candidates, direction_angle,
                       joint_offsets, line_line_distance, rigid_from_joint)
from .model import (ModelConfig, ModelWeights, Prediction, TrainConfig,
                    batch_loss, forward, grad_check, load_weights, save_weights,
                    soft_target, train, tuple_vote_loss)
from .noise import NoiseSpec, apply_noise, noise_level
from .objects import ArticulatedModel, build_object, load_model_json, save_model_json, tuple_targets
from .render import CameraPose, render_cloud, sample_view
from .voting import (DirectionAccumulator, JointEstimate, OriginAccumulator,
                     VoteConfig, cast_votes, extract_direction, extract_origin,
                     infer, merge)

__version__ = "0.1.0"
