import numpy as np
import pytest

from artivote.cloud import subsample
from artivote.evalmanip import ground_truth_estimate
from artivote.geometry import VoteTargets, direction_angle
from artivote.model import BatchPrediction, soft_targets
from artivote.objects import batch_tuple_targets, build_object
from artivote.render import sample_view, render_cloud
from artivote.features import sample_tuples
from artivote.voting import (DirectionAccumulator, OriginAccumulator, VoteConfig,
                             cast_votes, extract_direction, extract_origin, merge,
                             oracle_predictions)


def oracle_setup(cat="door-cabinet", seed=1, n_tuples=384, state_frac=0.5):
    rng = np.random.default_rng(seed)
    model = build_object(cat, seed)
    lo, hi = model.joints[0].limits
    model = model.at_state(0, lo + state_frac * (hi - lo))
    cloud = subsample(render_cloud(model, sample_view(rng), pixel_subsample=6000, rng=rng),
                      2048, rng)
    tuples = sample_tuples(cloud, n_tuples, 5, rng=rng)
    offsets, theta, scores = batch_tuple_targets(model, cloud, tuples)
    targets = [VoteTargets(offsets[i, :, 0], offsets[i, :, 1], theta[i],
                           offsets[i, :, 2], offsets[i, :, 3], scores[i])
               for i in range(n_tuples)]
    return model, cloud, tuples, targets


class TestAccumulators:
    def test_origin_counts_and_bounds(self):
        acc = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        acc.add_points(np.array([[0.05, 0.05, 0.05], [0.05, 0.04, 0.06], [2.0, 0, 0]]))
        assert acc.total() == 2
        assert acc.dropped == 1

    def test_origin_peak_tie_break(self):
        acc = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        acc.add_points(np.array([[0.95, 0.95, 0.95], [0.95, 0.95, 0.95],
                                 [0.05, 0.05, 0.05], [0.05, 0.05, 0.05]]))
        idx, count = acc.peak()
        assert count == 2
        assert np.array_equal(idx, [0, 0, 0])  # lexicographically smallest wins

    def test_merge_identity_and_commutativity(self):
        a = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        b = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        empty = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        rng = np.random.default_rng(0)
        a.add_points(rng.random((50, 3)))
        b.add_points(rng.random((30, 3)))
        assert merge(a, empty).counts == a.counts
        ab = merge(a, b)
        ba = merge(b, a)
        assert ab.counts == ba.counts
        assert ab.total() == 80

    def test_merge_config_mismatch(self):
        a = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        b = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.2)
        with pytest.raises(ValueError, match="config mismatch"):
            merge(a, b)
        with pytest.raises(ValueError, match="config mismatch"):
            merge(a, DirectionAccumulator())

    def test_direction_binning_no_folding(self):
        acc = DirectionAccumulator()
        acc.add_dirs(np.array([[0, 0, 1.0], [0, 0, -1.0]]))
        assert acc.total() == 2
        assert len(acc.counts) == 2  # antipodes land in distinct cells

    def test_extract_origin_single_vote(self):
        acc = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        acc.add_points(np.array([[0.32, 0.55, 0.71]]))
        est = extract_origin(acc)
        assert np.allclose(est, [0.35, 0.55, 0.75])  # center of the voted cell

    def test_extract_origin_dominant_cell(self):
        acc = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        acc.add_points(np.tile([0.15, 0.15, 0.15], (10, 1)))
        acc.add_points(np.tile([0.55, 0.55, 0.55], (3, 1)))
        est = extract_origin(acc)
        assert np.linalg.norm(est - [0.15, 0.15, 0.15]) < 0.05

    def test_extract_origin_empty(self):
        acc = OriginAccumulator(lo=np.zeros(3), hi=np.ones(3), cell=0.1)
        with pytest.raises(ValueError, match="empty accumulator"):
            extract_origin(acc)

    def test_extract_direction_single_vote(self):
        acc = DirectionAccumulator()
        v = np.array([1.0, 2.0, 3.0])
        v /= np.linalg.norm(v)
        acc.add_dirs(v[None])
        assert direction_angle(extract_direction(acc), v) < 1.0

    def test_extract_direction_dominant(self):
        acc = DirectionAccumulator()
        a = np.array([1.0, 0, 0])
        b = np.array([0, 1.0, 0])
        acc.add_dirs(np.tile(a, (9, 1)))
        acc.add_dirs(np.tile(b, (2, 1)))
        assert direction_angle(extract_direction(acc), a) < 1.0

    def test_extract_direction_at_pole(self):
        # votes scattered within a degree of +z across all azimuths
        rng = np.random.default_rng(1)
        acc = DirectionAccumulator()
        for _ in range(200):
            ang = rng.uniform(0, np.deg2rad(1.0))
            az = rng.uniform(0, 2 * np.pi)
            acc.add_dirs(np.array([[np.sin(ang) * np.cos(az),
                                    np.sin(ang) * np.sin(az), np.cos(ang)]]))
        # decoys stronger than any single pole sliver cell
        acc.add_dirs(np.tile([1.0, 0, 0], (20, 1)))
        est = extract_direction(acc)
        assert direction_angle(est, np.array([0, 0, 1.0])) < 1.5

    def test_extract_direction_empty(self):
        with pytest.raises(ValueError, match="empty accumulator"):
            extract_direction(DirectionAccumulator())


class TestCastVotes:
    def test_all_filtered_empty(self):
        model, cloud, tuples, targets = oracle_setup(n_tuples=64)
        pred = oracle_predictions(targets)
        pred.c_hat[:] = 0.3
        o, d, a = cast_votes(cloud, tuples, pred, VoteConfig())
        assert o.total() == 0 and d.total() == 0 and a.total() == 0

    def test_vote_counting_identity(self):
        model, cloud, tuples, targets = oracle_setup(n_tuples=128)
        pred = oracle_predictions(targets)
        cfg = VoteConfig(step_deg=5.0)
        o, d, a = cast_votes(cloud, tuples, pred, cfg)
        kept = int((pred.c_hat[:, 0] > cfg.score_threshold).sum())
        n_cand = int(np.ceil(360 / cfg.step_deg))
        assert o.total() + o.dropped == kept * n_cand
        assert a.total() + a.dropped == kept * n_cand
        assert d.total() == kept * n_cand  # directions are never out of bounds

    def test_negative_nu_clamped(self):
        model, cloud, tuples, targets = oracle_setup(n_tuples=16)
        pred = oracle_predictions(targets)
        pred.nu[:] = -0.05
        o, _, _ = cast_votes(cloud, tuples, pred, VoteConfig())
        assert o.total() > 0  # circles collapse to foot points, still in bounds

    def test_misaligned_inputs(self):
        model, cloud, tuples, targets = oracle_setup(n_tuples=16)
        pred = oracle_predictions(targets[:8])
        with pytest.raises(ValueError, match="aligned"):
            cast_votes(cloud, tuples, pred, VoteConfig())

    def test_filter_disabled_votes_everything(self):
        model, cloud, tuples, targets = oracle_setup(n_tuples=64)
        pred = oracle_predictions(targets)
        o, _, _ = cast_votes(cloud, tuples, pred, VoteConfig(step_deg=10.0),
                             apply_score_filter=False)
        assert o.total() + o.dropped == 64 * 36


class TestOracleVoting:
    @pytest.mark.parametrize("cat", ["door-cabinet", "drawer-cabinet", "microwave-like"])
    def test_oracle_recovers_joint(self, cat):
        model, cloud, tuples, targets = oracle_setup(cat, seed=3)
        pred = oracle_predictions(targets)
        cfg = VoteConfig(step_deg=1.0, voxel_size=0.01)
        o, d, a = cast_votes(cloud, tuples, pred, cfg)
        truth = ground_truth_estimate(model)
        assert np.linalg.norm(extract_origin(o) - truth.origin) < 0.01
        assert direction_angle(extract_direction(d), truth.direction) < 2.0
        assert np.linalg.norm(extract_origin(a) - truth.afford) < 0.01

    def test_outlier_tuples_do_not_move_estimate(self):
        # oracle tuples plus arbitrarily many garbage tuples with score 0
        model, cloud, tuples, targets = oracle_setup(seed=4, n_tuples=256)
        pred = oracle_predictions(targets)
        cfg = VoteConfig(step_deg=2.0, voxel_size=0.01)
        o1, d1, a1 = cast_votes(cloud, tuples, pred, cfg)

        rng = np.random.default_rng(0)
        n_junk = 512
        junk_tuples = rng.integers(0, cloud.n, size=(n_junk, 5))
        all_tuples = np.vstack([tuples, junk_tuples])
        junk = BatchPrediction(
            mu=np.vstack([pred.mu, rng.normal(0, 1, (n_junk, 1))]),
            nu=np.vstack([pred.nu, rng.random((n_junk, 1))]),
            theta_dist=np.vstack([pred.theta_dist,
                                  soft_targets(rng.uniform(-1, 1, (n_junk, 1)), 60)]),
            mu_a=np.vstack([pred.mu_a, rng.normal(0, 1, (n_junk, 1))]),
            nu_a=np.vstack([pred.nu_a, rng.random((n_junk, 1))]),
            c_hat=np.vstack([pred.c_hat, np.full((n_junk, 1), 0.01)]),
        )
        o2, d2, a2 = cast_votes(cloud, all_tuples, junk, cfg)
        assert o1.counts == o2.counts
        assert d1.counts == d2.counts
        assert a1.counts == a2.counts
        assert np.array_equal(extract_origin(o1), extract_origin(o2))

    def test_sharded_votes_merge_bit_identical(self):
        model, cloud, tuples, targets = oracle_setup(seed=5, n_tuples=256)
        pred = oracle_predictions(targets)
        cfg = VoteConfig(step_deg=2.0, voxel_size=0.01)
        full_o, full_d, full_a = cast_votes(cloud, tuples, pred, cfg)
        bounds = OriginAccumulator.for_cloud(cloud, cfg.voxel_size)
        parts = None
        for lo in range(0, 256, 32):  # 8 shards
            sl = slice(lo, lo + 32)
            shard_pred = BatchPrediction(pred.mu[sl], pred.nu[sl], pred.theta_dist[sl],
                                         pred.mu_a[sl], pred.nu_a[sl], pred.c_hat[sl])
            trio = cast_votes(cloud, tuples[sl], shard_pred, cfg, bounds=bounds)
            parts = trio if parts is None else tuple(merge(x, y) for x, y in zip(parts, trio))
        assert parts[0].counts == full_o.counts
        assert parts[1].counts == full_d.counts
        assert parts[2].counts == full_a.counts
        assert parts[0].dropped == full_o.dropped


class TestVoteConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            VoteConfig(step_deg=0.0)
        with pytest.raises(ValueError):
            VoteConfig(voxel_size=-1.0)
        with pytest.raises(ValueError):
            VoteConfig(score_threshold=1.0)

    def test_candidate_cap(self):
        cfg = VoteConfig(step_deg=0.1, max_candidates=720)
        assert len(cfg.candidate_angles()) == 720
        cfg2 = VoteConfig(step_deg=2.0)
        assert len(cfg2.candidate_angles()) == 180
