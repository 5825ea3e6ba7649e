import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_pose
import oracles
from vloscale.errors import DegenerateGeometryError, DomainError, InsufficientSamplesError, NoConsensusError
from vloscale.geometry import CameraIntrinsics, Pose, project_cloud
from vloscale.scale import (CullingThresholds, LocalMap, MatchedPairs, RansacConfig, ScaleEstimate,
                            apply_scale_correction, compute_scale_samples, cull_matches, ransac_scale,
                            should_correct)
from vloscale.image import gradients_at
from vloscale.synth import SensorRig, camera_pose_at, exact_correspondences, street_scene

LATERAL = Pose(np.eye(3), (1.0, 0.0, 0.0))  # epipolar lines are horizontal


def pairs_on_horizontal_line(K, points, grads, depth=10.0):
    """Pairs whose epipolar line in the current image is ``v = 0`` for K_unit-like cameras."""
    n = len(points)
    return MatchedPairs(np.zeros((n, 2)), np.asarray(points, float), np.full(n, depth), np.asarray(grads, float))


# culling ----------------------------------------------------------------------


def test_cull_examples(K_unit):
    pairs = pairs_on_horizontal_line(K_unit, [(5.0, 0.3), (5.0, 0.6), (5.0, 0.1), (5.0, 0.0)],
                                     [(1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, 0.0)])
    kept = cull_matches(pairs, K_unit, LATERAL)
    # kept by both tests; culled by normal error; culled by tangential test; zero gradient
    assert kept.x_cur.tolist() == [[5.0, 0.3]]


def test_cull_degenerate_translation(K_unit):
    pairs = pairs_on_horizontal_line(K_unit, [(5.0, 0.3)], [(1.0, 0.0)])
    with pytest.raises(DegenerateGeometryError):
        cull_matches(pairs, K_unit, Pose.identity())
    with pytest.raises(DegenerateGeometryError):
        cull_matches(pairs.subset([]), K_unit, Pose.identity())


def test_cos_threshold_either_side_of_60_degrees(K_unit):
    grads = [(np.cos(np.radians(a)), np.sin(np.radians(a))) for a in (59.0, 61.0, 119.0, 121.0)]
    pairs = pairs_on_horizontal_line(K_unit, [(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)], grads)
    kept = cull_matches(pairs, K_unit, LATERAL)
    assert kept.x_cur[:, 0].tolist() == [1.0, 4.0]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.0), st.floats(0.01, 2.0), st.floats(0.0, 1.0),
       st.floats(0.0, 1.0))
def test_culling_is_subset_monotone(seed, e1, e2, c1, c2):
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics(200.0, 200.0, 160.0, 120.0, 320, 240)
    n = 200
    pairs = MatchedPairs(rng.uniform(0, 300, (n, 2)), rng.uniform(0, 300, (n, 2)), rng.uniform(1, 30, n),
                         rng.normal(size=(n, 2)) * 20)
    rel = random_pose(rng, max_angle=0.2)
    loose = CullingThresholds(max(e1, e2), min(c1, c2))
    tight = CullingThresholds(min(e1, e2), max(c1, c2))
    a = {tuple(p) for p in cull_matches(pairs, K, rel, loose).x_cur}
    b = {tuple(p) for p in cull_matches(pairs, K, rel, tight).x_cur}
    assert b <= a


def _exact_keyframe_pairs(alpha=1.0, seed=0):
    """LiDAR keypoints of a street frame matched exactly into the next keyframe."""
    rig = SensorRig()
    scene = street_scene(length=100.0, seed=seed)
    a = camera_pose_at([10.0, 0.0, 1.6], 0.0)
    b = camera_pose_at([12.0, 0.1, 1.6], np.radians(1.0))
    img, cloud = rig.capture(scene, a)
    kps = project_cloud(rig.K, rig.T_L_C, cloud)
    x_b, _, vis = exact_correspondences(scene, rig.K, a, b, kps.pixels)
    img_b, _ = rig.capture(scene, b)
    grad = gradients_at(img_b, np.where(vis[:, None], x_b, 0.0))
    ok = vis & np.isfinite(grad).all(axis=1)
    pairs = MatchedPairs(kps.pixels[ok], x_b[ok], kps.depths[ok], grad[ok])
    rel_true = b.inverse() @ a
    # the VO relative translation is off by 1/alpha
    return rig.K, pairs, rel_true.scaled(1.0 / alpha)


def test_noise_free_completeness():
    K, pairs, rel = _exact_keyframe_pairs()
    kept = cull_matches(pairs, K, rel, CullingThresholds(1e-6, 0.0))
    nondegenerate = np.hypot(*pairs.grad_cur.T) > 0
    assert len(kept) == int(nondegenerate.sum())


@pytest.mark.parametrize("alpha", [0.8, 1.0, 1.1, 1.25])
def test_samples_recover_injected_scale(alpha):
    K, pairs, rel = _exact_keyframe_pairs(alpha)
    samples = compute_scale_samples(cull_matches(pairs, K, rel), K, rel)
    assert len(samples) > 50
    assert np.abs(samples.s / alpha - 1).max() < 1e-6
    assert np.array_equal(samples.s, samples.d / samples.v)
    est = ransac_scale(samples)
    assert abs(est.scale / alpha - 1) < 1e-6 and est.inlier_count == len(samples)


def test_sample_arithmetic_and_cheirality(K_unit):
    # landmark (0, 0, 5): LiDAR says 10 m, triangulation 5 m
    rel = Pose(np.eye(3), (-1.0, 0.0, 0.0))
    pairs = MatchedPairs([(0.0, 0.0), (0.0, 0.0)], [(-0.2, 0.0), (0.2, 0.0)], [10.0, 10.0], [(1, 0), (1, 0)])
    samples = compute_scale_samples(pairs, K_unit, rel)
    assert len(samples) == 1 and samples.s[0] == pytest.approx(2.0)
    assert samples.dropped_cheirality == 1


def test_matched_pairs_need_positive_depth():
    with pytest.raises(DomainError):
        MatchedPairs([(0, 0)], [(1, 1)], [0.0], [(1, 0)])


# RANSAC -----------------------------------------------------------------------


def test_ransac_outlier_example(frozen):
    f = frozen["ransac"]
    est = ransac_scale(np.array(f["samples"]), RansacConfig(inlier_tol=f["tol"]))
    assert est.inlier_count == f["max_consensus"] == 9
    assert est.scale == pytest.approx(f["mean_of_consensus"])
    assert est.sample_count == 10


def test_ransac_constant_samples():
    est = ransac_scale(np.full(15, 2.0))
    assert est.scale == 2.0 and est.inlier_count == 15 and est.inlier_spread == 0.0


def test_ransac_errors():
    with pytest.raises(InsufficientSamplesError):
        ransac_scale(np.ones(5))
    # ten samples spread far apart: no consensus of 8
    with pytest.raises(NoConsensusError):
        ransac_scale(2.0 ** np.arange(10))


def test_ransac_is_deterministic():
    s = np.random.default_rng(0).uniform(0.5, 2.0, 500)
    a = ransac_scale(s, RansacConfig(seed=9, inlier_tol=0.2, min_inliers=1))
    b = ransac_scale(s, RansacConfig(seed=9, inlier_tol=0.2, min_inliers=1))
    assert a == b


@settings(max_examples=400, deadline=None)
@given(st.lists(st.one_of(st.floats(0.5, 2.0), st.sampled_from([1.0, 1.04, 1.05, 1.1])), min_size=1, max_size=12),
       st.sampled_from([0.01, 0.05, 0.1]))
def test_ransac_consensus_matches_exhaustive_oracle(samples, tol):
    cfg = RansacConfig(inlier_tol=tol, min_samples=1, min_inliers=1)
    est = ransac_scale(np.array(samples), cfg)
    assert est.inlier_count == oracles.max_consensus(samples, tol)
    winners = oracles.consensus_sets(samples, tol)
    assert any(est.scale == pytest.approx(np.mean([samples[i] for i in w]), rel=1e-12) for w in winners)


def test_ransac_exhaustive_all_sets_small():
    # every multiset of size <= 6 over a small value grid, tol 5%
    grid = [1.0, 1.03, 1.06, 1.2, 3.0]
    for n in range(1, 7):
        for combo in itertools.combinations_with_replacement(grid, n):
            est = ransac_scale(np.array(combo), RansacConfig(min_samples=1, min_inliers=1))
            assert est.inlier_count == oracles.max_consensus(combo, 0.05)


def test_ransac_robust_to_30_percent_gross_outliers():
    good = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        true = float(rng.uniform(0.7, 1.4))
        s = true * (1 + 0.01 * rng.normal(size=100))
        out = rng.random(100) < 0.3
        s[out] *= 10.0
        est = ransac_scale(s, RansacConfig(seed=seed))
        good += abs(est.scale / true - 1) < 0.01
    assert good >= 99


# trigger ------------------------------------------------------------------------


@pytest.mark.parametrize("scale,expected", [(1.019, False), (1.02, True), (0.97, True), (0.98, True),
                                            (0.981, False), (1.0, False)])
def test_should_correct(scale, expected):
    assert should_correct(ScaleEstimate(scale, 10, 10, 0.0)) is expected


# local map ----------------------------------------------------------------------


def _random_map(rng, m=5, points=20):
    poses = tuple(random_pose(rng, max_t=10.0) for _ in range(m))
    return LocalMap(poses, rng.normal(scale=10.0, size=(points, 3)), int(rng.integers(0, m)))


def test_rescale_identity(rng):
    lm = _random_map(rng)
    out = apply_scale_correction(lm, 1.0)
    for a, b in zip(lm.keyframe_poses, out.keyframe_poses):
        assert a.allclose(b, 1e-12)
    assert np.abs(out.map_points - lm.map_points).max() < 1e-12


def test_rescale_two_keyframes():
    c0 = camera_pose_at([3.0, 4.0, 1.0], 0.3)
    c1 = c0 @ Pose(np.eye(3), (0.0, 0.0, 1.0))
    q = np.array([[0.5, -1.0, 7.0]])
    lm = LocalMap((c0, c1), c0.apply(q))
    out = apply_scale_correction(lm, 2.0)
    assert out.keyframe_poses[0] is c0
    assert np.linalg.norm(out.keyframe_poses[1].translation - c0.translation) == pytest.approx(2.0)
    assert np.allclose(c0.inverse().apply(out.map_points), 2 * q)


def test_rescale_rejects_non_positive(rng):
    with pytest.raises(DomainError):
        apply_scale_correction(_random_map(rng), 0.0)
    with pytest.raises(DomainError):
        LocalMap(())
    with pytest.raises(DomainError):
        LocalMap((Pose.identity(),), reference_index=1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_rescale_invariants(seed, s):
    rng = np.random.default_rng(seed)
    lm = _random_map(rng)
    out = apply_scale_correction(lm, s)
    P, Q = lm.keyframe_poses, out.keyframe_poses
    for i in range(len(P)):
        for j in range(len(P)):
            ra = (P[i].inverse() @ P[j]).rotation
            rb = (Q[i].inverse() @ Q[j]).rotation
            assert np.abs(ra - rb).max() < 1e-12
            d0 = np.linalg.norm(P[i].translation - P[j].translation)
            d1 = np.linalg.norm(Q[i].translation - Q[j].translation)
            assert abs(d1 - s * d0) < 1e-9
    back = apply_scale_correction(out, 1.0 / s)
    for a, b in zip(P, back.keyframe_poses):
        assert a.allclose(b, 1e-9)
    assert np.abs(back.map_points - lm.map_points).max() < 1e-9
    assert Q[lm.reference_index] is P[lm.reference_index]
    assert all(np.array_equal(a.rotation, b.rotation) for a, b in zip(P, Q))
