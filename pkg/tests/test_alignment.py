import numpy as np
import pytest

from sphere_depth.data.models import CameraPose
from sphere_depth.data.sequence import Frame, FrameSequence
from sphere_depth.geometry.alignment import (
    adjust_pair,
    alignment_rotation,
    apply_scale,
    compute_scale,
    group_into_sequences,
    pair_offset,
    scale_sequence,
)
from sphere_depth.geometry.sphere_geom import rotation_y
from sphere_depth.infrastructure.logging_utils import (
    DomainError,
    EmptyReconstructionError,
    ShapeError,
    StaticViewpointError,
    VerticalMotionError,
)

H, W = 8, 16


def _pose(t, yaw: float = 0.0) -> CameraPose:
    return CameraPose(rotation=rotation_y(yaw), translation=np.asarray(t, dtype=float))


def _sequence(translations, with_depth: bool = False) -> FrameSequence:
    rng = np.random.default_rng(0)
    frames = []
    for t in translations:
        depth = rng.uniform(1.0, 5.0, (H, W)) if with_depth else None
        frames.append(Frame(image=rng.random((H, W, 3)), pose=_pose(t), depth=depth))
    return FrameSequence(frames=frames)


# --- scale -----------------------------------------------------------------

def test_uniform_ratio_gives_exact_scale():
    recon = np.random.default_rng(1).uniform(0.5, 3.0, (H, W))
    assert compute_scale(2.0 * recon, recon) == 2.0


def test_scale_is_mean_of_ratios_over_valid_pixels():
    d_nn = np.array([[1.0, 2.0, 3.0, 9.0]])
    d_recon = np.array([[1.0, 1.0, 1.0, 0.0]])
    assert compute_scale(d_nn, d_recon) == 2.0


def test_median_scale_option():
    d_nn = np.array([[1.0, 2.0, 30.0]])
    d_recon = np.ones((1, 3))
    assert compute_scale(d_nn, d_recon, method="median") == 2.0
    assert compute_scale(d_nn, d_recon) == 11.0


def test_scale_pools_frames():
    nn = [np.full((2, 2), 2.0), np.full((2, 2), 4.0)]
    recon = [np.ones((2, 2)), np.ones((2, 2))]
    assert compute_scale(nn, recon) == 3.0


def test_empty_reconstruction_raises():
    with pytest.raises(EmptyReconstructionError):
        compute_scale(np.ones((H, W)), np.zeros((H, W)))


def test_nonpositive_prior_depth_at_valid_pixel_raises():
    d_nn = np.ones((H, W))
    d_nn[0, 0] = 0.0
    with pytest.raises(DomainError):
        compute_scale(d_nn, np.ones((H, W)))


def test_scale_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        compute_scale(np.ones((H, W)), np.ones((H, W + 1)))


def test_scale_homogeneity():
    rng = np.random.default_rng(2)
    d_nn = rng.uniform(1.0, 10.0, (H, W))
    d_recon = rng.uniform(0.1, 2.0, (H, W))
    alpha = 3.7
    s = compute_scale(d_nn, d_recon)
    assert compute_scale(d_nn, alpha * d_recon) == pytest.approx(s / alpha, rel=1e-12)


def test_scale_independent_of_pixel_and_frame_order():
    rng = np.random.default_rng(3)
    nn = [rng.uniform(1.0, 10.0, (H, W)) for _ in range(3)]
    recon = [rng.uniform(0.1, 2.0, (H, W)) for _ in range(3)]
    s = compute_scale(nn, recon)
    perm = rng.permutation(H * W)
    shuffled_nn = [n.ravel()[perm].reshape(H, W) for n in reversed(nn)]
    shuffled_recon = [r.ravel()[perm].reshape(H, W) for r in reversed(recon)]
    assert compute_scale(shuffled_nn, shuffled_recon) == s


def test_apply_scale_multiplies_translations():
    seq = _sequence([(0, 0, 0), (0, 0, 1)])
    scaled = apply_scale(seq, 2.0)
    np.testing.assert_array_equal(scaled.poses[1].translation, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(scaled.poses[1].rotation, seq.poses[1].rotation)
    assert scaled.frames[1].image is seq.frames[1].image
    assert apply_scale(seq, 1.0).poses == seq.poses


def test_apply_scale_composes():
    seq = _sequence([(0, 0, 0), (0.3, 0.1, 1.7)])
    chained = apply_scale(apply_scale(seq, 1.5), 0.4)
    direct = apply_scale(seq, 0.6)
    np.testing.assert_allclose(chained.poses[1].translation, direct.poses[1].translation, rtol=1e-15)


def test_apply_scale_rejects_nonpositive():
    with pytest.raises(DomainError):
        apply_scale(_sequence([(0, 0, 0), (0, 0, 1)]), 0.0)


def test_scale_sequence_uses_frame_depths():
    seq = _sequence([(0, 0, 0), (0, 0, 1)], with_depth=True)
    frames = [Frame(image=f.image, pose=f.pose, depth=f.depth, recon=f.depth / 4.0) for f in seq.frames]
    scaled, s = scale_sequence(FrameSequence(frames=frames))
    assert s == pytest.approx(4.0, rel=1e-12)
    np.testing.assert_allclose(scaled.poses[1].translation, [0.0, 0.0, 4.0])


def test_scale_sequence_without_reconstruction_raises():
    with pytest.raises(EmptyReconstructionError):
        scale_sequence(_sequence([(0, 0, 0), (0, 0, 1)], with_depth=True))


# --- alignment -------------------------------------------------------------

def test_forward_motion_needs_no_rotation():
    R, b = alignment_rotation(_pose((0, 0, 0)), _pose((0, 0, 2)))
    np.testing.assert_array_equal(R, np.eye(3))
    assert b == 2.0


def test_sideways_motion_rotates_x_onto_z():
    R, b = alignment_rotation(_pose((0, 0, 0)), _pose((1, 0, 0)))
    np.testing.assert_allclose(R, rotation_y(-np.pi / 2), atol=1e-15)
    np.testing.assert_allclose(R @ [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], atol=1e-12)
    assert b == pytest.approx(1.0)


def test_vertical_motion_raises():
    with pytest.raises(VerticalMotionError, match="vertical-motion"):
        alignment_rotation(_pose((0, 0, 0)), _pose((0, 1, 0)))


def test_small_tilt_is_accepted():
    _, b = alignment_rotation(_pose((0, 0, 0)), _pose((0, 0.1, 1.0)))
    assert b == pytest.approx(1.0)


def test_static_viewpoint_raises():
    with pytest.raises(StaticViewpointError, match="static-viewpoint"):
        alignment_rotation(_pose((1, 2, 3)), _pose((1, 2, 3)))


def test_pair_offset_in_source_frame():
    pose_j = _pose((1, 0, 0), yaw=np.pi / 2)
    pose_k = _pose((1, 0, 2), yaw=np.pi / 2)
    np.testing.assert_allclose(pair_offset(pose_j, pose_k), rotation_y(np.pi / 2).T @ [0, 0, 2], atol=1e-12)


def test_adjusted_pair_sees_target_along_z():
    rng = np.random.default_rng(4)
    frame_j = Frame(image=rng.random((H, W, 3)), pose=_pose((0, 0, 0), yaw=0.3))
    frame_k = Frame(image=rng.random((H, W, 3)), pose=_pose((1.0, 0.0, 1.0), yaw=-0.2))
    adj_j, adj_k, R_align, b = adjust_pair(frame_j, frame_k)
    np.testing.assert_allclose(pair_offset(adj_j.pose, adj_k.pose), [0.0, 0.0, b], atol=1e-9)
    np.testing.assert_array_equal(adj_j.pose.rotation, adj_k.pose.rotation)
    assert b == pytest.approx(np.sqrt(2.0))


def test_adjusted_images_are_rotated():
    rng = np.random.default_rng(5)
    image = rng.random((H, W, 3))
    depth = rng.uniform(1.0, 2.0, (H, W))
    frame_j = Frame(image=image, pose=_pose((0, 0, 0)), depth=depth)
    frame_k = Frame(image=image, pose=_pose((-1, 0, 0)))
    adj_j, _, R_align, _ = adjust_pair(frame_j, frame_k)
    np.testing.assert_allclose(R_align, rotation_y(np.pi / 2), atol=1e-15)
    np.testing.assert_array_equal(adj_j.image, np.roll(image, -W // 4, axis=1))
    np.testing.assert_array_equal(adj_j.depth, np.roll(depth, -W // 4, axis=1))


def test_adjust_drops_reconstruction():
    rng = np.random.default_rng(6)
    frame_j = Frame(image=rng.random((H, W, 3)), pose=_pose((0, 0, 0)), recon=np.ones((H, W)))
    frame_k = Frame(image=rng.random((H, W, 3)), pose=_pose((0, 0, 1)))
    adj_j, _, _, _ = adjust_pair(frame_j, frame_k)
    assert adj_j.recon is None


# --- grouping --------------------------------------------------------------

def test_grouping_breaks_on_vertical_and_static_steps():
    poses = [_pose(t) for t in [(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 5, 2), (0, 5, 3), (0, 5, 4), (0, 5, 4)]]
    assert group_into_sequences(poses) == [[0, 1, 2], [3, 4, 5]]


def test_grouping_chunks_long_runs():
    poses = [_pose((0, 0, z)) for z in range(5)]
    assert group_into_sequences(poses, max_frames=2) == [[0, 1], [2, 3]]


def test_grouping_rejects_tiny_max_frames():
    with pytest.raises(DomainError):
        group_into_sequences([_pose((0, 0, 0))], max_frames=1)


if __name__ == "__main__":
    pytest.main([__file__])
