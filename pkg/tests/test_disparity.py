import numpy as np
import pytest

from sphere_depth.data.models import PairPolicy
from sphere_depth.geometry.sphere_geom import erp_directions, pixel_centers
from sphere_depth.infrastructure.logging_utils import (
    DegenerateGeometryError,
    DomainError,
    InsufficientOverlapError,
    NonFiniteError,
    ShapeError,
)
from sphere_depth.losses.disparity import (
    WarpResult,
    covered_l2,
    disparity_displacement,
    distortion_weight,
    distortion_weight_at,
    geometric_loss,
    geometric_loss_and_grad,
    geometric_loss_grad,
    geometric_loss_linearized,
    reproject_frame,
    spherical_disparity,
    splat_nearest,
    target_offset,
    validate_depth,
    wrap_columns,
)
from sphere_depth.synth.renderer import make_benchmark_sequence


def _depth(width: int, height: int, seed: int = 0) -> np.ndarray:
    d = erp_directions(width, height)
    rng = np.random.default_rng(seed)
    return 3.0 + 0.8 * d[..., 0] + 0.4 * d[..., 2] + rng.uniform(0.0, 0.05, (height, width))


# --- disparity -------------------------------------------------------------

def test_zero_baseline_gives_zero_disparity():
    depth = _depth(32, 16)
    np.testing.assert_array_equal(spherical_disparity(depth, 0.0), np.zeros((16, 32, 2)))
    np.testing.assert_array_equal(spherical_disparity(depth, np.zeros(3)), np.zeros((16, 32, 2)))


def test_far_points_have_vanishing_disparity():
    depth = np.full((4, 8), 1e9)
    assert np.max(np.abs(spherical_disparity(depth, 0.2))) < 1e-9


def test_sideways_pixel_disparity_hand_case():
    # 5x3 grid puts a pixel center at phi=0, theta=pi/2
    depth = np.full((3, 5), 2.0)
    delta = spherical_disparity(depth, 0.2)
    assert float(delta[1, 2, 0]) == pytest.approx(np.arctan2(0.2, 2.0), abs=1e-12)
    assert float(delta[1, 2, 1]) == pytest.approx(0.0, abs=1e-12)
    disp = disparity_displacement(depth, 0.2)
    assert float(disp[1, 2, 0]) == pytest.approx(-np.arctan2(0.2, 2.0) * 5 / (2 * np.pi), abs=1e-12)


def test_scalar_baseline_equals_z_offset():
    depth = _depth(32, 16, seed=1)
    np.testing.assert_array_equal(spherical_disparity(depth, 0.3), spherical_disparity(depth, [0.0, 0.0, 0.3]))


def test_point_at_target_center_is_degenerate():
    dirs = erp_directions(2, 1)
    with pytest.raises(DegenerateGeometryError):
        spherical_disparity(np.ones((1, 2)), dirs[0, 1])


def test_disparity_input_validation():
    with pytest.raises(DomainError):
        spherical_disparity(np.zeros((4, 8)), 0.1)
    bad = np.ones((4, 8))
    bad[1, 1] = np.nan
    with pytest.raises(NonFiniteError):
        spherical_disparity(bad, 0.1)
    with pytest.raises(ShapeError):
        validate_depth(np.ones((4, 8, 1)))
    with pytest.raises(DomainError):
        target_offset([1.0, 2.0])


def test_wrap_columns_half_open_range():
    np.testing.assert_array_equal(wrap_columns([8.0, -8.0, 9.0, -9.0, 3.0], 16), [-8.0, -8.0, -7.0, 7.0, 3.0])


# --- splatting -------------------------------------------------------------

def test_splat_collisions_keep_smallest_priority_then_lowest_index():
    values = np.array([[1.0, 2.0, 3.0, 4.0]])
    tu = np.full((1, 4), 0.5)
    tv = np.full((1, 4), 0.5)
    same = splat_nearest(values, tu, tv, np.ones((1, 4)))
    assert same.image[0, 0] == 1.0
    assert same.source_index[0, 0] == 0
    ordered = splat_nearest(values, tu, tv, np.array([[3.0, 1.0, 2.0, 1.0]]))
    assert ordered.image[0, 0] == 2.0
    assert ordered.zbuffer[0, 0] == 1.0
    assert not ordered.coverage[0, 1:].any()
    assert np.all(np.isinf(ordered.zbuffer[0, 1:]))


def test_splat_drops_samples_off_the_poles_and_wraps_columns():
    values = np.array([[1.0, 2.0, 3.0, 4.0]])
    tu = np.array([[4.5, 5.5, 0.5, 0.5]])
    tv = np.array([[0.5, 0.5, -0.5, 1.5]])
    result = splat_nearest(values, tu, tv, np.ones((1, 4)))
    np.testing.assert_array_equal(result.coverage, [[True, True, False, False]])
    np.testing.assert_array_equal(result.image, [[1.0, 2.0, 0.0, 0.0]])


def test_zero_baseline_warp_is_identity(smooth_erp):
    image = smooth_erp(32, 16, channels=3)
    depth = _depth(32, 16)
    warp = reproject_frame(image, depth, 0.0)
    np.testing.assert_array_equal(warp.image, image)
    assert warp.coverage.all()
    np.testing.assert_array_equal(warp.zbuffer, depth)


def test_occluder_wins_and_disocclusions_stay_empty():
    height, width, b = 32, 64, 0.5
    depth = np.full((height, width), 10.0)
    depth[12:20, 28:37] = 1.0
    image = np.zeros((height, width))
    image[12:20, 28:37] = 1.0
    warp = reproject_frame(image + 0.5, depth, b)

    # brute-force z-buffer
    u, v = pixel_centers(width, height)
    disp = disparity_displacement(depth, b)
    cols = np.floor(np.mod(u + disp[..., 0], width)).astype(int) % width
    rows_f = v + disp[..., 1]
    rows = np.minimum(np.floor(rows_f), height - 1).astype(int)
    landed = (rows_f >= 0) & (rows_f <= height)
    prio = np.linalg.norm(depth[..., None] * erp_directions(width, height) - [0.0, 0.0, b], axis=-1)
    best = np.full(height * width, np.inf)
    np.minimum.at(best, (rows * width + cols)[landed], prio[landed])
    best = best.reshape(height, width)

    np.testing.assert_array_equal(warp.coverage, np.isfinite(best))
    np.testing.assert_array_equal(warp.zbuffer[warp.coverage], best[warp.coverage])
    assert warp.coverage_fraction < 1.0
    assert np.all(warp.image[~warp.coverage] == 0.0)
    # the foreground moved by several pixels and left a hole behind it
    assert not warp.coverage[12:20, 28:37].all()


# --- weights ---------------------------------------------------------------

def test_distortion_weight_values():
    assert float(distortion_weight_at(np.pi / 2, np.pi / 2)) == pytest.approx(1.0)
    assert float(distortion_weight_at(np.pi / 4, np.pi / 2)) == pytest.approx(np.sqrt(2) / 2)
    assert float(distortion_weight_at(0.3, 0.0)) == 0.0
    assert float(distortion_weight_at(0.0, np.pi / 2, mode="polar_only")) == 1.0
    assert float(distortion_weight_at(0.0, np.pi / 2, mode="full")) == 0.0
    with pytest.raises(DomainError):
        distortion_weight_at(0.0, 0.0, mode="cosine")


def test_distortion_weight_grid_range():
    M = distortion_weight(64, 32, mode="full")
    assert M.shape == (32, 64)
    assert np.all((M >= 0.0) & (M <= 1.0))
    np.testing.assert_allclose(M, M[::-1], atol=1e-15)


# --- geometric loss --------------------------------------------------------

def _single_pixel_warp(value: float) -> WarpResult:
    image = np.zeros((2, 2))
    image[0, 0] = value
    coverage = np.zeros((2, 2), dtype=bool)
    coverage[0, 0] = True
    return WarpResult(image=image, coverage=coverage, zbuffer=np.where(coverage, 1.0, np.inf),
                      source_index=np.where(coverage, 0, -1))


def test_geometric_loss_single_pixel_hand_case():
    loss, fraction = geometric_loss(_single_pixel_warp(0.5), np.full((2, 2), 0.25), np.ones((2, 2)))
    assert loss == pytest.approx(0.25)
    assert fraction == 0.25


def test_geometric_loss_zero_weight_and_perfect_match():
    k = np.full((2, 2), 0.25)
    assert geometric_loss(_single_pixel_warp(0.5), k, np.zeros((2, 2)))[0] == 0.0
    assert geometric_loss(_single_pixel_warp(0.25), k, np.ones((2, 2)))[0] == 0.0


def test_geometric_loss_insufficient_overlap():
    image = np.zeros((10, 10))
    coverage = np.zeros((10, 10), dtype=bool)
    coverage[0, 0] = True
    warp = WarpResult(image=image, coverage=coverage, zbuffer=np.full((10, 10), np.inf),
                      source_index=np.full((10, 10), -1))
    with pytest.raises(InsufficientOverlapError, match="insufficient-overlap"):
        geometric_loss(warp, image, np.ones((10, 10)), min_coverage=0.1)


def test_covered_l2_uses_channel_norm():
    image = np.zeros((1, 1, 3))
    reference = np.array([[[3.0, 4.0, 0.0]]])
    loss, _ = covered_l2(image, reference, np.ones((1, 1), dtype=bool))
    assert loss == pytest.approx(5.0)


def test_covered_l2_channel_mismatch():
    with pytest.raises(ShapeError):
        covered_l2(np.zeros((2, 2, 3)), np.zeros((2, 2)), np.ones((2, 2), dtype=bool))


# --- gradient --------------------------------------------------------------

def test_zero_baseline_gradient_is_zero(smooth_erp):
    depth = _depth(32, 16)
    source = smooth_erp(32, 16, channels=3)
    target = 0.9 * source
    grad = geometric_loss_grad(depth, source, target, 0.0, distortion_weight(32, 16))
    np.testing.assert_array_equal(grad, np.zeros((16, 32)))


def test_linearized_loss_matches_splatted_loss_at_identity(smooth_erp):
    depth = _depth(32, 16)
    source = smooth_erp(32, 16, channels=3)
    target = 0.9 * source
    M = distortion_weight(32, 16)
    splat, _ = geometric_loss(reproject_frame(source, depth, 0.0), target, M)
    lin, fraction = geometric_loss_linearized(depth, source, target, 0.0, M)
    assert lin == pytest.approx(splat, rel=1e-12)
    assert fraction == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    bench = make_benchmark_sequence(seed=seed, frames=2, width=64, height=32,
                                    policy=PairPolicy(long_term_gap=0, bidirectional=False))
    height, width = bench.depths[0].shape
    b = bench.spacing
    depth = 1.1 * bench.depths[0]
    source, target = bench.sequence.frames[0].image, bench.sequence.frames[1].image
    M = distortion_weight(width, height)
    warp = reproject_frame(source, depth, b)
    loss, _, grad = geometric_loss_and_grad(depth, source, target, b, M, warp=warp, min_coverage=0.0)
    assert loss > 0.0

    winners = np.unique(warp.source_index[warp.coverage])
    untouched = np.setdiff1d(np.arange(height * width), winners)
    assert np.all(grad.ravel()[untouched] == 0.0)

    def loss_at(row, col, dz):
        bumped = depth.copy()
        bumped[row, col] += dz
        return geometric_loss_linearized(bumped, source, target, b, M, warp=warp, min_coverage=0.0)[0]

    rng = np.random.default_rng(seed)
    checked = 0
    for flat in rng.choice(winners, size=min(100, winners.size), replace=False):
        row, col = divmod(int(flat), width)
        h = 1e-4 * depth[row, col]
        plus, centre, minus = loss_at(row, col, h), loss, loss_at(row, col, -h)
        ahead, behind = (plus - centre) / h, (centre - minus) / h
        # one-sided slopes disagree where the landing point changes bilinear cell or the residual crosses zero
        if abs(ahead - behind) > 1e-2 * max(abs(ahead), abs(behind)) + 1e-12:
            continue
        fd = (plus - minus) / (2 * h)
        assert grad[row, col] == pytest.approx(fd, rel=1e-3, abs=1e-10)
        checked += 1
    assert checked >= 50


if __name__ == "__main__":
    pytest.main([__file__])
