import numpy as np
import pytest

from sphere_depth.data.models import MetricReport
from sphere_depth.infrastructure.logging_utils import DomainError, NonFiniteError, ShapeError
from sphere_depth.losses.objectives import berhu_loss, cross_entropy_loss, depth_metrics, total_loss


# --- berHu -----------------------------------------------------------------

def test_berhu_hand_case():
    pred = np.array([[5.0, 0.5]])
    assert berhu_loss(pred, np.zeros((1, 2))) == pytest.approx(6.75)


def test_berhu_identical_inputs_is_zero():
    gt = np.random.default_rng(0).uniform(1.0, 5.0, (4, 8))
    assert berhu_loss(gt, gt.copy()) == 0.0


def test_berhu_small_residuals_are_l1():
    gt = np.ones((1, 4))
    pred = gt + np.array([[1.0, 0.1, -0.2, 0.05]])
    # c = 0.2; 1.0 is quadratic, the others linear
    expected = ((1.0 + 0.04) / 0.4 + 0.1 + 0.2 + 0.05) / 4
    assert berhu_loss(pred, gt) == pytest.approx(expected)


def test_berhu_is_continuous_at_the_threshold():
    gt = np.zeros((1, 2))
    # the largest residual 5 fixes c = 1; the second residual sits just below and just above it
    below = berhu_loss(np.array([[5.0, 1.0 - 1e-9]]), gt)
    above = berhu_loss(np.array([[5.0, 1.0 + 1e-9]]), gt)
    assert abs(above - below) < 1e-8
    assert berhu_loss(np.array([[5.0, 1.0]]), gt) == pytest.approx((13.0 + 1.0) / 2)


def test_berhu_respects_mask():
    gt = np.zeros((1, 3))
    pred = np.array([[1.0, 1.0, 100.0]])
    # equal residuals r all fall in the quadratic branch: 2.6·r
    assert berhu_loss(pred, gt, valid=np.array([[True, True, False]])) == pytest.approx(2.6)


def test_berhu_errors():
    with pytest.raises(ShapeError):
        berhu_loss(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(DomainError):
        berhu_loss(np.ones((2, 2)), np.ones((2, 2)), valid=np.zeros((2, 2), dtype=bool))
    with pytest.raises(NonFiniteError):
        berhu_loss(np.full((2, 2), np.nan), np.ones((2, 2)))


# --- cross-entropy ---------------------------------------------------------

def test_cross_entropy_hand_case():
    pred = np.array([[[0.5, 0.5], [0.25, 0.75]]])
    labels = np.array([[0, 1]])
    assert cross_entropy_loss(pred, labels) == pytest.approx(-(np.log(0.5) + np.log(0.75)) / 2)


def test_cross_entropy_of_uniform_prediction_is_log_k():
    pred = np.full((3, 5, 4), 0.25)
    labels = np.random.default_rng(4).integers(0, 4, (3, 5))
    assert cross_entropy_loss(pred, labels) == pytest.approx(np.log(4.0), rel=1e-12)
    assert cross_entropy_loss(pred, labels) == pytest.approx(1.3863, abs=1e-4)


def test_cross_entropy_floors_zero_probability():
    pred = np.array([[[1.0, 0.0]]])
    assert cross_entropy_loss(pred, np.array([[1]])) == pytest.approx(-np.log(1e-12))


def test_cross_entropy_errors():
    pred = np.full((2, 2, 3), 1.0 / 3.0)
    with pytest.raises(ShapeError):
        cross_entropy_loss(pred, np.zeros((2, 3), dtype=int))
    with pytest.raises(ShapeError):
        cross_entropy_loss(pred, np.full((2, 2), 3))
    with pytest.raises(ShapeError):
        cross_entropy_loss(pred, np.zeros((2, 2), dtype=int), num_classes=4)
    with pytest.raises(DomainError):
        cross_entropy_loss(np.full((2, 2, 3), 0.5), np.zeros((2, 2), dtype=int))
    with pytest.raises(DomainError):
        cross_entropy_loss(pred, np.zeros((2, 2)))


def test_total_loss_is_sum():
    gt = np.zeros((1, 2))
    pred = np.array([[5.0, 0.5]])
    prob = np.array([[[0.5, 0.5], [0.5, 0.5]]])
    labels = np.zeros((1, 2), dtype=int)
    assert total_loss(pred, gt, prob, labels) == pytest.approx(6.75 + np.log(2.0))


# --- metrics ---------------------------------------------------------------

def test_metrics_for_uniform_overestimate():
    gt = np.random.default_rng(1).uniform(1.0, 8.0, (8, 16))
    report = depth_metrics(1.3 * gt, gt)
    assert report.abs_rel == pytest.approx(0.3)
    assert report.sq_rel == pytest.approx(0.09 * np.mean(gt))
    assert report.rmse == pytest.approx(0.3 * np.sqrt(np.mean(gt ** 2)))
    assert report.rmse_log == pytest.approx(np.log(1.3))
    assert (report.delta1, report.delta2, report.delta3) == (0.0, 1.0, 1.0)
    assert report.valid_pixels == gt.size


def test_metrics_perfect_prediction():
    gt = np.full((4, 4), 2.0)
    report = depth_metrics(gt, gt)
    assert report.abs_rel == 0.0
    assert report.rmse == 0.0
    assert report.delta1 == 1.0


def test_metrics_two_pixel_hand_case():
    report = depth_metrics(np.array([[2.0, 2.0]]), np.array([[1.0, 2.0]]))
    assert report.abs_rel == pytest.approx(0.5)
    assert report.rmse == pytest.approx(np.sqrt(0.5))
    assert report.rmse == pytest.approx(0.7071, abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_metrics_under_joint_scaling(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 20.0, (16, 32))
    pred = gt * rng.uniform(0.6, 1.6, gt.shape)
    base = depth_metrics(pred, gt)
    for alpha in (0.25, 3.7, 1000.0):
        scaled = depth_metrics(alpha * pred, alpha * gt)
        assert (scaled.delta1, scaled.delta2, scaled.delta3) == (base.delta1, base.delta2, base.delta3)
        assert scaled.abs_rel == pytest.approx(base.abs_rel, rel=1e-12)
        assert scaled.rmse_log == pytest.approx(base.rmse_log, rel=1e-9)
        assert scaled.rmse == pytest.approx(alpha * base.rmse, rel=1e-12)
        assert scaled.sq_rel == pytest.approx(alpha * base.sq_rel, rel=1e-12)


def test_median_scaling_removes_global_scale():
    gt = np.random.default_rng(2).uniform(1.0, 8.0, (8, 16))
    report = depth_metrics(0.5 * gt, gt, median_scaling=True)
    assert report.abs_rel == pytest.approx(0.0, abs=1e-12)


def test_metrics_mask_and_errors():
    gt = np.array([[1.0, 2.0, 0.0]])
    pred = np.array([[1.0, 2.0, 5.0]])
    report = depth_metrics(pred, gt, valid=gt > 0)
    assert report.abs_rel == 0.0
    assert report.valid_pixels == 2
    with pytest.raises(DomainError):
        depth_metrics(pred, gt)
    with pytest.raises(DomainError):
        depth_metrics(pred, gt, valid=np.zeros((1, 3), dtype=bool))
    with pytest.raises(ShapeError):
        depth_metrics(pred, gt, valid=np.ones((3, 1), dtype=bool))


def test_metric_report_formatting():
    report = MetricReport(abs_rel=0.3, sq_rel=0.1, rmse=1.0, rmse_log=0.26, delta1=0.0, delta2=1.0, delta3=1.0,
                          valid_pixels=4)
    assert report.to_record().startswith("abs_rel=0.300000 sq_rel=0.100000")
    assert report.to_record().endswith("valid_pixels=4")
    assert "0.300" in report.table_row()
    assert len(report.table_header().split("|")) == len(MetricReport.COLUMNS)


if __name__ == "__main__":
    pytest.main([__file__])
