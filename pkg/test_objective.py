#!/usr/bin/env python3
"""
Tests for OKS, the training losses and OKS-based AP
"""

import math

import numpy as np
import pytest

from radarpose.config import preset
from radarpose.errors import ShapeError
from radarpose.gradcheck import grad_check
from radarpose.objective import (
    COCO_SIGMAS,
    LossWeights,
    OKS_THRESHOLDS,
    OksParams,
    ap_from_scores,
    evaluate_ap,
    loss_oks,
    loss_terms,
    loss_vel,
    object_scale,
    oks,
    total_loss,
)
from radarpose.poses import JOINT_GROUPS, PoseWindow
from radarpose.tensor import Tensor

FIXED = OksParams(scale_mode="fixed", fixed_scale=1.0)


def _pose(seed=0, frames=None, joints=14):
    rng = np.random.default_rng(seed)
    shape = (joints, 2) if frames is None else (frames, joints, 2)
    return rng.uniform(0.2, 0.8, size=shape)


def _shift_for(value, joint=0, params=FIXED):
    """Displacement along x giving joint similarity ``value`` under ``params``."""
    k = params.k[joint]
    return math.sqrt(-2.0 * params.fixed_scale**2 * k**2 * math.log(value))


def test_thresholds():
    np.testing.assert_allclose(OKS_THRESHOLDS, [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95])


def test_perfect_pose_scores_one():
    gt = _pose()
    assert oks(gt, gt, np.ones(14)) == 1.0


def test_single_visible_joint_at_one_falloff():
    gt = _pose()
    pred = gt.copy()
    k = FIXED.k[0]
    pred[0, 0] += math.sqrt(2.0) * k
    vis = np.zeros(14)
    vis[0] = 1
    assert oks(pred, gt, vis, FIXED) == pytest.approx(math.exp(-1), abs=1e-9)
    vis[5] = 1
    assert oks(pred, gt, vis, FIXED) == pytest.approx((1 + math.exp(-1)) / 2, abs=1e-9)


def test_oks_needs_a_visible_joint():
    gt = _pose()
    with pytest.raises(ValueError):
        oks(gt, gt, np.zeros(14))
    with pytest.raises(ShapeError):
        oks(gt[:3], gt, np.ones(14))


def test_oks_translation_invariant_and_monotone():
    gt = _pose(1)
    pred = _pose(2)
    vis = np.ones(14)
    shift = np.array([0.05, -0.1])
    assert oks(pred + shift, gt + shift, vis) == pytest.approx(oks(pred, gt, vis), abs=1e-12)
    closer = gt + 0.5 * (pred - gt)
    assert oks(closer, gt, vis) >= oks(pred, gt, vis)


def test_object_scale_modes():
    gt = np.array([[0.0, 0.0], [0.3, 0.4]])
    vis = np.ones(2)
    assert object_scale(gt, vis, OksParams(k=[0.1, 0.1])) == pytest.approx(0.5)
    assert object_scale(gt, vis, OksParams(k=[0.1, 0.1], scale_mode="bbox_area")) == pytest.approx(math.sqrt(0.12))
    # a single visible point has no extent
    assert object_scale(gt, np.array([1, 0]), OksParams(k=[0.1, 0.1], fixed_scale=0.7)) == 0.7


def test_params_follow_joint_count():
    assert OksParams.from_config(preset("tiny")).k == pytest.approx((2 * COCO_SIGMAS).tolist())
    assert OksParams.from_config(preset("tiny", joints=4)).k == pytest.approx([0.158] * 4)
    with pytest.raises(ShapeError):
        OksParams().k_array(4)
    with pytest.raises(ValueError):
        OksParams(k=[0.1, 0.0])


def test_loss_oks_values():
    gt = PoseWindow(coords=_pose(frames=2))
    assert loss_oks(gt, gt, FIXED).item() == 0.0
    pred = gt.coords.copy()
    pred[0, :, 0] += np.sqrt(2.0) * np.asarray(FIXED.k)
    value = loss_oks(Tensor(pred), gt, FIXED).item()
    assert value == pytest.approx(1 - (1 + math.exp(-1)) / 2, abs=1e-9)
    assert 0.0 <= loss_oks(Tensor(_pose(5, frames=2)), gt).item() <= 1.0


def test_loss_vel_values():
    gt = PoseWindow(coords=np.zeros((2, 1, 2)))
    pred = Tensor(np.array([[[0.0, 0.0]], [[0.3, 0.4]]]))
    assert loss_vel(pred, gt).item() == pytest.approx(0.25, abs=1e-12)
    truth = PoseWindow(coords=_pose(frames=4))
    assert loss_vel(truth, truth).item() == 0.0
    offset = Tensor(truth.coords + np.array([0.1, -0.05]))
    assert loss_vel(offset, truth).item() == pytest.approx(0.0, abs=1e-24)
    single = PoseWindow(coords=_pose(frames=1))
    assert loss_vel(Tensor(single.coords + 0.1), single).item() == 0.0


def test_total_loss_combination():
    gt = PoseWindow(coords=_pose(frames=3))
    pred = Tensor(_pose(9, frames=3))
    assert total_loss(gt, gt).item() == 0.0
    no_vel = total_loss(pred, gt, LossWeights(lambda_vel=0.0)).item()
    assert no_vel == pytest.approx(loss_oks(pred, gt).item())
    terms = loss_terms(pred, gt, LossWeights(lambda_vel=0.05))
    assert terms.total.item() == pytest.approx(terms.oks.item() + 0.05 * terms.vel.item())


def test_total_loss_gradient():
    gt = PoseWindow(coords=_pose(frames=3, joints=4), visibility=np.array([[1, 1, 0, 1]] * 3))
    params = OksParams(k=[0.1, 0.2, 0.15, 0.3])
    pred = Tensor(gt.coords + np.random.default_rng(4).normal(scale=0.05, size=gt.coords.shape), requires_grad=True)
    report = grad_check(lambda: total_loss(pred, gt, LossWeights(lambda_vel=0.5), params), {"pred": pred}, samples=24)
    assert report.passed, report


def test_ap_from_scores_enumerated_cases():
    assert ap_from_scores([0.60, 0.90]) == pytest.approx((0.60, 1.0, 0.5))
    assert ap_from_scores([1.0, 1.0]) == (1.0, 1.0, 1.0)
    assert ap_from_scores([0.49]) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ap_from_scores([])


def test_evaluate_ap_perfect_and_partial():
    gt = PoseWindow(coords=_pose(frames=4))
    report = evaluate_ap(gt.coords, gt)
    assert (report.ap, report.ap50, report.ap75) == (1.0, 1.0, 1.0)
    assert report.percent()["AP"] == 100.0
    assert set(report.per_group) == set(JOINT_GROUPS)

    truth = PoseWindow(coords=_pose(frames=2))
    preds = truth.coords.copy()
    for frame, score in enumerate([0.62, 0.92]):
        preds[frame, :, 0] += [_shift_for(score, j) for j in range(14)]
    report = evaluate_ap(preds, truth, FIXED)
    assert (report.ap, report.ap50, report.ap75) == pytest.approx((0.6, 1.0, 0.5))
    assert report.ap <= report.ap50
    assert report.mean_oks == pytest.approx(0.77)


def test_evaluate_ap_errors():
    gt = PoseWindow(coords=_pose(frames=2))
    with pytest.raises(ValueError):
        evaluate_ap(np.zeros((0, 14, 2)), gt)
    with pytest.raises(ShapeError):
        evaluate_ap(gt.coords[:1], gt)


def test_joint_table_layout():
    gt = PoseWindow(coords=_pose(frames=2))
    table = evaluate_ap(gt.coords, gt).joint_table()
    assert list(table.columns) == list(JOINT_GROUPS) + ["AP", "AP50", "AP75"]
    assert table.iloc[0]["Head"] == 100.0
