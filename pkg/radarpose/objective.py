"""
Training losses and OKS-based evaluation.

OKS for one pose is the mean over visible joints of
exp(-d_j^2 / (2 s^2 k_j^2)); d_j is the distance in normalized image
coordinates, k_j = 2 sigma_j with the COCO sigmas mapped onto the 14-joint
skeleton, and s is the object scale taken from the ground truth.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from . import tensor as tn
from .config import ModelConfig
from .errors import ShapeError
from .poses import JOINT_GROUPS, JOINT_NAMES, PoseWindow
from .tensor import Tensor

logger = logging.getLogger(__name__)

# right_ankle .. head, LSP order
COCO_SIGMAS = np.array(
    [0.089, 0.087, 0.107, 0.107, 0.087, 0.089, 0.062, 0.072, 0.079, 0.079, 0.072, 0.062, 0.079, 0.026]
)
OKS_THRESHOLDS = np.round(0.50 + 0.05 * np.arange(10), 2)


class OksParams(BaseModel):
    k: List[float] = Field(default_factory=lambda: (2 * COCO_SIGMAS).tolist(), description="Per-joint falloff")
    scale_mode: Literal["bbox_diagonal", "bbox_area", "fixed"] = "bbox_diagonal"
    fixed_scale: float = Field(1.0, gt=0)

    @field_validator("k")
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if not value or min(value) <= 0:
            raise ValueError("every k must be positive")
        return value

    @classmethod
    def from_config(cls, config: ModelConfig) -> "OksParams":
        k = (2 * COCO_SIGMAS).tolist() if config.joints == len(COCO_SIGMAS) else [2 * 0.079] * config.joints
        return cls(k=k, scale_mode=config.oks_scale_mode, fixed_scale=config.oks_fixed_scale)

    def k_array(self, joints: int) -> np.ndarray:
        if len(self.k) != joints:
            raise ShapeError(f"OKS constants cover {len(self.k)} joints, pose has {joints}")
        return np.asarray(self.k)


class LossWeights(BaseModel):
    lambda_vel: float = Field(0.05, ge=0, allow_inf_nan=False)


def object_scale(gt: np.ndarray, vis: np.ndarray, params: OksParams) -> float:
    """Scale s of one ground-truth pose [J][2]."""
    if params.scale_mode == "fixed":
        return params.fixed_scale
    visible = gt[vis > 0]
    if len(visible) == 0:
        return params.fixed_scale
    width, height = visible.max(axis=0) - visible.min(axis=0)
    if params.scale_mode == "bbox_area":
        scale = float(np.sqrt(width * height))
    else:
        scale = float(np.hypot(width, height))
    return scale if scale > 1e-12 else params.fixed_scale


def _joint_similarity(pred: np.ndarray, gt: np.ndarray, scale: float, k: np.ndarray) -> np.ndarray:
    d2 = np.sum((pred - gt) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * scale**2 * k**2))


def oks(pred: np.ndarray, gt: np.ndarray, vis: np.ndarray, params: Optional[OksParams] = None) -> float:
    """Object keypoint similarity of one pose, in [0, 1]."""
    params = params or OksParams()
    pred, gt, vis = np.asarray(pred, float), np.asarray(gt, float), np.asarray(vis, float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 2 or vis.shape != gt.shape[:1]:
        raise ShapeError(f"oks expects [J][2] poses and [J] visibility, got {pred.shape}, {gt.shape}, {vis.shape}")
    mask = vis > 0
    if not mask.any():
        raise ValueError("oks needs at least one visible joint")
    sim = _joint_similarity(pred, gt, object_scale(gt, vis, params), params.k_array(len(gt)))
    return float(sim[mask].sum() / mask.sum())


def _as_pred_tensor(pred: Union[Tensor, PoseWindow, np.ndarray]) -> Tensor:
    if isinstance(pred, PoseWindow):
        return Tensor(pred.coords)
    return tn.as_tensor(pred)


def _check_pair(pred: Tensor, gt: PoseWindow) -> None:
    if pred.shape != gt.coords.shape:
        raise ShapeError(f"prediction {pred.shape} does not match ground truth {gt.coords.shape}")


def frame_oks(pred: Union[Tensor, PoseWindow], gt: PoseWindow, params: Optional[OksParams] = None) -> Tensor:
    """Differentiable OKS per frame, shape [T]."""
    params = params or OksParams()
    pred = _as_pred_tensor(pred)
    _check_pair(pred, gt)
    vis = gt.visibility_or_ones()
    counts = vis.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("every frame needs at least one visible joint")
    k = params.k_array(gt.joints)
    scales = np.array([object_scale(g, v, params) for g, v in zip(gt.coords, vis)])
    diff = pred - gt.coords
    d2 = (diff * diff).sum(axis=-1)
    denom = 2.0 * scales[:, None] ** 2 * k[None, :] ** 2
    sim = tn.exp(d2 * (-1.0 / denom))
    return (sim * vis).sum(axis=1) * (1.0 / counts)


def loss_oks(pred: Union[Tensor, PoseWindow], gt: PoseWindow, params: Optional[OksParams] = None) -> Tensor:
    """1 - mean OKS over the window's frames."""
    return 1.0 - frame_oks(pred, gt, params).mean()


def loss_vel(pred: Union[Tensor, PoseWindow], gt: PoseWindow) -> Tensor:
    """Mean squared error of frame-to-frame keypoint velocities; 0 for T = 1."""
    pred = _as_pred_tensor(pred)
    _check_pair(pred, gt)
    frames, joints = gt.frames, gt.joints
    if frames < 2:
        return (pred * 0.0).sum()
    v_pred = pred[1:] - pred[:-1]
    v_gt = gt.coords[1:] - gt.coords[:-1]
    err = v_pred - v_gt
    return (err * err).sum() * (1.0 / ((frames - 1) * joints))


@dataclass
class LossTerms:
    total: Tensor
    oks: Tensor
    vel: Tensor


def loss_terms(
    pred: Union[Tensor, PoseWindow],
    gt: PoseWindow,
    weights: Optional[LossWeights] = None,
    params: Optional[OksParams] = None,
) -> LossTerms:
    weights = weights or LossWeights()
    l_oks = loss_oks(pred, gt, params)
    l_vel = loss_vel(pred, gt)
    return LossTerms(l_oks + l_vel * weights.lambda_vel, l_oks, l_vel)


def total_loss(
    pred: Union[Tensor, PoseWindow],
    gt: PoseWindow,
    weights: Optional[LossWeights] = None,
    params: Optional[OksParams] = None,
) -> Tensor:
    """L = L_oks + lambda_vel * L_vel."""
    return loss_terms(pred, gt, weights, params).total


def ap_from_scores(scores: Sequence[float]) -> Tuple[float, float, float]:
    """(AP, AP50, AP75) where recall at a threshold is the share of scores
    at or above it and AP averages recall over 0.50, 0.55, ..., 0.95."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot compute AP over an empty frame set")
    recall = (scores[None, :] >= OKS_THRESHOLDS[:, None]).mean(axis=1)
    return float(recall.mean()), float(recall[0]), float(recall[5])


class APReport(BaseModel):
    """AP, AP50, AP75 as fractions in [0, 1]; per_joint / per_group AP too."""

    ap: float
    ap50: float
    ap75: float
    frames: int
    mean_oks: float
    per_joint: Dict[str, float]
    per_group: Dict[str, float]

    def percent(self) -> Dict[str, float]:
        return {"AP": 100 * self.ap, "AP50": 100 * self.ap50, "AP75": 100 * self.ap75}

    def joint_table(self) -> pd.DataFrame:
        """One row in percent: groups left to right, then AP columns."""
        row = {name: 100 * value for name, value in self.per_group.items()}
        row.update(self.percent())
        return pd.DataFrame([row])


def evaluate_ap(
    preds: Union[np.ndarray, Sequence[np.ndarray]],
    gts: PoseWindow,
    params: Optional[OksParams] = None,
) -> APReport:
    """Single-person OKS-AP over frames.

    ``preds`` is [F][J][2]; ``gts`` holds the matching F ground-truth frames.
    """
    params = params or OksParams()
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[0] == 0:
        raise ValueError(f"evaluate_ap needs a non-empty [F][J][2] array, got {preds.shape}")
    if preds.shape != gts.coords.shape:
        raise ShapeError(f"predictions {preds.shape} vs ground truth {gts.coords.shape}")
    vis = gts.visibility_or_ones()
    k = params.k_array(gts.joints)
    scores = np.array([oks(p, g, v, params) for p, g, v in zip(preds, gts.coords, vis)])
    ap, ap50, ap75 = ap_from_scores(scores)

    scales = np.array([object_scale(g, v, params) for g, v in zip(gts.coords, vis)])
    joint_sim = _joint_similarity(preds, gts.coords, scales[:, None], k[None, :])
    names = JOINT_NAMES if gts.joints == len(JOINT_NAMES) else [f"joint_{j}" for j in range(gts.joints)]
    per_joint = {}
    for j, name in enumerate(names):
        visible = vis[:, j] > 0
        per_joint[name] = ap_from_scores(joint_sim[visible, j])[0] if visible.any() else float("nan")
    per_group = {}
    if gts.joints == len(JOINT_NAMES):
        for group, members in JOINT_GROUPS.items():
            per_group[group] = float(np.nanmean([per_joint[JOINT_NAMES[m]] for m in members]))
    report = APReport(
        ap=ap, ap50=ap50, ap75=ap75, frames=len(scores), mean_oks=float(scores.mean()),
        per_joint=per_joint, per_group=per_group,
    )
    logger.debug(f"AP {report.ap:.4f} AP50 {report.ap50:.4f} AP75 {report.ap75:.4f} over {report.frames} frames")
    return report
