"""
Pose containers and the 14-joint skeleton shared by simulation, decoding and
evaluation.
"""

from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from .errors import ShapeError

JOINT_NAMES = [
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "neck",
    "head",
]

# Columns of the joint-wise AP table; left and right joints share a column.
JOINT_GROUPS: Dict[str, List[int]] = {
    "Head": [13],
    "Neck": [12],
    "Shoulder": [8, 9],
    "Elbow": [7, 10],
    "Wrist": [6, 11],
    "Hip": [2, 3],
    "Knee": [1, 4],
    "Ankle": [0, 5],
}

# Normalized (x, y) of a standing person facing the sensors.
TEMPLATE_POSE = np.array(
    [
        [0.45, 0.90],
        [0.45, 0.75],
        [0.46, 0.58],
        [0.54, 0.58],
        [0.55, 0.75],
        [0.55, 0.90],
        [0.36, 0.55],
        [0.38, 0.45],
        [0.42, 0.33],
        [0.58, 0.33],
        [0.62, 0.45],
        [0.64, 0.55],
        [0.50, 0.30],
        [0.50, 0.20],
    ]
)

# Depth of each joint relative to the body center, meters.
DEPTH_OFFSETS = np.array(
    [0.05, 0.02, 0.0, 0.0, 0.02, 0.05, -0.10, -0.05, 0.0, 0.0, -0.05, -0.10, 0.0, -0.02]
)


class PoseWindow(BaseModel):
    """Keypoints for the frames of one window.

    coords: [T][J][2] normalized to [0, 1]; visibility: [T][J] in {0, 1},
    present on ground truth only.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    coords: np.ndarray
    visibility: Optional[np.ndarray] = None
    start_frame: int = 0

    @field_validator("coords", mode="before")
    @classmethod
    def _as_coords(cls, value) -> np.ndarray:
        coords = np.asarray(value, dtype=np.float64)
        if coords.ndim != 3 or coords.shape[-1] != 2:
            raise ShapeError(f"pose coords must be [T][J][2], got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("pose coords must be finite")
        return coords

    @field_validator("visibility", mode="before")
    @classmethod
    def _as_visibility(cls, value) -> Optional[np.ndarray]:
        if value is None:
            return None
        vis = np.asarray(value, dtype=np.float64)
        if not np.all((vis == 0) | (vis == 1)):
            raise ValueError("visibility flags must be 0 or 1")
        return vis

    @model_validator(mode="after")
    def _check_shapes(self) -> "PoseWindow":
        if self.visibility is not None and self.visibility.shape != self.coords.shape[:2]:
            raise ShapeError(
                f"visibility {self.visibility.shape} does not match coords {self.coords.shape[:2]}"
            )
        return self

    @field_serializer("coords", "visibility")
    def _to_list(self, value: Optional[np.ndarray]):
        return None if value is None else value.tolist()

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def joints(self) -> int:
        return self.coords.shape[1]

    def frame(self, index: int) -> "PoseWindow":
        """Single-frame window holding frame ``index``."""
        vis = None if self.visibility is None else self.visibility[index : index + 1]
        return PoseWindow(
            coords=self.coords[index : index + 1], visibility=vis, start_frame=self.start_frame + index
        )

    def center(self) -> "PoseWindow":
        return self.frame(self.frames // 2)

    def visibility_or_ones(self) -> np.ndarray:
        if self.visibility is None:
            return np.ones(self.coords.shape[:2])
        return self.visibility


class FramePose(BaseModel):
    """One frame of a pose file; keypoints in image pixels."""

    frame: int = Field(..., ge=0)
    window: Optional[int] = Field(None, description="Window that produced this frame, predictions only")
    keypoints: List[Tuple[float, float]]
    visibility: Optional[List[int]] = None


class PoseFile(BaseModel):
    """JSON form of predictions or ground truth for a frame sequence."""

    image_width: int = Field(256, ge=1)
    image_height: int = Field(256, ge=1)
    frames: List[FramePose]

    def to_window(self) -> PoseWindow:
        """All frames as one normalized PoseWindow."""
        if not self.frames:
            raise ValueError("pose file has no frames")
        coords = np.array([f.keypoints for f in self.frames], dtype=np.float64)
        coords = coords / np.array([self.image_width, self.image_height])
        vis = None
        if all(f.visibility is not None for f in self.frames):
            vis = np.array([f.visibility for f in self.frames], dtype=np.float64)
        return PoseWindow(coords=coords, visibility=vis, start_frame=self.frames[0].frame)

    @classmethod
    def from_window(
        cls,
        window: PoseWindow,
        image_width: int = 256,
        image_height: int = 256,
        frame_ids: Optional[List[int]] = None,
        window_ids: Optional[List[int]] = None,
    ) -> "PoseFile":
        frame_ids = frame_ids or list(range(window.start_frame, window.start_frame + window.frames))
        pixels = window.coords * np.array([image_width, image_height])
        frames = []
        for i, frame in enumerate(frame_ids):
            vis = None if window.visibility is None else window.visibility[i].astype(int).tolist()
            frames.append(
                FramePose(
                    frame=frame,
                    window=None if window_ids is None else window_ids[i],
                    keypoints=[tuple(p) for p in pixels[i].tolist()],
                    visibility=vis,
                )
            )
        return cls(image_width=image_width, image_height=image_height, frames=frames)
