"""Skeleton and 2D-detection containers for the 18-joint Coco convention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COCO_JOINT_NAMES = (
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
)

NUM_JOINTS = len(COCO_JOINT_NAMES)
NECK = COCO_JOINT_NAMES.index("neck")


@dataclass
class Skeleton3D:
    """J metric keypoints in the color-camera frame with validity flags."""

    points: np.ndarray  # (J, 3) meters
    valid: np.ndarray  # (J,) bool
    confidence: np.ndarray | None = None  # (J,) in [0, 1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if self.confidence is None:
            self.confidence = np.where(self.valid, 1.0, 0.0)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        j = self.points.shape[0]
        if self.valid.shape[0] != j or self.confidence.shape[0] != j:
            raise ValueError("points, valid and confidence must agree on joint count")
        if not np.all(np.isfinite(self.points[self.valid])):
            raise ValueError("valid joints must have finite coordinates")

    @property
    def num_joints(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls, num_joints: int = NUM_JOINTS) -> "Skeleton3D":
        return cls(np.zeros((num_joints, 3)), np.zeros(num_joints, dtype=bool))

    def copy(self) -> "Skeleton3D":
        return Skeleton3D(self.points.copy(), self.valid.copy(), self.confidence.copy())


@dataclass
class Keypoints2D:
    """2D detections with confidences; invalid entries mark missed joints."""

    uv: np.ndarray  # (J, 2) pixels
    confidence: np.ndarray  # (J,) in [0, 1]
    valid: np.ndarray  # (J,) bool

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        j = self.uv.shape[0]
        if self.confidence.shape[0] != j or self.valid.shape[0] != j:
            raise ValueError("uv, confidence and valid must agree on joint count")
        conf = self.confidence[self.valid]
        if conf.size and (conf.min() < 0 or conf.max() > 1):
            raise ValueError("confidences must lie in [0, 1]")

    @property
    def num_joints(self) -> int:
        return self.uv.shape[0]

    @classmethod
    def empty(cls, num_joints: int = NUM_JOINTS) -> "Keypoints2D":
        return cls(
            np.zeros((num_joints, 2)),
            np.zeros(num_joints),
            np.zeros(num_joints, dtype=bool),
        )


@dataclass(frozen=True)
class HandNormal:
    """Unit palm normal for one hand."""

    direction: np.ndarray  # (3,) unit vector
    side: str  # "left" or "right"

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("hand normal must be unit length within 1e-9")
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        object.__setattr__(self, "direction", d)
