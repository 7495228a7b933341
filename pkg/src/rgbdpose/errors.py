"""Exception hierarchy shared across the package."""


class RgbdPoseError(Exception):
    """Base class for every error raised by this package."""


class DegenerateProjection(RgbdPoseError):
    """Point lies at or behind the camera plane (z <= 0)."""


class InvalidDepth(RgbdPoseError):
    """Depth value is zero or negative."""


class NoDepthAvailable(RgbdPoseError):
    """No valid depth pixel within the search radius."""


class ReferenceUnavailable(RgbdPoseError):
    """Reference point cannot be computed (no depth near the neck)."""


class OutOfGrid(RgbdPoseError):
    """World point falls outside the voxel cube."""


class ShapeError(RgbdPoseError):
    """Tensor or parameter shapes are incompatible."""


class NumericalError(RgbdPoseError):
    """Non-finite values encountered during network evaluation."""


class DataError(RgbdPoseError):
    """Dataset is empty, inconsistent, or otherwise unusable."""


class FormatError(RgbdPoseError):
    """On-disk artifact has a bad magic, is truncated, or malformed."""


class InvalidArgument(RgbdPoseError, ValueError):
    """Caller passed an argument outside its documented domain."""


class InsufficientCorrespondences(RgbdPoseError):
    """Fewer than two joints valid in both skeletons."""


class DegenerateInput(RgbdPoseError):
    """Point set has no spatial spread; scale is unrecoverable."""


class InsufficientViews(RgbdPoseError):
    """Fewer than two views observe the joint."""


class DegenerateGeometry(RgbdPoseError):
    """Triangulation system is rank deficient (parallel rays)."""


class DegenerateHand(RgbdPoseError):
    """Hand keypoints are collinear or coincident."""


class NoComparableJoints(RgbdPoseError):
    """Prediction and ground truth share no valid joints."""
