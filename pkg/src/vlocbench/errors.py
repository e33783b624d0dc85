"""Exception types shared across the benchmark."""


class VlocBenchError(Exception):
    """Base class for all benchmark errors."""


class DegenerateGeometry(VlocBenchError):
    """Geometric configuration does not constrain a solution (collinear points,
    parallel rays, zero baseline)."""


class InsufficientObservations(VlocBenchError):
    """Fewer observations than the operation needs."""


class InsufficientCorrespondences(VlocBenchError):
    """Not enough 2D-3D correspondences to attempt robust pose estimation."""


class NoConsensus(VlocBenchError):
    """RANSAC found no model reaching the minimum inlier count."""


class DegenerateOrientation(VlocBenchError):
    """Orientation cannot be projected to a planar heading (forward axis vertical)."""


class InvalidSpec(VlocBenchError):
    """World or scenario specification is malformed."""


class EmptyGallery(VlocBenchError):
    """Gallery construction produced no keyframes."""


class MissingBaseline(VlocBenchError):
    """Report requested but odometry-only baseline results are absent."""


class StallDetected(VlocBenchError):
    """Episode made no route progress repeatedly and cannot continue."""


class ConfigError(VlocBenchError):
    """Scenario configuration file is invalid."""
