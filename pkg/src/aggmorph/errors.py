"""Exception hierarchy shared by every aggmorph module."""


class AggmorphError(ValueError):
    """Base class for all validation and numerical failures raised by aggmorph."""


# mesh geometry
class NonWatertight(AggmorphError):
    def __init__(self, edge, count):
        self.edge = tuple(int(v) for v in edge)
        self.count = int(count)
        super().__init__(f"edge {self.edge} is shared by {self.count} faces (expected 2)")


class InconsistentOrientation(AggmorphError):
    def __init__(self, edge):
        self.edge = tuple(int(v) for v in edge)
        super().__init__(f"edge {self.edge} is traversed in the same direction by both faces")


class InvalidMesh(AggmorphError):
    pass


class DegenerateInput(AggmorphError):
    pass


class ZeroExtent(AggmorphError):
    pass


class NonPositiveInput(AggmorphError):
    pass


class InsufficientPoints(AggmorphError):
    pass


# silhouettes
class OutOfFrame(AggmorphError):
    pass


class EmptyMesh(AggmorphError):
    pass


class NoForeground(AggmorphError):
    pass


class SelfIntersecting(AggmorphError):
    pass


class DegeneratePolygon(AggmorphError):
    pass


class OrderViolation(AggmorphError):
    pass


# registration
class InsufficientViews(AggmorphError):
    pass


class IllConditioned(AggmorphError):
    pass


class Degenerate(AggmorphError):
    pass


class CountMismatch(AggmorphError):
    pass


class LabelMismatch(AggmorphError):
    pass


class InsufficientCorrespondences(AggmorphError):
    pass


class MissingLabel(AggmorphError):
    pass


class ZeroLocalDistance(AggmorphError):
    pass


# sfm
class AtInfinity(AggmorphError):
    pass


class BehindCamera(AtInfinity):
    pass


class ProjectionError(AggmorphError):
    """A projection failed while evaluating an objective; carries the observation."""

    def __init__(self, index, camera, point, cause):
        self.index, self.camera, self.point = index, camera, point
        super().__init__(f"observation {index} (camera {camera}, point {point}): {cause}")


class InvalidScene(AggmorphError):
    pass


class DivergenceDetected(AggmorphError):
    pass


class SingularSystem(AggmorphError):
    pass


class UnderConstrained(AggmorphError):
    pass


class InvalidConfig(AggmorphError):
    pass


# statistics
class EmptyInput(AggmorphError):
    pass


class NonPositiveMeasurement(AggmorphError):
    pass


class InsufficientSamples(AggmorphError):
    pass


class ZeroMean(AggmorphError):
    pass


class EmptyViews(AggmorphError):
    pass


# file formats
class UnsupportedFormat(AggmorphError):
    pass


class MalformedRecord(AggmorphError):
    def __init__(self, path, location, message):
        self.path, self.location = str(path), location
        super().__init__(f"{path}: {location}: {message}")


class NonTriangular(AggmorphError):
    pass


class TruncatedFile(AggmorphError):
    pass
