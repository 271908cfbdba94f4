"""Exception hierarchy shared by all locbench modules."""


class LocbenchError(Exception):
    """Base class for every error raised by locbench."""


class GeometryError(LocbenchError):
    pass


class ZeroNorm(GeometryError):
    """A blended quaternion cancelled out (antipodal inputs)."""


class DegenerateBaseline(GeometryError):
    """Camera centers coincide or the triangulation angle is too small."""


class BehindCamera(GeometryError):
    """A triangulated point fails the cheirality check."""


class RansacFailed(GeometryError):
    """No hypothesis reached the minimum number of inliers."""


class RetrievalError(LocbenchError):
    pass


class ZeroDescriptor(RetrievalError):
    def __init__(self, image_id):
        super().__init__(f"descriptor of {image_id!r} has zero norm")
        self.image_id = image_id


class DimensionMismatch(RetrievalError):
    pass


class EmptyDatabase(RetrievalError):
    pass


class NotNormalized(RetrievalError):
    pass


class MissingPose(LocbenchError):
    def __init__(self, image_id):
        super().__init__(f"no pose for image {image_id!r}")
        self.image_id = image_id


class MissingGroundTruth(LocbenchError):
    def __init__(self, image_id):
        super().__init__(f"no ground-truth pose for query {image_id!r}")
        self.image_id = image_id


class ConfigError(LocbenchError):
    pass


class DataError(LocbenchError):
    """Base class for dataset and file-format problems."""


class ParseError(DataError):
    def __init__(self, file, line, reason):
        super().__init__(f"{file}:{line}: {reason}")
        self.file = str(file)
        self.line = line
        self.reason = reason


class MissingFile(DataError):
    pass


class CrossRefError(DataError):
    def __init__(self, image_id, reason="unknown image"):
        super().__init__(f"{reason}: {image_id!r}")
        self.image_id = image_id


class NonUnitQuaternion(DataError):
    pass
