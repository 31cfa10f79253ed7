"""Exception hierarchy shared by the pipeline stages.

The CLI maps ``DataError`` to exit code 2 and ``NumericError`` to exit code 3.
"""


class EngageError(Exception):
    pass


class DataError(EngageError):
    """Invalid or inconsistent input data."""


class NumericError(EngageError):
    """A numerical procedure failed (e.g. did not converge)."""


# ingest

class MalformedLine(DataError):
    def __init__(self, line_no: int, reason: str = "malformed line"):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class ConfidenceOutOfRange(MalformedLine):
    def __init__(self, line_no: int, joint: int, value: float | None = None):
        self.joint = joint
        super().__init__(line_no, f"confidence {value!r} of joint {joint} outside [0, 1]")


class CoordinateOutOfRange(MalformedLine):
    def __init__(self, line_no: int, joint: int, reason: str):
        self.joint = joint
        super().__init__(line_no, f"joint {joint}: {reason}")


class NonMonotonicFrameIndex(MalformedLine):
    def __init__(self, line_no: int, frame: int, previous: int):
        super().__init__(line_no, f"frame index {frame} does not follow {previous}")


class EmptySession(DataError):
    pass


# heatmap / features

class AllJointsMissing(DataError):
    pass


class EmptyTrack(DataError):
    pass


class EmptyPredictions(DataError):
    pass


class EmptyWindow(DataError):
    pass


# net3d

class ShapeMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


# engagement

class SingleClassData(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class NoConvergence(NumericError):
    def __init__(self, max_iter: int):
        self.max_iter = max_iter
        super().__init__(f"SMO did not converge within {max_iter} iterations")


# synth

class InvalidMix(DataError):
    pass
