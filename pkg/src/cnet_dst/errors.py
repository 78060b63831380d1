"""Exception hierarchy shared across the package."""


class CnetDstError(Exception):
    """Base class for all errors raised by cnet_dst."""


class StructureError(CnetDstError, ValueError):
    """Input violates a structural precondition (empty input, bad shapes, misalignment)."""


class CnetParseError(StructureError):
    """A confusion network file could not be parsed."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class DegenerateWeightsError(StructureError):
    """Weighted pooling was asked to combine hypotheses whose scores are all zero."""


class ConfigError(CnetDstError, ValueError):
    pass


class CorpusError(CnetDstError):
    """A corpus record failed validation."""

    def __init__(self, message, dialog_id=None):
        self.dialog_id = dialog_id
        if dialog_id is not None:
            message = f"dialog {dialog_id}: {message}"
        super().__init__(message)


class TrainingError(CnetDstError, ArithmeticError):
    pass


class GradCheckError(CnetDstError):
    pass


class CheckpointError(CnetDstError):
    """A checkpoint file is corrupt or incompatible.  ``field`` names the offending part."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
