"""Exception types shared across the library."""


class TriheatError(Exception):
    """Base class for all library-specific errors."""


class InvalidJointError(TriheatError, ValueError):
    """An operation touched a joint whose validity flag is False."""


class DegeneratePartError(TriheatError, ValueError):
    """A skeletal part has zero length where a direction is required."""


class UnknownPolarityError(TriheatError, ValueError):
    """A triplet stack carries no decodable depth polarity (masked or empty)."""


class DimensionError(TriheatError, ValueError):
    """Array arguments have incompatible or unexpected shapes."""


class InvalidInputError(TriheatError, ValueError):
    """Numeric input contains NaN/Inf where finite values are required."""


class ConfigError(TriheatError, ValueError):
    """A configuration value is outside its legal range."""


class ScalingUndefinedError(TriheatError, ValueError):
    """Voxel-to-metric scaling has no valid part to infer a scale from."""


class AlignmentDegenerateError(TriheatError, ValueError):
    """Procrustes alignment is underdetermined (collinear or too few joints)."""


class EmptyEvaluationError(TriheatError, ValueError):
    """No jointly valid joints were available for a metric."""


class InvalidRigError(TriheatError, ValueError):
    """A rig template violates its structural invariants."""


class GeometryError(TriheatError, ValueError):
    """A geometric primitive (box, transform) is degenerate."""


class NotReadyError(TriheatError, RuntimeError):
    """A component that requires training/initialization was used too early."""


class FormatError(TriheatError, ValueError):
    """A serialized file does not conform to its schema.

    ``line`` is the 1-based offending line for line-delimited formats,
    or None for binary/whole-file problems.
    """

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class TrainingDivergedError(TriheatError, RuntimeError):
    """Training produced a non-finite loss.

    ``last_state`` holds the most recent finite parameter snapshot so a
    caller can inspect or resume from it.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state
