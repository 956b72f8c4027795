"""
Error types raised by the routine engine.

Errors that describe bad user input also derive from ValueError so callers
that only know the builtin keep working.
"""
from typing import Optional


class RoutineError(Exception):
    """Base class for every engine error."""


# ---------------------------------------------------------------------------
# Routine documents
# ---------------------------------------------------------------------------

class SpecError(RoutineError, ValueError):
    """A routine document could not be turned into a RoutineSpec."""

    def __init__(self, message: str, path: str = "", line: Optional[int] = None,
                 column: Optional[int] = None):
        self.path = path
        self.line = line
        self.column = column
        location = []
        if path:
            location.append(f"at '{path}'")
        if line is not None:
            location.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        suffix = f" ({'; '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.message = message


class SpecSyntaxError(SpecError):
    """Document is not well-formed YAML/JSON."""


class UnknownKeyError(SpecError):
    """Document contains a key the schema does not define."""


class UnknownValueError(SpecError):
    """Document names a component that is not registered."""

    def __init__(self, value: str, kind: str, path: str = "", line: Optional[int] = None):
        self.value = value
        self.kind = kind
        super().__init__(f"unknown {kind} '{value}'", path=path, line=line)


class DanglingReferenceError(SpecError):
    """A loss or phase references a relation/loss that is not declared."""


class SpecValidationError(SpecError):
    """Any other schema violation."""


class WeightArityError(SpecValidationError):
    """Weights list length differs from the components list."""


class UnknownPresetError(SpecError):
    pass


class UnknownKnobError(SpecError):
    pass


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

class RegistryError(RoutineError):
    pass


class DuplicateRegistrationError(RegistryError, ValueError):
    pass


class UnknownComponentError(RegistryError, KeyError):
    pass


# ---------------------------------------------------------------------------
# Compilation against a model and a dataset
# ---------------------------------------------------------------------------

class CompileError(RoutineError, ValueError):
    pass


class MissingDataKeyError(CompileError):
    pass


class MissingMethodError(CompileError):
    pass


class DimensionMismatchError(CompileError):
    pass


class IncompatibleSamplerError(CompileError):
    pass


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

class DataError(RoutineError, ValueError):
    pass


class UnparseableCellError(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column '{column}': cannot parse '{value}' as a number")


class RaggedRowError(DataError):
    def __init__(self, row: int, detail: str = ""):
        self.row = row
        super().__init__(f"row {row} has the wrong number of fields" + (f": {detail}" if detail else ""))


class EmptyFeatureSetError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


# ---------------------------------------------------------------------------
# Numerics
# ---------------------------------------------------------------------------

class DomainError(RoutineError, ValueError):
    """Operation evaluated outside its domain (e.g. log of a negative value)."""


class NonScalarLossError(RoutineError, ValueError):
    pass


class CalibrationError(RoutineError):
    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(message if row is None else f"{message} (row {row})")


class EigenSolverError(RoutineError, ValueError):
    pass


class CurveFitError(RoutineError):
    pass


# ---------------------------------------------------------------------------
# Training and inference
# ---------------------------------------------------------------------------

class TrainingError(RoutineError):
    pass


class NonFiniteLossError(TrainingError):
    pass


class NonFiniteGradientError(TrainingError):
    def __init__(self, parameter: str):
        self.parameter = parameter
        super().__init__(f"non-finite gradient for parameter '{parameter}'")


class UnsupportedOperationError(RoutineError):
    pass
