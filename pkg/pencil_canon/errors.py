"""
Exception tree for the pencil toolkit.

Three families map onto the command line exit codes: InputError (1),
HypothesisError (2) and NumericalError (3). A failed verification is not an
exception; it is a failing report.
"""
from __future__ import annotations
from typing import Any

from pencil_canon.enums import ExitCode, PipelineStage


class PencilError(Exception):
    exit_code: ExitCode = ExitCode.INPUT_ERROR

    def __init__(self, message: str, *, stage: PipelineStage | None = None, **details: Any):
        super().__init__(message)
        self.message = message
        self.stage = stage
        self.details: dict[str, Any] = details

    @property
    def kind(self) -> str:
        return type(self).__name__.removesuffix("Error")

    def tagged(self, stage: PipelineStage) -> PencilError:
        """Attach the pipeline stage unless an inner stage already claimed the error"""
        if self.stage is None:
            self.stage = stage
        return self

    def __str__(self) -> str:
        prefix = f"[{self.stage.value}] " if self.stage else ""
        return f"{prefix}{self.kind}: {self.message}"


# --------------------------------------------------------------------------- #
# Input errors                                                                #
# --------------------------------------------------------------------------- #

class InputError(PencilError):
    exit_code = ExitCode.INPUT_ERROR


class ExprSyntaxError(InputError):
    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}", offset=offset, text=text)
        self.offset = offset


class UnknownIdentifierError(InputError):
    pass


class VariableIndexError(InputError):
    pass


class EvaluationFault(InputError):
    def __init__(self, message: str, subexpression: str, point: tuple[float, ...] | None = None):
        where = f" at {point}" if point is not None else ""
        super().__init__(f"{message} in '{subexpression}'{where}", subexpression=subexpression, point=point)
        self.subexpression = subexpression
        self.point = point


class DimensionMismatchError(InputError):
    pass


class PencilFileError(InputError):
    pass


class GeneratorSpecError(InputError):
    pass


# --------------------------------------------------------------------------- #
# Hypothesis violations                                                       #
# --------------------------------------------------------------------------- #

class HypothesisError(PencilError):
    exit_code = ExitCode.HYPOTHESIS_VIOLATION


class SingularPencilError(HypothesisError):
    pass


class ComplexRootsError(HypothesisError):
    pass


class MultiplicityChangeError(HypothesisError):
    pass


class RootCollisionError(HypothesisError):
    pass


class RankChangeError(HypothesisError):
    pass


class FullRankError(HypothesisError):
    pass


class DegenerateStructureError(HypothesisError):
    pass


class NoShiftFoundError(HypothesisError):
    pass


class NonzeroEigenvalueError(HypothesisError):
    pass


class ClusterMismatchError(HypothesisError):
    pass


class GapTooSmallError(HypothesisError):
    pass


# --------------------------------------------------------------------------- #
# Numerical failures                                                          #
# --------------------------------------------------------------------------- #

class NumericalError(PencilError):
    exit_code = ExitCode.CONDITIONING_FAILURE


class SingularMatrixError(NumericalError):
    pass


class DependentColumnsError(NumericalError):
    pass


class SpectraOverlapError(NumericalError):
    pass


class ConditioningBlowupError(NumericalError):
    pass


class ResidualError(NumericalError):
    pass
