"""
Shared enum definitions for the pencil toolkit.
"""

from enum import Enum, IntEnum


class UnaryOp(Enum):
    """Unary nodes of the expression language"""
    NEG = "-"
    SIN = "sin"
    COS = "cos"
    SQRT = "sqrt"


class BinaryOp(Enum):
    """Binary nodes of the expression language"""
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"
    POW = "^"


class PipelineStage(Enum):
    """Stage tags attached to errors raised while canonizing"""
    PARSE = "parse"
    SAMPLE = "sample"
    PROFILE = "profile"
    RANKS = "ranks"
    SHIFT = "shift"
    SPLIT = "spectral_split"
    REDUCE_N = "reduce_n"
    INVERT = "invert_blocks"
    REDUCE_M = "reduce_m"
    ASSEMBLE = "assemble"
    VERIFY = "verify"


class ShiftStrategy(Enum):
    FORCED = "forced"
    CONSTANT = "constant"
    BRANCH_MEAN = "branch_mean"


class WitnessMode(Enum):
    """How the generator draws P0, Q0"""
    IDENTITY = "identity"
    RANDOM = "random"


class ReportKind(Enum):
    EQUIVALENCE = "equivalence"
    SIMILARITY = "similarity"


class ExitCode(IntEnum):
    """Stable process exit codes of the command line front end"""
    PASS = 0
    INPUT_ERROR = 1
    HYPOTHESIS_VIOLATION = 2
    CONDITIONING_FAILURE = 3
    VERIFICATION_FAILURE = 4
