"""
Error hierarchy shared by every dualseq module
"""

from typing import List, Optional


class DualSeqError(Exception):
    """Base class for all dualseq failures"""


class DimensionError(DualSeqError, ValueError):
    """A vector or matrix does not have the width a layer, cell or block expects"""


class NumericalError(DualSeqError, ArithmeticError):
    """Non-finite values, diverging losses or non-deterministic objectives"""


class ConfigurationError(DualSeqError, ValueError):
    """Invalid hyperparameters or configuration files"""


class GenerationError(DualSeqError, RuntimeError):
    """The synthetic cohort generator could not satisfy its configuration"""


class CheckpointError(DualSeqError, ValueError):
    """A model checkpoint is unreadable or incompatible"""


class CohortValidationError(DualSeqError, ValueError):
    """
    A patient record or cohort file violates the data model

    Args:
        message: Summary of the failure
        violations: Every violation found, each prefixed by its field path
        line: 1-based line number in the source file, when reading from disk
    """

    def __init__(self, message: str, violations: Optional[List[str]] = None, line: Optional[int] = None):
        self.violations = list(violations or [])
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        detail = f" ({'; '.join(self.violations)})" if self.violations else ""
        super().__init__(f"{prefix}{message}{detail}")
