"""
Lab Errors
==========
Exception hierarchy shared by every module. The CLI maps each class to an
exit code (see EXIT_CODES).
"""

from typing import Optional


class LabError(Exception):
    """Base class for all errors raised by pdpm_lab."""


class ContractError(LabError):
    """A documented precondition was violated by the caller."""


class DegenerateInputError(ContractError):
    """A batch row has (near) zero norm, so its cosine similarity is undefined."""

    def __init__(self, row: int, norm: float):
        super().__init__(f"row {row} has degenerate norm {norm:.3e} (must exceed 1e-12)")
        self.row = row
        self.norm = norm


class ShapeError(LabError):
    """Operand shapes are incompatible for an op."""

    def __init__(self, op: str, left: tuple, right: tuple, detail: str = ""):
        msg = f"{op}: incompatible shapes {tuple(left)} and {tuple(right)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)


class NumericError(LabError):
    """Non-finite values, vanishing denominators or a non-PSD covariance."""


class ConfigError(LabError):
    """Invalid configuration. Carries every offending field, not just the first."""

    def __init__(self, fields: list[tuple[str, str]]):
        self.fields = list(fields)
        lines = [f"  {name}: {reason}" for name, reason in self.fields]
        super().__init__("invalid configuration:\n" + "\n".join(lines))


class InsufficientDataError(LabError):
    """Too few converged collapse-probe pairs to report a statistic."""

    def __init__(self, count: int, required: int):
        super().__init__(f"only {count} converged probe pairs (need at least {required})")
        self.count = count
        self.required = required


class TrainingAborted(LabError):
    """A training run hit a non-finite loss or value."""

    def __init__(self, step: int, reason: str, last_checkpoint: Optional[str] = None):
        where = last_checkpoint or "none"
        super().__init__(f"training aborted at generator step {step}: {reason} "
                         f"(last good checkpoint: {where})")
        self.step = step
        self.reason = reason
        self.last_checkpoint = last_checkpoint


class IncompleteComparison(LabError):
    """At least one run of a comparison failed; `report` holds what finished."""

    def __init__(self, failures: list[str], report=None):
        super().__init__(f"{len(failures)} comparison run(s) failed: " + "; ".join(failures))
        self.failures = failures
        self.report = report


EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_INCOMPLETE = 4


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, (ConfigError, FileNotFoundError)):
        return EXIT_VALIDATION
    if isinstance(exc, IncompleteComparison):
        return EXIT_INCOMPLETE
    return EXIT_NUMERIC
