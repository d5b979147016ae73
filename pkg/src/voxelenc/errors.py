"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: input/validation problems exit with 2,
runtime/numerical failures with 3 (see voxelenc.cli).
"""


class VoxelencError(Exception):
    """Base class for all toolkit errors."""


class FormatError(VoxelencError, ValueError):
    """A file does not look like the format it claims to be (bad magic/header)."""


class CorruptionError(VoxelencError, ValueError):
    """A file has a valid header but an inconsistent or truncated payload."""


class ValidationError(VoxelencError, ValueError):
    """An input value violates a documented precondition or invariant."""


class ShapeError(VoxelencError, ValueError):
    """Array dimensions do not line up; message names both shapes."""


class UndefinedCorrelationError(VoxelencError, ArithmeticError):
    """Pearson correlation is undefined (zero variance in an argument)."""


class DegenerateSolutionError(VoxelencError, ArithmeticError):
    """Unregularized solve on a rank-deficient design; carries the null dimension."""

    def __init__(self, message, null_dim):
        super().__init__(message)
        self.null_dim = null_dim


class DegenerateTestError(VoxelencError, ArithmeticError):
    """Paired t-test with zero-variance, nonzero-mean differences."""


class ConvergenceError(VoxelencError, ArithmeticError):
    """Iterative solver hit its sweep budget; carries the final coefficient delta."""

    def __init__(self, message, delta):
        super().__init__(message)
        self.delta = delta


class TrainingError(VoxelencError, ArithmeticError):
    """Optimization diverged; carries the step index where loss became non-finite."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class ConfigError(VoxelencError, ValueError):
    """Pipeline configuration failed validation; carries every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in self.problems))
