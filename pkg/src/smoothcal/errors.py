"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: InputError -> 1,
ParseError and I/O failures -> 2, NumericalError/OptimizerError -> 3.
"""


class InputError(ValueError):
    """Invalid argument, shape, or value supplied by the caller."""


class ParseError(ValueError):
    """Malformed file content; message carries the offending line number."""


class NumericalError(RuntimeError):
    """A linear solve or optimization failed for numerical reasons."""


class OptimizerError(RuntimeError):
    """Iterative training diverged; usually the step size is too large."""
