"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, DataError
exits 2, DivergenceError exits 3.
"""


class DataError(Exception):
    """Invalid input data: malformed files, broken invariants, bad shapes."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, fold_id=None, epoch=None):
        super().__init__(message)
        self.fold_id = fold_id
        self.epoch = epoch
