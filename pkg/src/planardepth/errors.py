"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """Invalid configuration, empty/inconsistent inputs, bad scene specs."""


class NumericalError(Exception):
    """Non-finite values or unsolvable linear systems during optimization.

    ``block_id`` identifies the offending residual block when known.
    """

    def __init__(self, message, block_id=None):
        super().__init__(message if block_id is None
                         else f"{message} (block {block_id})")
        self.block_id = block_id


class EvaluationError(Exception):
    """Evaluation requested on data with nothing to evaluate."""
