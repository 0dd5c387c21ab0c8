"""Exception types shared across the package.

The hierarchy mirrors the process exit codes of the CLI: configuration
problems (1), data problems (2), numerical problems (3).
"""


class FedsimError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(FedsimError):
    """Invalid configuration values or incompatible dimensions."""


class DataError(FedsimError):
    """A dataset file that cannot be parsed or violates the schema."""


class NumericalError(FedsimError):
    """Non-finite values appeared where finite ones are required."""


class DivergenceError(NumericalError):
    """A local solve produced a non-finite iterate.

    Divergence is an expected experimental outcome, not a crash: the
    experiment harness catches this, records the round as diverged and
    lets the NaNs propagate into the aggregate.
    """

    def __init__(self, message, round_index=None, device_id=None):
        super().__init__(message)
        self.round_index = round_index
        self.device_id = device_id


class UndefinedDissimilarityError(FedsimError):
    """Gradient dissimilarity is undefined where the global gradient vanishes."""


class UndefinedInexactnessError(FedsimError):
    """Solver inexactness is undefined when the exact step has zero length."""


class TheoremInapplicableError(FedsimError):
    """The sufficient-decrease constant is non-positive, so no bound applies."""
