"""Exception taxonomy shared by every module.

Each error carries a machine-parsable ``category`` slug used by the CLI's
single-line error reporting (``<category>: <message>``).
"""


class RcldtError(Exception):
    category = "error"


class DimensionError(RcldtError):
    """Tensor shapes do not satisfy an operation's contract."""

    category = "dimension-error"


class ConfigError(RcldtError):
    """Invalid model, schedule or run configuration."""

    category = "config-error"


class TimestepError(RcldtError):
    """Timestep outside [0, T)."""

    category = "timestep-error"


class ModeError(RcldtError):
    """Conditioning mode mismatch or missing conditioning input."""

    category = "mode-error"


class ContractError(RcldtError):
    """API precondition violated (e.g. backward on a non-scalar)."""

    category = "contract-error"


class NumericError(RcldtError):
    """Non-finite value produced where strict mode forbids it."""

    category = "numeric-error"


class DivergenceError(RcldtError):
    """Training loss became non-finite."""

    category = "divergence-error"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class LoadError(RcldtError):
    """Checkpoint file corrupt, truncated or incompatible."""

    category = "load-error"


class IngestionError(RcldtError):
    """Dataset file unreadable or inconsistent."""

    category = "ingestion-error"


class InputError(RcldtError):
    """Invalid runtime input (empty set, bad fractions, ...)."""

    category = "input-error"


class RangeError(RcldtError):
    """Value outside its documented range in strict mode."""

    category = "range-error"


class UsageError(RcldtError):
    """Bad command line invocation."""

    category = "usage-error"
