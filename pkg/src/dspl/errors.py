"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes (see cli.py): configuration
problems exit 2, data/model incompatibilities exit 3, numerical
divergence exits 4.
"""


class DsplError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DsplError):
    """Invalid configuration: bad values, unknown keys, impossible setups."""


class ShapeError(DsplError):
    """Tensor dimension mismatch, reported with the offending layer name."""


class ContractError(DsplError):
    """API precondition violated (stale tape, mismatched vector lengths...)."""


class ProtocolError(DsplError):
    """Evaluation protocol cannot be applied to the given probe/gallery sets."""


class DivergenceError(DsplError):
    """Training produced a non-finite loss or gradient.

    Carries the iteration and triplet index where the problem surfaced.
    """

    def __init__(self, message, iteration=None, triplet_index=None):
        super().__init__(message)
        self.iteration = iteration
        self.triplet_index = triplet_index
