"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: configuration/data/contract problems
exit 3, runtime/numeric failures exit 4 (usage errors exit 2 via argparse).
"""


class SwimDiffError(Exception):
    """Base class for all package errors."""


class ParameterError(SwimDiffError, ValueError):
    """An argument violates an operation's preconditions."""


class ContractError(SwimDiffError, ValueError):
    """Inputs that should have been produced by this package violate an invariant."""


class ConfigurationError(SwimDiffError, ValueError):
    """A run configuration is internally inconsistent."""


class ManifestError(SwimDiffError, ValueError):
    """A tile manifest is malformed or self-contradictory."""


class FormatError(SwimDiffError, ValueError):
    """A file on disk does not decode to the expected format."""


class TrainingError(SwimDiffError, RuntimeError):
    """Training produced a non-finite loss or otherwise cannot continue."""


class CheckpointError(SwimDiffError, RuntimeError):
    """A checkpoint is corrupt or version-incompatible."""
