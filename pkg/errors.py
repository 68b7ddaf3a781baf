# errors.py
"""Exception hierarchy shared by every module.

The CLI maps the two families to exit codes: DataError -> 3,
NumericalError -> 4, ConfigError/DomainError -> 2.
"""


class ExtremeCastError(Exception):
    """Base class for all errors raised by this project."""

    exit_code = 1


class DataError(ExtremeCastError):
    """Input data is malformed, inconsistent or insufficient."""

    exit_code = 3


class NumericalError(ExtremeCastError):
    """A computation produced an undefined or non-finite result."""

    exit_code = 4


class ConfigError(ExtremeCastError, ValueError):
    """Invalid configuration value."""

    exit_code = 2


class DomainError(ExtremeCastError, ValueError):
    """A parameter lies outside the domain of the function."""

    exit_code = 2


class DimensionError(DataError):
    """Array dimensions do not agree."""


class StructureError(DataError):
    """A composite structure (e.g. a region partition) is inconsistent."""


class BoundsError(DataError):
    """A coordinate falls outside the grid's geographic bounds."""


class CalendarError(DataError):
    """Month, day or hour out of range."""


class EmptyCorpus(DataError):
    """A training stream yielded no grids."""


class EmptySample(DataError):
    """A sample set is empty."""


class DegenerateSample(DataError):
    """A sample set is too small or has zero variance."""


class DegenerateVariable(DataError):
    """A variable has zero variance over the fit period."""

    def __init__(self, channel, name=None):
        self.channel = channel
        label = f"{channel} ({name})" if name else f"{channel}"
        super().__init__(f"Variable {label} has zero variance over the fit period")


class MissingClimatology(DataError):
    """No climatology bucket exists for a (month, hour) pair."""

    def __init__(self, month, hour):
        self.month = month
        self.hour = hour
        super().__init__(f"No climatology for month={month}, hour={hour}")


class FormatError(DataError):
    """A file does not follow its declared on-disk format."""


class DegenerateSpectrum(NumericalError):
    """Spectral energy is zero, so ratios are undefined."""


class NoValidMemory(NumericalError):
    """Every memory entry offered to attention is masked out."""


class TrainingDiverged(NumericalError):
    """The training loss became NaN or infinite."""

    def __init__(self, epoch, step, checkpoint_path=None):
        self.epoch = epoch
        self.step = step
        self.checkpoint_path = checkpoint_path
        where = f"; last finite checkpoint at {checkpoint_path}" if checkpoint_path else ""
        super().__init__(f"Loss diverged at epoch {epoch}, step {step}{where}")


class GradientCheckFailed(NumericalError):
    """Autograd and finite-difference gradients disagree."""
