"""Exception hierarchy shared by all pipeline stages.

Each error carries the exit code the CLI maps it to: 2 for data problems,
3 for numeric failures.
"""


class VTPError(Exception):
    exit_code = 2

    @property
    def name(self) -> str:
        return type(self).__name__


class OutOfCorridor(VTPError):
    """A plane point lies farther than the corridor half-width from the centerline."""


class OutOfRange(VTPError):
    """A river coordinate lies outside the KM range or the corridor."""


class TooShort(VTPError):
    """A trip spans too little time to resample."""


class GaugeGap(VTPError):
    """No discharge reading is available close enough before a timestamp."""


class InsufficientData(VTPError):
    """Too few samples to fit the requested mixture."""


class EmptyKey(VTPError):
    """A density-field key has no fitted cell at all."""


class LookupFailure(VTPError):
    """A context lookup could not be resolved even after fallback."""


class ProfileGap(VTPError):
    """The typical profile is undefined somewhere along the horizon."""


class ShapeMismatch(VTPError):
    """Input arrays do not have the shapes the model was built for."""


class NonFiniteOutput(VTPError):
    exit_code = 3


class Diverged(VTPError):
    exit_code = 3
