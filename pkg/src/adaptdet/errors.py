"""Exception hierarchy shared by every module."""


class AdaptDetError(Exception):
    """Base class for all package errors."""


class ParameterError(AdaptDetError, ValueError):
    """An argument is outside its legal range."""


class DomainError(ParameterError):
    """A knob value is outside its declared domain."""

    def __init__(self, knob, message):
        super().__init__(f"{knob}: {message}")
        self.knob = knob


class SingularFitError(AdaptDetError):
    """The regression system is rank deficient."""


class ModelMisuseError(AdaptDetError):
    """A model was queried with inputs it was not trained on."""


class SensorUnavailableError(AdaptDetError):
    """The offline log has no entry for the branch being sensed."""
