"""Exception types shared across the package."""


class TfoptError(Exception):
    """Base class for all package errors."""


class VolumeFormatError(TfoptError):
    """Raw payload or metadata does not describe a valid volume."""


class DegenerateVolumeError(TfoptError):
    """Volume has a constant value field; the TF domain would collapse."""


class TFFormatError(TfoptError):
    """Transfer-function file is malformed or violates its invariants."""


class ScorerError(TfoptError):
    """A scorer failed to produce a usable loss/gradient pair."""


class ProtocolError(ScorerError):
    """Wire-protocol violation while talking to a remote scorer."""


class ConfigError(TfoptError):
    """Run configuration failed validation.

    `field` names the offending config key when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
