"""Exception types shared across the package."""


class KCLearnError(Exception):
    """Base class for all package-specific errors."""


class InvalidPairError(KCLearnError):
    """An ordered KC pair violates 0 <= a < b < n."""


class DimensionError(KCLearnError):
    """Operands disagree on genome length or KC count."""


class ConfigurationError(KCLearnError):
    """A configuration value violates its documented bounds."""


class StateError(KCLearnError):
    """An operation was invoked on objects in the wrong lifecycle state."""


class DataFormatError(KCLearnError):
    """A dataset file is malformed; the message carries row/field diagnostics."""


class ValidationError(KCLearnError):
    """Input data is well-formed but violates a structural invariant."""


class DecisionParseError(KCLearnError):
    """An agent reply is not the required JSON decision object."""
