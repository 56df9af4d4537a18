"""
Exception hierarchy for the multi-domain tagging engine.

Every error derives from MultibertError and from the builtin it refines, so
callers that only know about ValueError / KeyError keep working.
"""


class MultibertError(Exception):
    """Base class for all engine errors."""


# ========== TENSOR / NUMERICS ==========

class ShapeError(MultibertError, ValueError):
    """Tensor shapes are incompatible for an operation."""


class ParameterError(MultibertError, ValueError):
    """A hyperparameter or numeric argument is out of range."""


class ContractError(MultibertError, RuntimeError):
    """A pre-condition of an operation does not hold."""


class EmptyLossError(MultibertError, ValueError):
    """Every position of a loss was ignored."""


# ========== ENCODER INPUTS ==========

class LengthError(MultibertError, ValueError):
    """Input sequence is longer than the encoder accepts."""


class VocabError(MultibertError, ValueError):
    """Token id outside the encoder vocabulary."""


# ========== DATA ==========

class DataError(MultibertError, ValueError):
    """Corpus is empty or lacks a required domain."""


class ParseError(MultibertError, ValueError):
    """CoNLL input could not be parsed."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class InputError(MultibertError, ValueError):
    """Inference input is empty or malformed."""


# ========== REGISTRY ==========

class RegistrationError(MultibertError, ValueError):
    """Domain is already registered."""


class IdError(MultibertError, ValueError):
    """Adapter or head id collides with an existing one."""


class UnknownDomainError(MultibertError, KeyError):
    """Domain is not registered; the message lists the registered ones."""

    def __init__(self, domain, known):
        self.domain = domain
        self.known = sorted(known)
        super().__init__(domain)

    def __str__(self):
        known = ', '.join(self.known) if self.known else '(none)'
        return f"unknown domain '{self.domain}'. Registered domains: {known}"


class RoutingError(MultibertError, RuntimeError):
    """Router predicted a domain the registry cannot serve."""


class ConfigError(MultibertError, ValueError):
    """Experiment configuration is missing a key or holds an invalid value."""


# ========== BUNDLES ==========

class BundleError(MultibertError, ValueError):
    """Bundle file cannot be loaded."""


class BundleFormatError(BundleError):
    """Bundle header or manifest is unreadable."""


class BundleVersionError(BundleError):
    """Bundle was written by an incompatible format version."""


class BundleChecksumError(BundleError):
    """An array's bytes do not match the checksum recorded in the manifest."""


class BundleTruncatedError(BundleError):
    """Payload is shorter than the manifest index requires."""
