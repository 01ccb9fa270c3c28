"""Exception types shared across the package."""


class PolysslError(Exception):
    """Base class for all package errors."""


# --- monomer grammar ---------------------------------------------------------

class ParseError(PolysslError):
    """Base class for monomer grammar errors."""


class EmptyInput(ParseError):
    pass


class UnsupportedToken(ParseError):
    pass


class UnclosedRing(ParseError):
    pass


class UnbalancedParenthesis(ParseError):
    pass


# --- polymer assembly --------------------------------------------------------

class NoAttachmentPoint(PolysslError):
    pass


class InvalidStoichiometry(PolysslError):
    pass


class UnknownElement(PolysslError):
    pass


class InvalidCount(PolysslError):
    pass


# --- dataset files -----------------------------------------------------------

class SchemaViolation(PolysslError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IoFailure(PolysslError):
    pass


# --- partitioning ------------------------------------------------------------

class SizeOutOfRange(PolysslError):
    pass


class TooManyParts(PolysslError):
    pass


class SelectionInfeasible(PolysslError):
    pass


class EmptyPatch(PolysslError):
    pass


# --- differentiable core -----------------------------------------------------

class ShapeMismatch(PolysslError):
    pass


class NonFiniteValue(PolysslError):
    pass


class NameSetMismatch(PolysslError):
    pass


# --- training ----------------------------------------------------------------

class EmptyBatch(PolysslError):
    pass


class MissingHead(PolysslError):
    pass


# --- pipeline ----------------------------------------------------------------

class DatasetTooSmall(PolysslError):
    pass


class LabelMissing(PolysslError):
    pass


class ClassAbsent(PolysslError):
    pass


class DegenerateVariance(PolysslError):
    pass


class FractionTooSmall(PolysslError):
    pass


# --- cli ---------------------------------------------------------------------

class ConfigError(PolysslError):
    pass
