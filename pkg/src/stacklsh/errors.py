"""Exception types shared across the package."""


class StackLshError(Exception):
    """Base class for all library-specific errors."""


class MalformedReport(StackLshError, ValueError):
    """Crash report is missing required fields or has an empty trace."""


class MalformedFrame(StackLshError, ValueError):
    """An 'at ...' frame line could not be parsed."""


class DuplicateId(StackLshError, ValueError):
    """Two reports in the same corpus share an id."""


class DomainError(StackLshError, ValueError):
    """A probability or similarity argument fell outside [0, 1]."""


class ShapeMismatch(StackLshError, ValueError):
    """Vector or hash-code shapes are incompatible."""


class ParamMismatch(StackLshError, ValueError):
    """Index parameters are incompatible with the hash family."""


class FamilyMismatch(StackLshError, ValueError):
    """Query family fingerprint does not match the index."""


class EmptyTokenSet(StackLshError, ValueError):
    """A trace produced no tokens to hash."""


class ZeroVector(StackLshError, ValueError):
    """A trace produced an all-zero feature vector."""


class EmptyBatch(StackLshError, ValueError):
    """A training batch contains no pairs."""


class InsufficientCorpus(StackLshError, ValueError):
    """The corpus is too small to form the requested training pairs."""


class NoEligibleQueries(StackLshError, ValueError):
    """No query satisfied the eligibility rule of a metric."""


class AllCombinationsExcluded(StackLshError, ValueError):
    """Every (L, K) combination in a sweep was rejected as extreme."""


class LengthMismatch(StackLshError, ValueError):
    """Two paired sequences have different lengths."""
