"""Exception hierarchy shared by every finocr module."""


class FinocrError(Exception):
    """Base class for all errors raised by finocr."""


# table model
class MalformedHtml(FinocrError, ValueError):
    pass


class InvalidSpan(FinocrError, ValueError):
    pass


class SpanOverflow(FinocrError, ValueError):
    pass


# tree edit distance
class TreeTooLarge(FinocrError, ValueError):
    pass


# metrics / shared input validation
class EmptyInput(FinocrError, ValueError):
    pass


class LengthMismatch(FinocrError, ValueError):
    pass


class IdSetMismatch(FinocrError, ValueError):
    pass


class RangeError(FinocrError, ValueError):
    pass


# cross-page merging
class UnknownId(FinocrError, KeyError):
    pass


class OrderViolation(FinocrError, ValueError):
    pass


# heading hierarchy reconstruction
class CropTooLarge(FinocrError, ValueError):
    pass


class MissingCrop(FinocrError, KeyError):
    pass


class LabelMismatch(FinocrError, ValueError):
    pass


class MalformedResponse(FinocrError, ValueError):
    pass


class MissingLabels(FinocrError, ValueError):
    def __init__(self, labels):
        self.labels = sorted(labels)
        super().__init__(f"response is missing labels {self.labels}")


class DuplicateLabel(FinocrError, ValueError):
    def __init__(self, label, levels):
        self.label = label
        self.levels = tuple(levels)
        super().__init__(f"label {label} assigned conflicting levels {self.levels}")


class IncompleteAssignment(FinocrError, ValueError):
    pass


# difficulty
class ZeroVariance(FinocrError, ValueError):
    pass


class TooFewRuns(FinocrError, ValueError):
    pass


# rl math
class TooFewSamples(FinocrError, ValueError):
    pass


# grounding
class DimMismatch(FinocrError, ValueError):
    pass


class DegenerateEnclosure(FinocrError, ValueError):
    pass


# generation service
class ServiceError(FinocrError):
    def __init__(self, status, body_excerpt=""):
        self.status = status
        self.body_excerpt = body_excerpt
        super().__init__(f"service returned HTTP {status}: {body_excerpt}")


class AuthFailure(ServiceError):
    pass


class RetriesExhausted(FinocrError):
    def __init__(self, attempts, last_error=None):
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"gave up after {attempts} attempts: {last_error!r}")


class Timeout(RetriesExhausted):
    """Every attempt timed out."""
