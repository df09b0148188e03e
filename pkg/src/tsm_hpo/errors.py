"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class TsmHpoError(Exception):
    """Base class for all errors raised by tsm_hpo."""


# space


class ValueOffGrid(TsmHpoError, ValueError):
    """A value does not snap to a grid point of its hyperparameter."""


class IndexOutOfGrid(TsmHpoError, ValueError):
    """A bit fragment decodes to an index past the end of the grid."""


# evolve


class NonFiniteFitness(TsmHpoError, ValueError):
    pass


class DegenerateWeights(TsmHpoError, ValueError):
    pass


class UniquenessUnreachable(TsmHpoError):
    """The population cannot be made duplicate-free in the given space."""


class MissingFullFitness(TsmHpoError, ValueError):
    pass


# evaluation


class EvaluationError(TsmHpoError):
    """Base for evaluator failures; always carries the offending request id."""

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message if request_id is None else f"[{request_id}] {message}")
        self.request_id = request_id
        self.detail = message


class EvaluatorUnavailable(EvaluationError):
    pass


class MalformedResponse(EvaluationError):
    pass


class EvaluationFailed(EvaluationError):
    pass


class UnknownObjectiveKind(TsmHpoError, ValueError):
    pass


class KTooLarge(TsmHpoError, ValueError):
    pass


# stats


class InvalidSample(TsmHpoError, ValueError):
    pass


# cli


class ConfigError(TsmHpoError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    """A config field failed validation; ``field`` names the offending key."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
