"""Exception hierarchy.

Every error carries a stable ``code`` so the CLI can emit a machine-readable
object on stderr.
"""

from __future__ import annotations

from typing import Any


class AcgenError(Exception):
    code = "error"

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        return {"error": self.code, "message": str(self), "details": _jsonable(self.details)}


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


# -- corpus ---------------------------------------------------------------


class GherkinError(AcgenError, ValueError):
    code = "GherkinError"


class EmptyInput(GherkinError):
    code = "EmptyInput"


class MissingKeyword(GherkinError):
    code = "MissingKeyword"


class EmptyClause(GherkinError):
    code = "EmptyClause"


class DatasetError(AcgenError):
    code = "DatasetError"


class SchemaError(DatasetError):
    code = "SchemaError"

    def __init__(self, message: str, pointer: str = "", **details: Any) -> None:
        super().__init__(f"{message} (at {pointer or '/'})", pointer=pointer, **details)
        self.pointer = pointer


class DanglingReference(DatasetError):
    code = "DanglingReference"


class DuplicateId(DatasetError, ValueError):
    code = "DuplicateId"


class ImageNotFound(DatasetError):
    code = "ImageNotFound"


# -- providers ------------------------------------------------------------


class ProviderError(AcgenError):
    code = "ProviderError"


class TransportError(ProviderError):
    code = "Transport"

    def __init__(self, message: str, attempts: int = 1, **details: Any) -> None:
        super().__init__(f"{message} (after {attempts} attempt(s))", attempts=attempts, **details)
        self.attempts = attempts


class RateLimited(TransportError):
    code = "RateLimited"


class CacheMiss(ProviderError):
    code = "CacheMiss"


class DimensionMismatch(ProviderError, ValueError):
    code = "DimensionMismatch"


class EmptyConversion(ProviderError):
    code = "EmptyConversion"


class ImageDecodeError(ProviderError, ValueError):
    code = "ImageDecodeError"


class HtmlParseError(ProviderError, ValueError):
    code = "ParseError"


class LogprobsUnavailable(ProviderError):
    code = "LogprobsUnavailable"


# -- retrieval / generation ----------------------------------------------


class EmptyIndex(AcgenError, ValueError):
    code = "EmptyIndex"


class AblationViolation(AcgenError, ValueError):
    code = "AblationViolation"


class OversizePrompt(AcgenError):
    code = "OversizePrompt"


class UnparseableOutput(AcgenError):
    code = "UnparseableOutput"

    def __init__(self, message: str, raws: list[str], **details: Any) -> None:
        super().__init__(message, raws=raws, **details)
        self.raws = raws


# -- reward ---------------------------------------------------------------


class UnparseableScore(AcgenError):
    code = "UnparseableScore"


class UnparseablePolish(AcgenError):
    code = "UnparseablePolish"


class MixedScorers(AcgenError, ValueError):
    code = "MixedScorers"


class IncomparableScores(AcgenError, TypeError):
    code = "IncomparableScores"


# -- evaluation -----------------------------------------------------------


class EmptyRelevanceSet(AcgenError, ValueError):
    code = "EmptyRelevanceSet"


class EmptyAfterTokenization(AcgenError, ValueError):
    code = "EmptyAfterTokenization"


class UnparseableVerdict(AcgenError):
    code = "UnparseableVerdict"


class IncompleteVerdicts(AcgenError, ValueError):
    code = "IncompleteVerdicts"


class UnparseablePreference(AcgenError):
    code = "UnparseablePreference"


# -- cli ------------------------------------------------------------------


class MissingArtifact(AcgenError):
    code = "MissingArtifact"


class ConfigError(AcgenError):
    code = "ConfigError"


class RunLocked(AcgenError):
    code = "RunLocked"
