"""Exception types shared across the package.

Every error carries a machine-readable ``code`` so the HTTP layer can map
exceptions onto ApiError payloads without string matching.
"""


class CausalRagError(Exception):
    code = "InternalError"

    def __init__(self, message: str = "", **context):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.context = context


class DuplicateId(CausalRagError):
    code = "DuplicateId"


class UnknownVariable(CausalRagError):
    code = "UnknownVariable"


class CycleError(CausalRagError):
    code = "CycleError"


class InvalidSmoothing(CausalRagError):
    code = "InvalidSmoothing"


class MalformedRecord(CausalRagError):
    code = "MalformedRecord"


class InvalidRatio(CausalRagError):
    code = "InvalidRatio"


class NotPending(CausalRagError):
    code = "NotPending"


class StaleVersion(CausalRagError):
    code = "StaleVersion"


class DimensionMismatch(CausalRagError):
    code = "DimensionMismatch"


class ZeroVector(CausalRagError):
    code = "ZeroVector"


class EmptyStore(CausalRagError):
    code = "EmptyStore"


class MissingCpt(CausalRagError):
    code = "MissingCpt"


class NoImageVars(CausalRagError):
    code = "NoImageVars"


class InvalidAlpha(CausalRagError):
    code = "InvalidAlpha"


class MismatchedPair(CausalRagError):
    code = "MismatchedPair"


class EmptyInput(CausalRagError):
    code = "EmptyInput"


class SingleClass(CausalRagError):
    code = "SingleClass"


class UnknownTemplate(CausalRagError):
    code = "UnknownTemplate"


class MissingAnnotation(CausalRagError):
    code = "MissingAnnotation"


class SchemaError(CausalRagError):
    code = "SchemaError"


class BadStatus(CausalRagError):
    code = "BadStatus"


class ClientTimeout(CausalRagError):
    code = "Timeout"


class InvalidSpec(CausalRagError):
    code = "InvalidSpec"


class UnknownId(CausalRagError):
    code = "UnknownId"


class CorruptState(CausalRagError):
    code = "CorruptState"
