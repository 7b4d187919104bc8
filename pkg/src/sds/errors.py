"""Exception hierarchy shared by every stage of the pipeline."""


class SDSError(Exception):
    pass


class InputError(SDSError):
    """Malformed or missing user input (CLI exit code 2)."""


class InsufficientData(InputError):
    pass


class NoTrackableKeypoints(InputError):
    pass


class InvalidInput(InputError, ValueError):
    pass


class SpanExceedsVideo(InputError):
    pass


class NotPerfectSquare(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class CoordinateOutOfRange(InputError):
    pass


class NoCommonKeypoints(InputError):
    pass


class DegenerateGeometry(SDSError):
    pass


class InvalidWindow(InputError, ValueError):
    pass


class ParseError(SDSError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class UnknownFunction(ParseError):
    pass


class NumericError(SDSError):
    def __init__(self, component, message="non-finite value"):
        self.component = component
        super().__init__(f"sub-reward {component!r}: {message}")


class ParamInfeasible(SDSError):
    pass


class ScoreParseError(SDSError):
    pass


class ScoreOutOfRange(ScoreParseError):
    pass


class ClientError(SDSError):
    """Transport-level failure talking to the chat endpoint (CLI exit code 4)."""


class AuthError(ClientError):
    pass


class TransportError(ClientError):
    pass


class ProtocolError(ClientError):
    pass


class MissingAttachment(InputError):
    pass


class SusChainError(SDSError):
    def __init__(self, stage, message, transcript=None):
        self.stage = stage
        self.transcript = list(transcript or [])
        super().__init__(f"SUS stage {stage} failed: {message}")


class IterationFailed(SDSError):
    pass


class PipelineFailed(SDSError):
    pass
