"""Exception hierarchy.

Each family carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class ScmBenchError(Exception):
    exit_code = 1


class ConfigError(ScmBenchError, ValueError):
    exit_code = 2


class UpstreamError(ScmBenchError):
    exit_code = 3


class RemoteServiceError(ScmBenchError):
    exit_code = 4


class IntegrityError(ScmBenchError):
    exit_code = 5


# graph definition
class GraphError(ConfigError):
    pass


class MalformedGraph(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class UnknownParent(GraphError):
    pass


class EquationParentMismatch(GraphError):
    pass


class MultipleOutcomes(GraphError):
    pass


class UnknownConcept(ConfigError):
    pass


class CodeOutOfRange(ConfigError):
    pass


class InvalidChange(ConfigError):
    pass


class FactualMismatch(ScmBenchError, ValueError):
    pass


# bundles and assets
class UnknownDataset(ConfigError):
    pass


class MalformedAssetFile(UpstreamError):
    pass


class EmptyPool(UpstreamError):
    pass


# rendering
class RenderError(ScmBenchError):
    pass


class MissingSlot(RenderError):
    pass


class MarkerParseError(RenderError):
    pass


class NonZeroTemperature(ConfigError):
    pass


class EndpointUnreachable(RemoteServiceError):
    pass


class EmptyCompletion(RemoteServiceError):
    pass


class MalformedResponse(RemoteServiceError):
    pass


# adapters
class UnknownText(UpstreamError):
    pass


# dataset files
class SchemaVersionMismatch(IntegrityError):
    pass


class GraphDigestMismatch(IntegrityError):
    pass


class FileDigestMismatch(IntegrityError):
    pass


class CorruptLine(IntegrityError):
    def __init__(self, path, line_number: int, reason: str = ""):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: corrupt record {reason}".rstrip())


class DatasetExists(IntegrityError):
    pass


class InsufficientChanges(ScmBenchError):
    pass


# explainers and evaluation
class EmptyCandidateSet(ScmBenchError):
    pass


class UnknownStrategy(ConfigError):
    pass


class UnknownMethod(ConfigError):
    pass


class LengthMismatch(ScmBenchError, ValueError):
    pass


class MissingEndpointCounterfactual(UpstreamError):
    pass


class MissingExplanation(UpstreamError):
    pass


class NoChangesForConcept(ScmBenchError, ValueError):
    pass


class KeyMismatch(ScmBenchError, ValueError):
    pass


class EmptySet(ScmBenchError, ValueError):
    pass


class NotIdentifiable(ScmBenchError):
    pass
