"""Exception types shared across the package."""

from __future__ import annotations


class DgsearchError(Exception):
    """Base class for all package errors."""


# -- instance parsing / validation -------------------------------------------


class InstanceError(DgsearchError):
    """A problem with instance data; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def __eq__(self, other):
        return type(self) is type(other) and str(self) == str(other)

    def __hash__(self):
        return hash((type(self).__name__, str(self)))


class MalformedHeader(InstanceError):
    pass


class WrongPairCount(InstanceError):
    pass


class DuplicateMachineInRoute(InstanceError):
    pass


class NonPositiveTime(InstanceError):
    pass


class MatrixShapeMismatch(InstanceError):
    pass


class MachineOutOfRange(InstanceError):
    pass


# -- solution graphs ----------------------------------------------------------


class GraphError(DgsearchError):
    pass


class WrongMachineAssignment(GraphError):
    pass


class MissingOp(GraphError):
    pass


class DuplicateOp(GraphError):
    pass


class CyclicGraph(GraphError):
    pass


class InvalidMove(GraphError):
    pass


# -- autodiff engine / policy -------------------------------------------------


class ShapeMismatch(DgsearchError):
    pass


class EmptySegment(DgsearchError):
    pass


class NonScalarLoss(DgsearchError):
    pass


class MissingGrad(DgsearchError):
    pass


class EmptyActionSet(DgsearchError):
    pass


class CheckpointError(DgsearchError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


class MissingTrace(DgsearchError):
    pass


class NonPositiveReference(DgsearchError):
    pass
