"""Exception hierarchy.  Everything raised on bad domain input derives from
:class:`MgcnError` so the CLI can map it to exit code 1."""


class MgcnError(Exception):
    pass


class GraphError(MgcnError):
    pass


class CycleDetected(GraphError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class RoleViolation(GraphError):
    pass


class UnknownNode(GraphError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown node {name!r}")


class ConstraintConflict(GraphError):
    pass


class NodeSetMismatch(GraphError):
    pass


class DataError(MgcnError):
    pass


class UnknownLevel(DataError):
    def __init__(self, row, column, token):
        self.row, self.column, self.token = row, column, token
        super().__init__(f"row {row}, column {column!r}: unknown level {token!r}")


class MissingColumn(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing column {name!r}")


class RaggedRow(DataError):
    def __init__(self, row):
        self.row = row
        super().__init__(f"row {row} has the wrong number of fields")


class NoCohortColumn(DataError):
    pass


class EmptyDataset(DataError):
    pass


class IncompleteRow(DataError):
    pass


class ModelError(MgcnError):
    pass


class ZeroProbabilityEvent(ModelError):
    pass


class InconsistentEvidence(ModelError):
    pass


class NotRecoverable(MgcnError):
    def __init__(self, diagnosis):
        self.diagnosis = diagnosis
        reasons = ", ".join(f"{r}:{why}" for r, why in diagnosis.violations)
        super().__init__(f"joint not recoverable ({reasons})")


class ZeroObservationRate(MgcnError):
    def __init__(self, indicator, configuration):
        self.indicator, self.configuration = indicator, configuration
        super().__init__(
            f"P({indicator}=0 | {configuration}) estimated as zero; weight undefined"
        )


class InvalidAdjustmentSet(MgcnError):
    pass


class NotIdentifiable(MgcnError):
    pass


class ZeroProbabilityStratum(MgcnError):
    pass


class DegenerateLabels(MgcnError):
    pass
