"""Exception hierarchy shared by all coactiv modules."""


class CoactivError(Exception):
    """Base class for every domain error raised by coactiv."""

    stage = "coactiv"


# -- modeling language -------------------------------------------------------

class ModelError(CoactivError):
    stage = "model"


class ModelSyntaxError(ModelError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class DuplicateDeclarationError(ModelSyntaxError):
    pass


class UndeclaredIdentifierError(ModelSyntaxError):
    pass


class ModelTypeError(ModelSyntaxError):
    pass


class BoundsError(ModelError):
    pass


class ProbabilitySumError(ModelSyntaxError):
    def __init__(self, total, line=None, column=None):
        self.total = total
        super().__init__(f"update probabilities sum to {total}, expected 1", line, column)


class ProbabilityRangeError(ModelSyntaxError):
    pass


class EvaluationError(ModelError):
    pass


class ActionNotEnabledError(ModelError):
    pass


class OverlappingGuardsError(ModelError):
    pass


# -- policies and training -----------------------------------------------------

class PolicyError(CoactivError):
    stage = "policy"


class PolicyFormatError(PolicyError):
    pass


class PolicyShapeError(PolicyError):
    pass


class ActivationKindError(PolicyError):
    pass


class NonFiniteWeightError(PolicyError):
    pass


class DimensionError(PolicyError):
    pass


class ActionSelectionError(PolicyError):
    pass


class DeadEndError(CoactivError):
    stage = "simulation"

    def __init__(self, state, message=None):
        self.state = tuple(state)
        super().__init__(message or f"no enabled action in non-terminal state {self.state}")


# -- chains and properties ----------------------------------------------------

class StateLimitError(CoactivError):
    stage = "build"

    def __init__(self, limit, frontier):
        self.limit = limit
        self.frontier = frontier
        super().__init__(f"state limit {limit} exceeded with {frontier} states still in the frontier")


class ChainFormatError(CoactivError):
    stage = "build"


class PropertySyntaxError(CoactivError):
    stage = "property"


class ThresholdRangeError(PropertySyntaxError):
    pass


# -- datasets, graphs, experiments --------------------------------------------

class DatasetError(CoactivError):
    stage = "dataset"


class DatasetFormatError(DatasetError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SampleSizeError(CoactivError):
    stage = "coactivation"


class GraphError(CoactivError):
    stage = "analysis"


class ConfigError(CoactivError):
    stage = "config"
