"""Exception hierarchy shared by every module of the toolkit."""


class SmallAreaError(Exception):
    """Base class for all errors raised by :mod:`smallarea`."""


class DatasetError(SmallAreaError, ValueError):
    """Raised when the area-level data fail validation."""


class RankDeficientError(DatasetError):
    def __init__(self, detail):
        super().__init__(f"design matrix is rank deficient: {detail}")
        self.detail = detail


class NonPositiveSamplingVarianceError(DatasetError):
    def __init__(self, area_id, value=None):
        super().__init__(f"sampling variance of area {area_id!r} must be > 0, got {value!r}")
        self.area_id = area_id
        self.value = value


class NonFiniteError(DatasetError):
    def __init__(self, field, area_id):
        super().__init__(f"non-finite value in field {field!r} of area {area_id!r}")
        self.field = field
        self.area_id = area_id


class DomainError(SmallAreaError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class EstimationError(SmallAreaError):
    """Base class for failures while estimating the model variance."""


class TooFewAreasError(EstimationError):
    def __init__(self, m, required):
        super().__init__(f"{m} areas given, at least {required} are required")
        self.m = m
        self.required = required


class NonFiniteObjectiveError(EstimationError):
    def __init__(self, a, value=None):
        super().__init__(f"objective is not finite at A={a!r} (value {value!r})")
        self.a = a
        self.value = value


class InvalidAdditionalFactorError(SmallAreaError, ValueError):
    def __init__(self, report):
        super().__init__(f"additional adjustment factor rejected: {report.summary()}")
        self.report = report


class HypothesisViolationError(SmallAreaError, ValueError):
    def __init__(self, condition, a, value):
        super().__init__(f"weight function violates {condition} at A={a!r} (value {value!r})")
        self.condition = condition
        self.a = a
        self.value = value


class NonFiniteDerivativeError(SmallAreaError, ValueError):
    def __init__(self, a):
        super().__init__(f"numerical derivative of the adjustment factor is not finite at A={a!r}")
        self.a = a


class FormEstimatorMismatchError(SmallAreaError, ValueError):
    """The variance estimates supplied do not suit the requested MSE form."""


class MethodDataMismatchError(SmallAreaError, ValueError):
    """A variance estimate does not belong to the dataset it is used with."""


class SimulationAbortedError(SmallAreaError):
    def __init__(self, failures, replications):
        super().__init__(f"{failures} of {replications} replicates failed (more than 1%)")
        self.failures = failures
        self.replications = replications
