"""Exception hierarchy shared by the library and the command line."""


class ModelError(Exception):
    """Base class for invalid imprecise Q-matrix descriptions."""


class InfeasibleModel(ModelError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class UnboundedModel(ModelError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ProblemParseError(ModelError):
    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class NumericalError(Exception):
    """Base class for failures of the numerical machinery."""


class LpError(NumericalError):
    """Simplex iteration limit reached or a malformed tableau."""


class NotInCone(NumericalError):
    """The gamble is not a non-negative combination of the candidates."""


class RankDeficientActiveSet(NumericalError):
    pass


class IllConditionedBasis(NumericalError):
    pass


class StepTooCoarse(ValueError):
    pass


class BudgetExhausted(NumericalError):
    """The residual error budget cannot be met even at the minimal step.

    ``report`` carries the partial solve trace up to the failing step.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
