"""Exception hierarchy shared by every module.

Each exception carries a short machine code and the CLI exit status it maps to.
"""


class SmgError(Exception):
    code = "ERROR"
    exit_status = 3


class ConfigError(SmgError, ValueError):
    code = "CONFIG_ERROR"
    exit_status = 2

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NumericalError(SmgError, ArithmeticError):
    code = "NUMERICAL_FAILURE"
    exit_status = 3


class NonPhysicalState(NumericalError):
    code = "NON_PHYSICAL_STATE"

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class Infeasible(NumericalError):
    code = "INFEASIBLE"


class NotConverged(NumericalError):
    code = "NOT_CONVERGED"


class EmptyWindow(NumericalError, ValueError):
    code = "EMPTY_WINDOW"


class WindowOutOfRange(NumericalError, ValueError):
    code = "WINDOW_OUT_OF_RANGE"


class WindowTooShort(NumericalError, ValueError):
    code = "WINDOW_TOO_SHORT"


class PoleOnAxis(NumericalError):
    code = "POLE_ON_AXIS"


class DefectiveMatrix(NumericalError):
    code = "DEFECTIVE_MATRIX"


class ImproperTf(NumericalError):
    code = "IMPROPER_TF"


class Unbounded(NumericalError):
    code = "UNBOUNDED"


class RankDeficient(NumericalError):
    code = "RANK_DEFICIENT"


class NotSettled(NumericalError):
    code = "NOT_SETTLED"


class UnstableModel(SmgError):
    code = "UNSTABLE_MODEL"
    exit_status = 4


class UnstablePoles(UnstableModel):
    code = "UNSTABLE_POLES"
