"""Exception hierarchy.

Every failure the library raises derives from :class:`MVError`; the CLI maps
the three families (config, numeric, degeneracy) onto exit codes 2/3/4.
"""


class MVError(Exception):
    exit_code = 3

    def record(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ConfigError(MVError, ValueError):
    exit_code = 2


class DomainError(MVError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 2


class NumericError(MVError, ArithmeticError):
    exit_code = 3


class NumericOverflow(NumericError):
    pass


class NumericBlowUp(NumericError):
    def __init__(self, message, particle=None, step=None):
        super().__init__(message)
        self.particle = particle
        self.step = step

    def record(self):
        rec = super().record()
        rec.update(particle=self.particle, step=self.step)
        return rec


class SingularError(NumericError):
    pass


class DegeneracyError(MVError):
    exit_code = 4


class DegenerateMeasure(DegeneracyError):
    pass


class WeightCollapse(DegeneracyError):
    def __init__(self, message, time_step=None):
        super().__init__(message)
        self.time_step = time_step

    def record(self):
        rec = super().record()
        rec["time_step"] = self.time_step
        return rec


class WeightDegeneracy(DegeneracyError):
    def __init__(self, message, side=None):
        super().__init__(message)
        self.side = side


class InsufficientSamples(DegeneracyError):
    pass


class InsufficientPoints(DegeneracyError):
    pass


class ChainAborted(DegeneracyError):
    pass
