"""Exception hierarchy. Every library error derives from ColdPlasmaError."""


class ColdPlasmaError(Exception):
    pass


class ParseError(ColdPlasmaError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnknownIdentifier(ParseError):
    def __init__(self, name, offset):
        super().__init__(f"unknown identifier {name!r}", offset)
        self.name = name


class EvaluationError(ColdPlasmaError):
    """Raised when an expression is undefined at a sample point."""

    def __init__(self, message, point=None):
        if point is not None:
            message = f"{message} at (x, y) = ({point[0]:.17g}, {point[1]:.17g})"
        super().__init__(message)
        self.point = point


class DivisionByZero(EvaluationError):
    pass


class PiecewiseMismatch(EvaluationError):
    pass


class ConfigError(ColdPlasmaError):
    pass


class InvalidTypeChange(ColdPlasmaError):
    pass


class ConstraintViolated(ColdPlasmaError):
    def __init__(self, name, point=None, detail=""):
        msg = f"constraint {name!r} violated"
        if point is not None:
            msg += f" at ({point[0]:.6g}, {point[1]:.6g})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.name = name
        self.point = point


class UnknownFamily(ColdPlasmaError):
    pass


class HypothesisViolated(ColdPlasmaError):
    pass


class UnsupportedMultiplierShape(ColdPlasmaError):
    pass


class SupportViolation(ColdPlasmaError):
    pass


class DegenerateTestFunction(ColdPlasmaError):
    pass


class Nonconvergence(ColdPlasmaError):
    def __init__(self, message, iterations=None, value=None):
        super().__init__(message)
        self.iterations = iterations
        self.value = value


class IterationCapExceeded(Nonconvergence):
    pass


class DomainError(ColdPlasmaError):
    pass


class StartInElliptic(ColdPlasmaError):
    pass


class IntegrationBlowup(ColdPlasmaError):
    pass


class ClassificationMissing(ColdPlasmaError):
    pass


class RoleMismatch(ColdPlasmaError):
    pass


class SingularSymmetrizer(ColdPlasmaError):
    def __init__(self, message, point=None):
        if point is not None:
            message = f"{message} at ({point[0]:.6g}, {point[1]:.6g})"
        super().__init__(message)
        self.point = point


class SigmaShapeViolation(InvalidTypeChange):
    pass


class UnsupportedSystem(ColdPlasmaError):
    pass
