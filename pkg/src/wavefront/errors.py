"""Exception hierarchy shared by all wavefront modules."""


class WavefrontError(Exception):
    """Base class for every error raised by this package."""


class InputError(WavefrontError):
    """Malformed user input: expressions, scenarios, grids."""


class ExpressionSyntaxError(InputError):
    def __init__(self, message, source, pos):
        self.source = source
        self.pos = pos
        caret = " " * pos + "^"
        super().__init__(f"{message} at position {pos}\n  {source}\n  {caret}")


class UnknownVariable(InputError):
    pass


class VariableIndexError(InputError):
    pass


class ScenarioError(InputError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


class InsufficientGrid(InputError):
    pass


class DimensionTooSmall(InputError):
    pass


class ModelError(WavefrontError):
    """The model assumptions failed numerically (Omega, Legendre map, roots)."""


class FieldDomainError(ModelError):
    pass


class NonFiniteDerivative(ModelError):
    pass


class BackendMismatch(ModelError):
    pass


class OmegaNonpositive(ModelError):
    def __init__(self, message, t=None, nodes=None):
        self.t = t
        self.nodes = nodes
        super().__init__(message)


class SingularHessian(ModelError):
    pass


class NoConvergence(ModelError):
    pass


class NotPositive(ModelError):
    pass


class NoRoot(ModelError):
    pass


class RankDeficient(ModelError):
    pass


class WPrimeZero(ModelError):
    pass


class ZeroVelocity(ModelError):
    pass


class StepLimitExceeded(ModelError):
    pass
