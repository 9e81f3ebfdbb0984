"""Exception hierarchy shared by all pipelines."""


class NeuralBodiesError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(NeuralBodiesError, ValueError):
    """Invalid shapes, parameters or configuration keys."""


class GeometryDegeneracyError(NeuralBodiesError):
    """Ray casting could not resolve a consistent crossing parity."""


class SingularityError(NeuralBodiesError):
    """An evaluation point coincides with a point mass or quadrature node."""


class NumericalError(NeuralBodiesError, ArithmeticError):
    """A non-finite value appeared during training or integration.

    ``iteration`` and ``parameter`` are filled in when known.
    """

    def __init__(self, message, iteration=None, parameter=None):
        super().__init__(message)
        self.iteration = iteration
        self.parameter = parameter


class StepSizeUnderflowError(NumericalError):
    """The adaptive integrator needed a step below the underflow floor."""
