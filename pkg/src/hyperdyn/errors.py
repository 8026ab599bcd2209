"""Exception taxonomy shared across the package."""


class HyperdynError(Exception):
    """Base class for all package errors."""


class NotUnimodular(HyperdynError):
    """Integer matrix has determinant other than +/-1."""


class NotHyperbolic(HyperdynError):
    """Some eigenvalue lies on (or within tolerance of) the unit circle."""


class WrongClass(HyperdynError):
    """Matrix is hyperbolic but not representable / not in the requested class."""


class EmptyOrbit(HyperdynError):
    pass


class NoConvergence(HyperdynError):
    def __init__(self, iterations, residual, message=""):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message or f"no convergence after {iterations} iterations, residual={residual:.3e}")


class ResolutionOverflow(HyperdynError):
    """Requested grid would exceed the configured memory bound."""


class BasepointMissing(HyperdynError):
    pass


class GraphTooLarge(HyperdynError):
    pass


class EmptyChain(HyperdynError):
    pass


class BadBifurcation(HyperdynError):
    """Center-direction bifurcation did not produce the expected fixed points."""


class SupportLeak(HyperdynError):
    """Perturbation is nonzero outside its stated support ball."""


class DirectionNotConverged(HyperdynError):
    pass


class ProjectionFailed(HyperdynError):
    pass


class CalibrationMissing(HyperdynError):
    pass


class NoIntersectionInRange(HyperdynError):
    pass


class ChainLeftTube(HyperdynError):
    def __init__(self, index, message=""):
        self.index = index
        super().__init__(message or f"chain point {index} lies outside the tube")


class StepBoundViolated(HyperdynError):
    def __init__(self, index, value, bound, message=""):
        self.index = index
        self.value = value
        self.bound = bound
        super().__init__(message or f"step bound violated at index {index}: {value:.3e} > {bound:.3e}")


class ManifoldUnavailable(HyperdynError):
    pass


class EmptySet(HyperdynError):
    pass


class Overlap(HyperdynError):
    """Symbolic hull meets the companion set; increase the window length."""
