"""Exception types shared across the package."""


class FracnsError(Exception):
    """Base class for all package-specific errors."""


class InvalidGrid(FracnsError):
    pass


class ZeroModeUndefined(FracnsError):
    """A singular Fourier multiplier was applied to a field with nonzero mean."""


class NumericalBlowup(FracnsError):
    pass


class Diverged(FracnsError):
    """Fixed-point iteration left the trust region (smallness violated)."""


class NotConverged(FracnsError):
    """Iteration budget exhausted before reaching tolerance."""


class InvalidAnnulus(FracnsError):
    pass


class ScalarMomentMatrix(FracnsError):
    """Anisotropic force construction produced an (accidentally) scalar moment matrix."""


class InvalidAlpha(FracnsError):
    pass


class InvalidExponents(FracnsError):
    pass


class DegenerateInput(FracnsError):
    pass


class EmptyShell(FracnsError):
    pass


class InvalidRadius(FracnsError):
    pass


class InvalidTimeStep(FracnsError):
    pass
