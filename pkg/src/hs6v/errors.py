"""Exception types shared across the package."""


class Hs6vError(Exception):
    """Base class for all package errors."""


class RegimeViolation(Hs6vError):
    """Parameters outside the admissible regime for the requested operation."""


class InvalidRegime(RegimeViolation):
    pass


class DivergentArgument(Hs6vError):
    """Series argument outside its convergence domain."""


class IndexOutOfRange(Hs6vError):
    pass


class PoleAtNegativeIndex(Hs6vError):
    """A negative-order q-Pochhammer factor vanishes."""


class PochhammerPole(Hs6vError):
    """A q-Pochhammer denominator vanishes outside the terminating protection."""


class PoleAtZeta(Hs6vError):
    """zeta lies on the lattice q^Z where the q-Laplace weight has poles."""


class PoleHit(Hs6vError):
    """Evaluation point coincides with a pole of the integrand."""


class ConservationViolation(Hs6vError):
    pass


class ScaleExceeded(Hs6vError):
    """Brute-force oracle invoked beyond its intended scale."""


class WindowOverflow(Hs6vError):
    """Paths reached the right edge of the simulation window in strict mode."""


class OutOfWindow(Hs6vError):
    pass


class NoAdmissibleContour(Hs6vError):
    """Parameter spacing leaves no room for a valid integration contour."""


class NonConvergent(Hs6vError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class WindowInsufficient(Hs6vError):
    """Kernel-window tail certification failed at the maximum window size."""


class SeriesStall(Hs6vError):
    """Series summation failed to meet its truncation criterion."""


class ResolventSingular(Hs6vError):
    pass


class RangeExceeded(Hs6vError):
    pass


class ContourPole(Hs6vError):
    """Integration ray passes through a pole."""


class DegenerateScaling(Hs6vError):
    """Scaling constants undefined (leading coefficient vanishes)."""


class RateOverflow(Hs6vError):
    """Jump-intensity table does not cover the requested region."""
