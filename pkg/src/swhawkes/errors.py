"""Exception hierarchy for the switching Hawkes toolkit."""


class SwitchingHawkesError(ValueError):
    """Base class for all errors raised by this package."""


class InvalidSimplex(SwitchingHawkesError):
    pass


class InvalidRange(SwitchingHawkesError):
    pass


class Supercritical(SwitchingHawkesError):
    pass


class NonPositiveDelta(SwitchingHawkesError):
    pass


class BetaOutOfRange(SwitchingHawkesError):
    pass


class NegativeRate(SwitchingHawkesError):
    pass


class EmptySequence(SwitchingHawkesError):
    pass


class UnsortedEvents(SwitchingHawkesError):
    pass


class ExplosionGuard(SwitchingHawkesError):
    """Raised when a simulation produces more events than the configured cap."""


class NumericalUnderflow(SwitchingHawkesError):
    """Every state assigns zero probability to an observed count."""


class TooLarge(SwitchingHawkesError):
    pass


class UnsupportedQStar(SwitchingHawkesError):
    pass


class LengthMismatch(SwitchingHawkesError):
    pass
