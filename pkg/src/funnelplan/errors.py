class NumericalFailure(ArithmeticError):
    """A root-find or factorisation did not converge or hit a singular matrix."""


class SynthesisFailure(RuntimeError):
    """Funnel synthesis could not produce a certified tube."""


class InvalidState(RuntimeError):
    """An operation was invoked on an object that cannot support it (e.g. empty library)."""
