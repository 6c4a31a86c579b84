class BjlError(Exception):
    """Base class for numerical contract violations."""


class DomainError(BjlError):
    pass


class BumpError(BjlError):
    pass


class GrazingError(BjlError):
    pass


class ConvergenceError(BjlError):
    pass


class JetOrderError(BjlError):
    pass


class SingularSystemError(BjlError):
    pass


class ConditionViolation(BjlError):
    """A nondegeneracy hypothesis (nonzero partial, twist, hyperbolicity) failed."""


class ManifoldError(BjlError):
    pass
