"""Exception hierarchy shared by every dtslab module."""


class DtsLabError(Exception):
    """Base class for all dtslab errors."""


class SingularChain(DtsLabError):
    """The induced Markov chain has more than one recurrent class."""


class NoConvergence(DtsLabError):
    """An iterative solver exceeded its sweep or round budget."""


class Unreachable(DtsLabError):
    """The target state is not reached almost surely from the source."""


class IndexOutOfRange(DtsLabError, IndexError):
    """A state or action index lies outside the model."""


class NonMonotoneTime(DtsLabError):
    """Time indices passed to a counter did not strictly increase."""


class NonPositiveReturn(DtsLabError):
    """A gain used inside a log-ratio was not strictly positive."""


class ShapeMismatch(DtsLabError, ValueError):
    """Two policies or tables disagree in shape."""


class SupportViolation(DtsLabError):
    """KL divergence requested where q has zeros on the support of p."""


class ConstructionFailed(DtsLabError):
    """Environment generation exhausted its rejection budget."""


class InsufficientPoints(DtsLabError, ValueError):
    """Too few regret points to fit a growth exponent."""


class ConfigError(DtsLabError, ValueError):
    """Experiment configuration could not be parsed or validated."""
