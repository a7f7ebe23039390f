"""Exception types shared across the package."""


class NotPSD(Exception):
    """Matrix is not positive semi-definite even after jitter escalation."""


class DidNotConverge(Exception):
    """Iterative optimizer exhausted its budget without a usable result."""


class DegenerateWeights(Exception):
    """Importance weights collapsed (effective sample size too small)."""


class HistoryTooLarge(Exception):
    """Visited-location history exceeds the nested-MC size guard."""


class OutOfDomain(Exception):
    """Query point lies outside the objective's search box."""


class LengthMismatch(Exception):
    """Curves passed to an aggregator have different lengths."""
