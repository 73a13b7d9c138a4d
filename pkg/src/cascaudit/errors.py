"""Exception hierarchy shared across the package."""


class CascauditError(Exception):
    """Base class for all package-specific errors."""


class GraphError(CascauditError):
    """Invalid graph construction or query (duplicate node, self loop, ...)."""


class ModelError(CascauditError):
    """Spread-model parameters violate their invariants."""


class TraceError(CascauditError):
    """Malformed cascade trace or an impossible simulation request."""


class UnreachableObservationError(CascauditError):
    """An observed edge has no directed source path within the search bounds."""

    def __init__(self, edge, max_path_length):
        self.edge = edge
        self.max_path_length = max_path_length
        super().__init__(
            f"no source path to edge {edge!r} within {max_path_length} edges"
        )


class InvalidEvidenceError(CascauditError):
    """An observation has zero probability under both hypotheses."""


class DegenerateDataError(CascauditError):
    """Training/evaluation input cannot support the requested computation."""


class EstimationError(CascauditError):
    """Parameter estimation has an empty denominator for some label."""
