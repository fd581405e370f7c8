"""Exception types shared across the toolkit."""


class MergeToolError(Exception):
    """Base class for all toolkit errors."""


class ArchiveError(MergeToolError):
    """Raised for malformed, truncated, or otherwise invalid tensor archives."""


class ValidationError(MergeToolError):
    """Raised for incompatible checkpoints, bad configuration, or bad arguments."""


class ConvergenceError(MergeToolError):
    """Raised when the sparsity budget projection fails to converge."""
