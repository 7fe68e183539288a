"""Exception types shared across the pipeline."""


class SemStitchError(Exception):
    """Base class for all pipeline errors."""


class DecodeError(SemStitchError):
    """Image file could not be decoded (unreadable, truncated, bad depth)."""


class NoTissueError(SemStitchError):
    """Segmentation produced an empty tissue mask."""


class FragmentTooSmallError(SemStitchError):
    """Fragment boundary is too short to place any patch frame."""


class ShortBoundaryError(SemStitchError):
    """Too few boundary features for the requested neighborhood size."""


class DegenerateSampleError(SemStitchError):
    """Point sample is degenerate (all points coincident)."""


class NoConsensusError(SemStitchError):
    """RANSAC could not find a consensus set of the required size."""


class ProtocolError(SemStitchError):
    """Malformed SSPB/SSFV payload or header."""


class BridgeError(SemStitchError):
    """External encoder bridge failed (bad exit code, bad response)."""


class CanvasBudgetError(SemStitchError):
    """Composite canvas would exceed the configured pixel budget."""
