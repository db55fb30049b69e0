"""Exception hierarchy shared by all stages."""


class ThreatNetError(Exception):
    """Base class for every error raised by this package."""


class EmptyGraph(ThreatNetError):
    """Raised when an operation needs at least one node or one unit of edge weight."""


class CapacityError(ThreatNetError):
    """Raised when a requested graph would not fit in memory."""


class ConfigError(ThreatNetError):
    """Invalid or inconsistent configuration."""


class StageError(ThreatNetError):
    """A pipeline stage failed; carries the stage name and the original cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
