"""Exception types shared across the solver pipeline."""
from __future__ import annotations

__all__ = ["PipelineError"]


class PipelineError(RuntimeError):
    """A solver stage aborted; carries the stage name for diagnostics.

    Raised when a run leaves the regime the schemes are built for
    (positivity loss, blow-up, iteration stall) rather than silently
    producing garbage.
    """

    def __init__(self, stage: str, message: str):
        self.stage = str(stage)
        super().__init__(f"[{self.stage}] {message}")
