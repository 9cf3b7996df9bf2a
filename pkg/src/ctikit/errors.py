"""Exception hierarchy shared across the toolkit.

Every domain failure derives from ToolkitError so the CLI can map it to
exit code 1; anything else is a bug and propagates.
"""


class ToolkitError(Exception):
    """Base class for expected domain failures."""


class IngestError(ToolkitError):
    """Malformed record stream (carries the offending line number or id)."""


class TieError(ToolkitError):
    """Majority vote ended in an exact tie; caller must adjudicate."""


class SplitError(ToolkitError):
    """Requested split sizes are infeasible for the bundle at hand."""


class BackendUnavailableError(ToolkitError):
    """A backend stayed unreachable after exhausting its retry budget."""

    def __init__(self, message: str, attempts: list | None = None):
        super().__init__(message)
        self.attempts = attempts or []


class PlanError(ToolkitError):
    """A fine-tuning plan violates level ordering or stage constraints."""


class PendingCandidatesError(ToolkitError):
    """Export requested while undecided candidates remain."""

    def __init__(self, pending: int):
        super().__init__(f"{pending} candidate(s) still pending review")
        self.pending = pending


class StaleVersionError(ToolkitError):
    """Optimistic-concurrency conflict: the caller saw an outdated version."""

    def __init__(self, seen: int, current: int):
        super().__init__(f"seen version {seen} is stale (current {current})")
        self.seen = seen
        self.current = current
