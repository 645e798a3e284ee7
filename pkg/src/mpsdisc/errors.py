"""Typed exceptions shared across the package."""


class DegenerateTransferError(RuntimeError):
    """Transfer operator has a (near-)degenerate eigenvalue-1 space."""

    def __init__(self, gap: float):
        self.gap = gap
        super().__init__(
            f"transfer operator eigenvalue-1 space is degenerate (gap {gap:.3e} < threshold)"
        )


class DegenerateReadoutError(RuntimeError):
    """All class probabilities vanished for a sample; readout is undefined."""

    def __init__(self, sample_index: int, trace: float):
        self.sample_index = sample_index
        super().__init__(
            f"degenerate readout for sample {sample_index}: sum of class weights {trace:.3e}"
        )


class ChannelIntegrityError(RuntimeError):
    """A CPTP channel application failed its trace/positivity check (implementation bug)."""


class CompileBudgetError(RuntimeError):
    """Gate budget exhausted before reaching the compile tolerance."""

    def __init__(self, best_distance: float, best_circuit=None):
        self.best_distance = best_distance
        self.best_circuit = best_circuit
        super().__init__(
            f"gate budget exhausted; best squared distance reached {best_distance:.3e}"
        )


class RetractionError(RuntimeError):
    """Retraction target was rank deficient."""


class ResourceLimitError(RuntimeError):
    """Simulation register exceeds the configured qubit cap."""
