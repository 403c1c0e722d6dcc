"""Exception taxonomy shared across the toolkit.

Exit-code mapping for the CLI: ValidationError -> 1, SolverError (and
subclasses) -> 2, CertificateError -> 3.
"""


class StablefitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(StablefitError):
    """Bad input: dimension mismatch, non-finite entries, invalid config."""


class RankDeficiencyError(ValidationError):
    """Normal equations singular; advise a positive ridge weight."""


class SolverError(StablefitError):
    """An iterative kernel failed to converge or broke down."""


class NonConvergenceError(SolverError):
    """Splitting solver hit its iteration cap with residuals still large."""

    def __init__(self, message, primal_residual=None, dual_residual=None,
                 iterations=None):
        super().__init__(message)
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.iterations = iterations


class InfeasibleError(SolverError):
    """Heuristic infeasibility diagnostic: cone distance stalled at a
    positive value. Doubles as the stabilizability test in the harness."""

    def __init__(self, message, cone_distance=None, iterations=None):
        super().__init__(message)
        self.cone_distance = cone_distance
        self.iterations = iterations


class GenerationError(SolverError):
    """Random system/expert generation exhausted its retry budget."""


class CertificateError(StablefitError):
    """A certificate precondition failed (e.g. Q not positive definite)."""


class InternalInconsistencyError(CertificateError):
    """Independent re-verification contradicts a positive margin; signals
    solver tolerance misconfiguration."""
