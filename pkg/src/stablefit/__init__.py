"""Imitation learning of linear state-feedback policies with closed-loop
stability and H-infinity robustness certificates enforced during fitting."""

__version__ = "0.1.0"

from .lmi import (  # noqa: F401
    CertificateReport,
    LinearSystem,
    LmiMap,
    PerformanceChannel,
    PolicyParams,
    certify,
    extract_gain,
    hinf_lmi,
    margin,
    stability_lmi,
    system_from_json,
    system_to_json,
)
from .splitting import (  # noqa: F401
    QuadraticObjective,
    SolverConfig,
    SolverState,
    find_feasible,
    minimize_quadratic,
    project,
)
