"""Minimum positive key-rate boundaries for discrete-modulated CVQKD protocols."""

__version__ = "0.1.0"

from .boundary import (  # noqa: E402
    BoundaryMesh,
    BoundaryPoint,
    SweepGrid,
    cutoff_curve,
    min_positive_scan,
    refine_crossing,
    sweep,
)
from .constellation import (  # noqa: E402
    Constellation,
    ProtocolSpec,
    QamDistribution,
    make_apsk,
    make_psk,
    make_qam,
    mean_photon_number,
)
from .engine import (  # noqa: E402
    ChannelParams,
    ProtocolConfig,
    SKRBreakdown,
    compute_skr,
    correlation_Z,
    g_function,
    mutual_information,
    symplectic_eigenvalues,
)
from .surface import LevelMetric, PolySurface, Region, alpha_ave, compare_levels, evaluate_surface, fit_surface  # noqa: E402

__all__ = [
    "BoundaryMesh",
    "BoundaryPoint",
    "ChannelParams",
    "Constellation",
    "LevelMetric",
    "PolySurface",
    "ProtocolConfig",
    "ProtocolSpec",
    "QamDistribution",
    "Region",
    "SKRBreakdown",
    "SweepGrid",
    "alpha_ave",
    "compare_levels",
    "compute_skr",
    "correlation_Z",
    "cutoff_curve",
    "evaluate_surface",
    "fit_surface",
    "g_function",
    "make_apsk",
    "make_psk",
    "make_qam",
    "mean_photon_number",
    "min_positive_scan",
    "mutual_information",
    "refine_crossing",
    "sweep",
    "symplectic_eigenvalues",
]
