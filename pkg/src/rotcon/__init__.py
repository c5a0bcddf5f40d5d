"""rotcon: consensus on SO(n) over the spectrahedral hull of rotations."""

from .hull import (
    HullOperator,
    build_hull,
    build_lambda,
    build_p_even,
    build_rho,
    cached_hull,
    is_rotation,
    is_spectra_point,
    rotation_residuals,
    spectra_residuals,
)
from .problems import (
    PointCloud,
    ProblemInstance,
    averaging_instance,
    load_point_cloud,
    pose_instance,
    random_rotation,
    synthetic_cloud,
)
from .protocols import (
    DivergenceError,
    FusionState,
    ProtocolConfig,
    ProtocolState,
    RunResult,
    TraceRecord,
    dist_admm_round,
    dual_decomp_round,
    run,
    semi_admm_round,
)
from .spectral import (
    EigDecomposition,
    LinearMaxResult,
    linear_max_over_hull,
    project_simplex,
    project_spectrahedron,
    sym_eig,
)
from .topology import CommGraph, complete, from_edges, is_strongly_connected, load_edge_list, ring

__version__ = "0.1.0"

__all__ = [
    "HullOperator", "build_hull", "build_lambda", "build_rho", "build_p_even",
    "cached_hull", "is_rotation", "rotation_residuals", "is_spectra_point",
    "spectra_residuals",
    "EigDecomposition", "LinearMaxResult", "sym_eig", "project_simplex",
    "project_spectrahedron", "linear_max_over_hull",
    "CommGraph", "ring", "complete", "from_edges", "load_edge_list",
    "is_strongly_connected",
    "ProblemInstance", "PointCloud", "random_rotation", "averaging_instance",
    "pose_instance", "load_point_cloud", "synthetic_cloud",
    "ProtocolConfig", "ProtocolState", "FusionState", "TraceRecord", "RunResult",
    "DivergenceError", "run", "dual_decomp_round", "dist_admm_round", "semi_admm_round",
    "__version__",
]
