"""Parametric finite element solvers for curvature-driven geometric flows.

Closed planar curves and closed surfaces evolve under curve shortening,
area-preserving curve shortening, generalized mean curvature, Willmore,
mean curvature, and surface diffusion flows.  Position and curvature are
solved jointly, which leaves tangential motion free and keeps meshes well
distributed without remeshing.  Time stepping uses one-leg multistep
schemes of order 1 to 4 with geometry evaluated on a predicted mesh.
"""

from .config import (
    ExperimentConfig,
    SweepConfig,
    build_initial_shape,
    config_from_dict,
    exact_reference,
    load_config,
)
from .curve import (
    CurveState,
    edge_geometry,
    generate_circle,
    generate_curve,
    generate_ellipse,
    generate_flower,
    load_curve_csv,
    mesh_ratio,
    polygon_perimeter,
    polygon_area,
    save_curve_csv,
    signed_area,
)
from .curve_flows import (
    BdfCoefficients,
    DiagnosticsSeries,
    EvolveResult,
    FlowSpec,
    SchemeConfig,
    bdf_coefficients,
    bdfk_step,
    bgn1_step,
    bootstrap,
    evolve,
    predict,
)
from .errors import (
    BlowupDetected,
    ConfigError,
    DegenerateEdgeError,
    DegenerateTriangleError,
    GeomFlowError,
    MeshTopologyError,
    NoConvergenceError,
    NonPositiveCurvatureError,
    NonPositiveError,
    NonSimplePolygonError,
    PinchOffDetected,
    SingularMatrixError,
    ZeroInitialMeasureError,
)
from .linalg import NewtonConfig, SparseMatrix, newton_solve, solve_direct
from .metrics import (
    ErrorTableRow,
    convergence_table,
    format_table,
    hausdorff_distance,
    manifold_distance_2d,
    manifold_distance_3d,
    montecarlo_symmetric_difference_2d,
    normalized_series,
    radial_symmetric_difference,
    relative_change_series,
    table_from_csv,
    table_to_csv,
)
from .surface import (
    SurfaceState,
    enclosed_volume,
    generate_cuboid,
    generate_dumbbell,
    generate_ellipsoid,
    generate_icosphere,
    generate_surface,
    load_off,
    mesh_ratios,
    save_off,
    surface_area,
)
from .surface_flows import (
    MAX_ORDER_3D,
    DiagnosticsSeries3D,
    EvolveResult3D,
    SurfaceFlowSpec,
    bdfk_step_3d,
    bgn1_step_3d,
    bootstrap_3d,
    evolve_3d,
    predict_3d,
)

__version__ = "0.1.0"

__all__ = [
    "BdfCoefficients",
    "BlowupDetected",
    "ConfigError",
    "CurveState",
    "DegenerateEdgeError",
    "DegenerateTriangleError",
    "DiagnosticsSeries",
    "DiagnosticsSeries3D",
    "ErrorTableRow",
    "EvolveResult",
    "EvolveResult3D",
    "ExperimentConfig",
    "FlowSpec",
    "GeomFlowError",
    "MAX_ORDER_3D",
    "MeshTopologyError",
    "NewtonConfig",
    "NoConvergenceError",
    "NonPositiveCurvatureError",
    "NonPositiveError",
    "NonSimplePolygonError",
    "PinchOffDetected",
    "SchemeConfig",
    "SingularMatrixError",
    "SparseMatrix",
    "SurfaceFlowSpec",
    "SurfaceState",
    "SweepConfig",
    "ZeroInitialMeasureError",
    "bdf_coefficients",
    "bdfk_step",
    "bdfk_step_3d",
    "bgn1_step",
    "bgn1_step_3d",
    "bootstrap",
    "bootstrap_3d",
    "build_initial_shape",
    "config_from_dict",
    "convergence_table",
    "edge_geometry",
    "enclosed_volume",
    "evolve",
    "evolve_3d",
    "exact_reference",
    "format_table",
    "generate_circle",
    "generate_cuboid",
    "generate_curve",
    "generate_dumbbell",
    "generate_ellipse",
    "generate_ellipsoid",
    "generate_flower",
    "generate_icosphere",
    "generate_surface",
    "hausdorff_distance",
    "load_config",
    "load_curve_csv",
    "load_off",
    "manifold_distance_2d",
    "manifold_distance_3d",
    "mesh_ratio",
    "mesh_ratios",
    "montecarlo_symmetric_difference_2d",
    "newton_solve",
    "normalized_series",
    "polygon_perimeter",
    "polygon_area",
    "predict",
    "predict_3d",
    "radial_symmetric_difference",
    "relative_change_series",
    "save_curve_csv",
    "save_off",
    "signed_area",
    "solve_direct",
    "surface_area",
    "table_from_csv",
    "table_to_csv",
]
