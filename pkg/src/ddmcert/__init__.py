"""ddmcert: overlapping Schwarz solves with guaranteed error majorants."""

from .mesh import (
    TriMesh,
    DomainDecomposition,
    CoarseMesh,
    MeshError,
    build_lshape_mesh,
    build_rect_grid_decomposition,
    build_coarse_mesh,
    compatibility_check,
)
from .problem import (
    EllipticProblem,
    ScalarFieldP1,
    LinearSystem,
    manufactured_lshape_problem,
    assemble_stiffness,
    assemble_load,
    solve_dirichlet,
    energy_error,
)
from .linalg import SolverError, SaddleSystem, SaddleFactorization, saddle_solve
from .schwarz import (
    SchwarzConfig,
    SchwarzState,
    run_schwarz,
    extract_trace,
    contraction_estimate,
)
from .flux import (
    BrokenFluxField,
    CorrectorSpace,
    CorrectorSolver,
    average_gradient,
    build_corrector_space,
    constraint_residuals,
    solve_corrector,
    corrected_flux,
    improve_corrector_locally,
    write_coefficients_csv,
)
from .majorant import (
    MajorantConstants,
    MajorantReport,
    poincare_edge_constant,
    beta_pair,
    friedrichs_bbox_constant,
    alpha_weights,
    evaluate_majorant,
    optimize_eps,
    efficiency_index,
    global_majorant_baseline,
)
from .pipeline import ConfigError, RunConfig, run_case
from .vtkio import write_vtk

__version__ = "0.1.0"
