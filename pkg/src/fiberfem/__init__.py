"""Finite-element solver for -Lap(u) - f(x,u) = g on [0,1] x [0,2].

The solver splits both sides of the problem along the Laplacian modes that
interact with the nonlinearity, reaches the fiber of a right-hand side by a
horizontal Newton iteration, and enumerates solutions by inverting the
low-dimensional height map along the fiber.
"""

from .errors import (
    BisectionError,
    ConfigError,
    DegenerateSpectrumError,
    EigenConvergenceError,
    EvaluationError,
    FiberFemError,
    InsufficientSpectrumError,
    NewtonError,
    ResonanceError,
    SingularOperatorError,
    TraceError,
)
from .explorer import (
    CurveCrossing,
    FiberTrace,
    SolutionSet,
    TargetHit,
    find_intersections_2d,
    find_self_intersections,
    find_target_hits,
    newton_full,
    solve_on_fiber_1d,
    trace_circle_2d,
    trace_fiber_1d,
    trace_radial_2d,
)
from .mesh import (
    Mesh,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
    build_mesh,
    full_grid_values,
    interpolate,
    matrix_triplets,
    triangle_areas,
)
from .nonlinearity import (
    Nonlinearity,
    ValidationVerdict,
    eval_d2f_nodal,
    eval_f_nodal,
    make_arctan_family,
    make_bump_family,
    validate_appropriate,
)
from .solver import (
    LcOperator,
    Problem,
    SolveReport,
    apply_Lc,
    assemble_DF,
    continuation_horizontal,
    eval_F,
    fiber_point,
    fiber_residual,
    horizontal_newton,
    move_along_fiber,
    setup_problem,
    solve_Lc,
)
from .spectral import (
    SpectralData,
    analytic_eigenvalues,
    compute_eigenpairs,
    index_set,
)

__version__ = "0.1.0"
