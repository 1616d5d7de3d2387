"""Multiscale P1 finite elements for a semilinear elliptic problem with a
degenerate reaction on a perforated domain: the stabilized linearization
(L-scheme), periodic homogenization and the error studies around them."""
from .fem import (
    EllipticityError,
    FeField,
    NonConvergenceError,
    OutOfDomainError,
    PoincareEstimate,
    apply_dirichlet,
    apply_periodic_and_mean,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    estimate_poincare,
    evaluate,
    evaluate_gradient,
    h1_seminorm,
    l2_norm,
    lumped_mass,
    solve_spd,
)
from .macro import (
    AlphaCase,
    CellFunctions,
    HomogenizedTensor,
    MacroConfig,
    homogenized_tensor,
    linf_stability_diagnostic,
    macro_contraction_factor,
    macro_lscheme_step,
    run_macro_lscheme,
    solve_cell_problems,
)
from .mesh import (
    Mesh,
    MeshFormatError,
    PerforationSpec,
    RefinementTooCoarse,
    Tag,
    generate_cell,
    generate_perforated,
    generate_periodic_square,
    generate_square,
    read_mesh,
    write_mesh,
)
from .micro import (
    LSchemeTrace,
    MicroConfig,
    constant_coefficient,
    lscheme_step,
    oscillatory_coefficient,
    recursion_bound,
    run_lscheme,
    solve_newton,
)
from .reaction import (
    GammaSchedule,
    ReactionSpec,
    ScheduleKind,
    gamma_value,
    reaction_derivative,
    reaction_value,
    regularization_gap,
    regularized_derivative,
    regularized_value,
    sampled_gap,
)
from .experiments import (
    ErrorReport,
    StudySetup,
    error_e1,
    error_e2,
    fit_rate,
    run_contraction_report,
    run_corrector_rate,
    run_table1,
    run_table2,
)

__version__ = "0.1.0"
