"""bikal: bi-fidelity iterative ensemble Kalman inversion toolkit."""

from .grids import GridSpec, Snapshot, interpolate_to_grid
from .forward import (
    BoundaryModes,
    ConvDiffConfig,
    ConvectionDiffusionModel,
    ForwardModel,
    LinearModel,
    SolverFailure,
    make_fidelity_pair,
    solve_convdiff,
)
from .random_fields import (
    BoxPrior,
    KernelSpec,
    KlBasis,
    build_kl_basis,
    gaussian_sample,
    lhs_sample,
    sample_field,
)
from .bifidelity import (
    BfModel,
    SelectionResult,
    SnapshotMatrix,
    TrainingStep,
    bf_coefficients,
    bf_predict,
    error_bound,
    error_ratio_re,
    gramian,
    model_similarity_rs,
    pivoted_cholesky_select,
    subspace_distance,
    train_bf,
)
from .enkf import (
    AugmentedEnsemble,
    InversionState,
    ObservationSet,
    RelativeError,
    kalman_update,
    normalized_misfit,
    observe,
    relative_error_e,
    run_inversion,
    synthesize_data,
)

__version__ = "0.1.0"
