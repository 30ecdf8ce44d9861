"""DMD with control, its prediction-error bound, and a 2D heat-diffusion test bed."""
from .errors import (AssumptionViolatedError, CsvParseError, DmdcError, DominanceViolationError,
                     IllConditionedEigenbasisError, InvalidArgumentError, NumericalFailureError,
                     RankDeficientError)
from .snapshots import (InputSequence, SnapshotSet, collect_bursts, collect_snapshots, generate_prbs,
                        generate_sinusoid, read_matrix_csv, write_matrix_csv)
from .dmdc import (DmdcModel, ReducedTrajectory, TruncatedSvdFactors, dmd_modes, estimate_full_order,
                   fit_dmdc, load_model, predict, reconstruct, save_model, suggest_order, truncated_svd)
from .bounds import (BoundConstants, ErrorTrajectory, TruthModel, actual_error_trajectory, asymptotic_bound,
                     bound_trajectory, estimate_constants, spectral_norm, spectral_radius,
                     theta_projection_error)
from .diffusion import (DiffusionConfig, DiffusionSystem, FieldState, build_system, extract_truth,
                        identify_truth, inner_oracle, step)

__version__ = "0.1.0"
