"""fedsim: a deterministic federated optimization simulator with theory checks.

Core pieces:

* :mod:`fedsim.models` — convex objectives (softmax regression, least squares)
* :mod:`fedsim.synthdata` — heterogeneous synthetic data and LEAF-style files
* :mod:`fedsim.fedcore` — device sampling, local solvers, round updates
* :mod:`fedsim.theory` — dissimilarity / inexactness measures, decrease bounds
* :mod:`fedsim.harness` — experiment orchestration and metrics logging
* :mod:`fedsim.service` — FastAPI wrapper; :mod:`fedsim.cli` — thin client
"""

from .errors import (
    ConfigurationError,
    DataError,
    DivergenceError,
    FedsimError,
    NumericalError,
    TheoremInapplicableError,
    UndefinedDissimilarityError,
    UndefinedInexactnessError,
)
from .fedcore import (
    ALGORITHMS,
    FEDAVG,
    FEDDANE,
    FEDPROX,
    WITH_REPLACEMENT,
    WITHOUT_REPLACEMENT,
    AlgorithmConfig,
    DeviceExecutor,
    ExactSolveResult,
    RoundRecord,
    ServerState,
    fedavg_round,
    feddane_round,
    fedprox_round,
    global_gradient,
    global_loss,
    local_sgd,
    run_round,
    sample_devices,
    solve_subproblem_exact,
    solve_subproblem_inexact,
    surrogate_gradient,
)
from .harness import (
    ExperimentConfig,
    MuSelection,
    TheoryReport,
    TheoryRow,
    build_dataset,
    build_objective,
    participation_sweep,
    run_experiment,
    select_mu,
    theory_report,
    unrealistic_setting,
)
from .metrics import MetricsLog, MetricsRow, parse_csv, render_csv, write_experiment
from .models import (
    LINEAR_REGRESSION,
    MULTINOMIAL_LOGISTIC,
    DeviceDataset,
    Objective,
    spectral_norm,
)
from .synthdata import (
    DatasetStats,
    FederatedDataset,
    SynthConfig,
    dataset_stats,
    generate_synthetic,
    load_leaf,
    make_identical_devices,
)
from .theory import (
    ConvergenceBudget,
    DecreaseReport,
    TheoryConstants,
    estimate_fstar,
    iteration_bound,
    measure_dissimilarity,
    measure_inexactness,
    network_lipschitz,
    rho_convex,
    rho_device_specific,
    rho_nonconvex,
    verify_sufficient_decrease,
)

__version__ = "0.1.0"
