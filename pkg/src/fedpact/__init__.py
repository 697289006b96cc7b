"""Contract-menu incentives and coverage-aware aggregation for federated learning.

The package measures how well a client's local data covers the feature
space, prices a menu of fee/reward contracts that makes quality types
self-select truthfully, simulates a contracting round, and compares
reward-weighted against uniform aggregation in a small end-to-end
federated training experiment.
"""
from .config import ConfigError, ExperimentConfig, TaskSpec, TrainingSpec
from .contracts import (
    ClientType,
    ContractItem,
    ContractMenu,
    EffortResponse,
    FeasibilityReport,
    GridSearchResult,
    GridSpec,
    MenuMismatchError,
    RevenueCurve,
    TypeProfile,
    best_response_effort,
    client_utility,
    client_utility_at_best_response,
    enforce_monotonicity,
    grid_search_menu,
    server_expected_utility,
    solve_optimal_menu,
    verify_feasibility,
)
from .coverage import (
    CoverageEstimate,
    PointCloud,
    classify_type,
    coverage_quality,
    estimate_coverage,
)
from .learning import (
    ArchitectureMismatchError,
    CalibrationError,
    ClientDataset,
    ModelArch,
    ModelVector,
    SchemeReport,
    SyntheticTask,
    aggregate,
    generate_client_dataset,
    local_train,
    model_accuracy,
    run_scheme_comparison,
    server_test,
)
from .simulation import (
    ContractChoice,
    RoundOutcome,
    SimulatedClient,
    aggregation_weights,
    choose_contract,
    realize_success,
    run_round,
    sample_population,
)

__version__ = "0.1.0"
