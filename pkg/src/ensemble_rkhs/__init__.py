"""Recognition, identification and clustering of ensemble systems from
aggregated measurements, using kernel mean embeddings and MMD."""

__version__ = "0.1.0"

from ensemble_rkhs.errors import (
    ConfigError,
    FlowDivergenceError,
    NumericalError,
    SimulationDivergenceError,
)
from ensemble_rkhs.ensemble import (
    AggregatedTrajectory,
    EnsembleSystem,
    IndexSet,
    StateTrajectoryField,
    TimeGrid,
    aggregate_moments,
    calibrate,
    sample_index_points,
    simulate_system,
)
from ensemble_rkhs.signals import (
    ControlSignal,
    LambdaTable,
    SignalSpec,
    evaluate_signal,
    generate_signals,
    lambda_table,
)
from ensemble_rkhs.rkhs import (
    KernelConfig,
    SampleSet,
    TestResult,
    gaussian_kernel,
    mmd_unbiased,
    required_samples,
    test_threshold,
    trajectory_sq_distance,
    two_sample_test,
)
from ensemble_rkhs.markov import (
    FlowResult,
    MarkovParams,
    aggregated_markov_parameters,
    baseline_outputs,
    gradient_flow,
    mgf_eval,
    mmd_gradient,
    realize_scalar_field,
)
from ensemble_rkhs.clustering import (
    Dendrogram,
    DistanceMatrix,
    agglomerative_cluster,
    cut_clusters,
    pairwise_mmd,
)
