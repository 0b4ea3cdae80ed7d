"""Two-level recovery of sensory fields: in-network compressive aggregation
over diffusion-wavelet bases, then nuclear-norm completion of the field."""

from .completion import (
    CompletionResult,
    ObservationSet,
    complete,
    field_error,
    observations_from_deployment,
    prop2_bound,
    vector_error,
)
from .experiments import (
    ScenarioConfig,
    TrialRecord,
    emit_results_csv,
    load_scenario_json,
    make_smoke_config,
    run_scenario,
)
from .field import (
    CsvParseError,
    FieldGrid,
    ReadingSeries,
    generate_peaks_field,
    generate_smooth_random_field,
    load_field_csv,
    sample_field,
    save_field_csv,
)
from .network import (
    ConnectivityError,
    Deployment,
    NetworkGraph,
    build_graph,
    deploy,
    load_deployment_json,
    save_deployment_json,
)
from .recovery import (
    RecoveryResult,
    SensingMatrix,
    compute_energy_overlap,
    encode,
    make_sensing_matrix,
    recover,
    recover_joint,
)
from .routing import (
    HYBRID_CS,
    NON_AGG,
    PLAIN_CS,
    AggregationForest,
    TrafficReport,
    TreeRecord,
    account_traffic,
    build_hybrid_tree,
    build_spt,
    partition_forest,
)
from .wavelets import (
    DiffusionBasis,
    LaplacianSpec,
    SpectrumError,
    TemporalCoupling,
    basis_from_positions,
    build_adjacency,
    build_basis,
    build_normalized_laplacian,
    build_operator,
    build_spatiotemporal_adjacency,
)

__version__ = "0.1.0"
