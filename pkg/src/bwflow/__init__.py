"""Statistical inference for flows of covariance matrices.

The package implements the optimal-transport geometry of positive
semi-definite matrices (distances, transport maps, geodesics, tangent
spaces), pointwise Frechet means of flows with deterministic and
stochastic solvers, tangent principal component analysis, scatter
smoothing, lag-window spectral density flows, synthetic data
generators, flow clustering and a command line interface with a small
binary container format.
"""

__version__ = "0.1.0"

from .exceptions import (
    AllDegenerateError,
    BwflowError,
    DimMismatchError,
    EmptyFreqGridError,
    EmptyWindowError,
    FormatError,
    GridMismatchError,
    GridTooCoarseError,
    KernelNestingError,
    KOutOfRangeError,
    KTooLargeError,
    LagTooLargeError,
    LambdaOutOfRangeError,
    LambdaTooLargeError,
    NegativeWeightWarning,
    NonConvergenceError,
    NonFiniteError,
    NonHermitianError,
    NotPsdError,
    PointwiseFailureError,
    RaggedSeriesError,
    SingularDesignError,
    SingularMomentsWarning,
    ValidationError,
    WindowTooLargeError,
)
from .linalg import (
    hermitian_eig,
    hs_norm,
    operator_norm,
    pinv_sqrt_psd,
    project_psd,
    sqrt_psd,
    trace_norm,
    validate_cov_matrix,
)
from .geometry import (
    bw_distance,
    embed,
    exp_map,
    geodesic,
    log_map,
    tangent_inner,
    tangent_norm,
    transport_map,
    unembed,
)
from .flow import (
    Flow,
    FlowDiagnostics,
    FlowSet,
    flow_distance,
    mccann_eval,
    resample_flow,
    trapezoid_weights,
    validate_flowset,
)
from .barycenter import (
    FrechetMeanFlow,
    GdConfig,
    GdTrace,
    SgdConfig,
    SgdTrace,
    euclidean_mean,
    frechet_mean_flow,
    frechet_mean_gd,
    frechet_mean_sgd,
)
from .pca import (
    PcaModel,
    TangentField,
    TangentPCA,
    fit_pca,
    log_field,
    log_field_mats,
    max_mode_amplitude,
    mode_of_variation,
    project_scores,
    tangent_pca,
    unembedded_component,
)
from .smoothing import (
    CovSurface,
    Kernel,
    LfrDiagnostics,
    LocalFrechetSmoother,
    NadarayaWatsonSmoother,
    ScatterObs,
    cov_surface_smooth,
    lfr_estimate,
    lfr_weights,
    nw_smooth,
    select_bandwidth,
    surface_pca,
    surface_smooth_pairs,
)
from .spectral import (
    SeriesPanel,
    SpectralFlow,
    autocov,
    invert_sdf,
    lag_window,
    spectral_density_flow,
)
from .simulate import (
    PerturbationLaw,
    SimConfig,
    bimodal_dataset,
    default_perturbation_law,
    degenerate_perturbation_law,
    harmonic_basis,
    sample_flows,
    sample_perturbation,
    template_flow,
)
from .cluster import (
    FlowKMeans,
    KMeansResult,
    elbow_scores,
    kmeans_flows,
    pairwise_flow_distances,
)
from .io import (
    RunManifest,
    file_sha256,
    load_pca_model,
    read_bwf1,
    read_bwf1_raw,
    save_pca_model,
    write_bwf1,
    write_flows,
)
