"""Genomic prediction with additive marker, subpopulation and spatial kernels."""

from .baselines import (
    AdjustedPhenotypes,
    ib_fit_predict,
    mvng_adjust,
    one_kernel_fit,
    rc_adjust,
    two_step_predict,
)
from .data import (
    DataFormatError,
    Dataset,
    FieldLayout,
    GenotypeMatrix,
    cross_sq_dists,
    load_dataset,
    load_genotypes,
    pairwise_sq_dists,
)
from .engine import (
    ConditionalMoments,
    FitResult,
    GrfParams,
    ModelConfig,
    NumericalError,
    QueryPoints,
    assemble_sigma,
    conditional_moments,
    fit,
    fit_result_at,
    joint_conditional,
    predict,
    profile_loglik,
    profile_mu,
)
from .evaluation import (
    MetricReport,
    SplitPlan,
    accuracy,
    make_splits,
    run_benchmark,
    spearman,
    top_l_median_rank,
)
from .kernels import (
    KernelMatrix,
    LatticeKernelBuilder,
    LatticeSpec,
    build_precision,
    marker_kernel,
    path_laplacian,
    rr_kernel,
    spatial_kernel,
    subpop_kernel,
    vanraden_kinship,
)
from .simulation import (
    LatentSampler,
    RankingReport,
    SimSpec,
    ranking_study,
    sample_latents,
    synth_response,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustedPhenotypes",
    "ConditionalMoments",
    "DataFormatError",
    "Dataset",
    "FieldLayout",
    "FitResult",
    "GenotypeMatrix",
    "GrfParams",
    "KernelMatrix",
    "LatentSampler",
    "LatticeKernelBuilder",
    "LatticeSpec",
    "MetricReport",
    "ModelConfig",
    "NumericalError",
    "QueryPoints",
    "RankingReport",
    "SimSpec",
    "SplitPlan",
    "accuracy",
    "assemble_sigma",
    "build_precision",
    "conditional_moments",
    "cross_sq_dists",
    "fit",
    "fit_result_at",
    "ib_fit_predict",
    "joint_conditional",
    "load_dataset",
    "load_genotypes",
    "make_splits",
    "marker_kernel",
    "mvng_adjust",
    "one_kernel_fit",
    "pairwise_sq_dists",
    "path_laplacian",
    "predict",
    "profile_loglik",
    "profile_mu",
    "ranking_study",
    "rc_adjust",
    "rr_kernel",
    "run_benchmark",
    "sample_latents",
    "spatial_kernel",
    "spearman",
    "subpop_kernel",
    "synth_response",
    "top_l_median_rank",
    "two_step_predict",
    "vanraden_kinship",
]
