"""lawlab: a desk-scale laboratory for fitting and stress-testing scaling laws.

Ingest training-run checkpoint records, apply data-collection policies, count
parameters and compute under configurable conventions, fit configurable
power-law families with configurable objectives/optimizers/initializations,
and report derived compute-optimal allocations with validation diagnostics.
"""

from .counting import (
    AnnotatedRecord,
    ArchDescriptor,
    ComputeAnnotatedDataset,
    CountingPolicy,
    annotate_compute,
    count_params,
    flops_per_token,
    load_arch_table,
    six_nd,
    training_flops,
)
from .estimator import ScalingLawRegressor
from .fitters import (
    BootstrapResult,
    FitResult,
    GridAxis,
    GridSpec,
    InitStrategy,
    MultistartReport,
    OptimizerSpec,
    bootstrap_fit,
    fit,
    generate_grid,
    minimize,
    select_inits,
)
from .forms import (
    ChinchillaParams,
    KaplanParams,
    RatioParams,
    TiedParams,
    grad_params,
    log_predict_loss,
    optimal_allocation,
    predict_loss,
    ratio_predict,
)
from .isoflop import (
    IsoflopResult,
    build_isoflop_bins,
    fit_ratio_law,
    interpolate_at_flops,
    isoflop_pipeline,
    isoflop_profile,
)
from .ledger import (
    Dataset,
    FilterSpec,
    RunRecord,
    apply_filters,
    filter_checkpoints,
    filter_lr,
    filter_scale,
    ingest,
    to_csv,
)
from .objectives import (
    FitProblem,
    ObjectiveSpec,
    objective_grad,
    objective_value,
    pointwise_loss,
    residual,
)
from .validation import goodness_of_fit, validate_extrapolation

__version__ = "0.1.0"

__all__ = [
    "AnnotatedRecord",
    "ArchDescriptor",
    "BootstrapResult",
    "ChinchillaParams",
    "ComputeAnnotatedDataset",
    "CountingPolicy",
    "Dataset",
    "FilterSpec",
    "FitProblem",
    "FitResult",
    "GridAxis",
    "GridSpec",
    "InitStrategy",
    "IsoflopResult",
    "KaplanParams",
    "MultistartReport",
    "ObjectiveSpec",
    "OptimizerSpec",
    "RatioParams",
    "RunRecord",
    "ScalingLawRegressor",
    "TiedParams",
    "annotate_compute",
    "apply_filters",
    "bootstrap_fit",
    "build_isoflop_bins",
    "count_params",
    "filter_checkpoints",
    "filter_lr",
    "filter_scale",
    "fit",
    "fit_ratio_law",
    "flops_per_token",
    "generate_grid",
    "goodness_of_fit",
    "grad_params",
    "ingest",
    "interpolate_at_flops",
    "isoflop_pipeline",
    "isoflop_profile",
    "load_arch_table",
    "log_predict_loss",
    "minimize",
    "objective_grad",
    "objective_value",
    "optimal_allocation",
    "pointwise_loss",
    "predict_loss",
    "ratio_predict",
    "residual",
    "select_inits",
    "six_nd",
    "to_csv",
    "training_flops",
    "validate_extrapolation",
]
