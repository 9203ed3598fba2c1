"""Locally private nonparametric regression with user-chosen public features.

Protected axes are coarsened into a histogram, the open axes into a
variance-guided tree; users release a noisy label and debiased indicator
estimates of their grid, and the server averages per grid.  The package
also ships the selection rule for the partition parameters, the benchmark
baselines, and a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .baselines import (
    CartModel,
    PrivateHistModel,
    fit_cart,
    fit_krr,
    fit_label_dt,
    fit_par_dt,
    fit_private_histogram,
)
from .errors import (
    CapacityError,
    ConfigError,
    DataError,
    DomainError,
    UnsupportedMechanismError,
)
from .estimators import (
    HistOfTreeModel,
    ParamSelection,
    RateParams,
    fit,
    fit_ad_hist_of_tree,
    fit_aligned_hist_of_tree,
    fit_personalized_hist_of_tree,
    predict,
    rank_private_axes,
    select_parameters,
    tail_weight,
)
from .harness import (
    Dataset,
    ExperimentConfig,
    MethodSpec,
    ResultTable,
    WilcoxonResult,
    gen_mask_aligned,
    gen_mask_gamma,
    gen_mask_realdata,
    gen_synthetic,
    ingest_csv,
    mse,
    rank_sum_summary,
    run_experiment,
    wilcoxon_signed_rank,
)
from .mechanisms import (
    MaskMatrix,
    PrivacyAudit,
    PrivacyBudget,
    PrivatizedBatch,
    PrivatizedRecord,
    audit_privacy_ratio,
    generalized_rr,
    laplace_label,
    privatize_aligned,
    privatize_batch_aligned,
    privatize_batch_personalized,
    privatize_personalized,
    rr_indicator,
)
from .partition import (
    Cell,
    HistogramPartition,
    ProductPartition,
    TreePartition,
    build_histogram,
    cart_tree,
    grid_index,
    max_edge_tree,
    potential_grids,
)
