"""Image-quality metrics, VOI mean SUV and evaluation reports."""

from tcinn.metrics.quality import (
    INFINITE_PSNR,
    InfinitePSNR,
    is_infinite_psnr,
    mae_excluded_fraction,
    mae_percent,
    psnr,
    rmse_percent,
    ssim,
)
from tcinn.metrics.report import (
    AblationRow,
    EvalOptions,
    MetricsReport,
    PairMetrics,
    SUVComparison,
    evaluate_pairs,
    predict,
    read_report,
    suv_comparison,
    write_ablation_table,
    write_report,
)
from tcinn.metrics.suv import SUVParams, VOIMask, load_voi_mask, suv_mean

__all__ = [
    "AblationRow",
    "EvalOptions",
    "INFINITE_PSNR",
    "InfinitePSNR",
    "MetricsReport",
    "PairMetrics",
    "SUVComparison",
    "SUVParams",
    "VOIMask",
    "evaluate_pairs",
    "is_infinite_psnr",
    "load_voi_mask",
    "mae_excluded_fraction",
    "mae_percent",
    "predict",
    "psnr",
    "read_report",
    "rmse_percent",
    "ssim",
    "suv_comparison",
    "suv_mean",
    "write_ablation_table",
    "write_report",
]
