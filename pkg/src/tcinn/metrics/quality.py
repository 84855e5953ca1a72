"""Per-image fidelity metrics on [0, 1] data: PSNR, SSIM, RMSE% and MAE%."""

import math
from typing import Union

import numpy as np
from skimage.metrics import mean_squared_error, structural_similarity

from tcinn.autodiff.tensor import Tensor
from tcinn.errors import EmptySupportError, ShapeError, ValidationError

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MAE_EPS = 0.01
SSIM_MODES = ("window", "global")

ImageLike = Union[Tensor, np.ndarray]


class InfinitePSNR:
    """PSNR of two identical images. Never a float, so aggregation has to skip it on purpose."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFINITE_PSNR"

    def __str__(self) -> str:
        return "inf"

    def __eq__(self, other) -> bool:
        return isinstance(other, InfinitePSNR)

    def __hash__(self) -> int:
        return hash("INFINITE_PSNR")


INFINITE_PSNR = InfinitePSNR()
PSNRValue = Union[float, InfinitePSNR]


def is_infinite_psnr(value) -> bool:
    return isinstance(value, InfinitePSNR)


def _pair(y_ref: ImageLike, y_hat: ImageLike):
    a = np.asarray(y_ref.data if isinstance(y_ref, Tensor) else y_ref, dtype=np.float64)
    b = np.asarray(y_hat.data if isinstance(y_hat, Tensor) else y_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("metric inputs are empty")
    return a, b


def _as_2d(a: np.ndarray) -> np.ndarray:
    while a.ndim > 2 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ShapeError(f"SSIM expects a single H×W image, got shape {a.shape}")
    return a


def psnr(y_ref: ImageLike, y_hat: ImageLike, max_val: float = 1.0) -> PSNRValue:
    """20·log10(max_val / RMSE) in dB, or INFINITE_PSNR when the images are identical."""
    if max_val <= 0:
        raise ValidationError(f"max_val must be positive, got {max_val}")
    a, b = _pair(y_ref, y_hat)
    mse = float(mean_squared_error(a, b))
    if mse == 0.0:
        return INFINITE_PSNR
    return 20.0 * math.log10(max_val / math.sqrt(mse))


def _global_ssim(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a = np.mean(da * da)
    var_b = np.mean(db * db)
    cov = np.mean(da * db)
    numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(numerator / denominator)


def ssim(y_ref: ImageLike, y_hat: ImageLike, mode: str = "window", data_range: float = 1.0) -> float:
    """Structural similarity with c1 = (0.01·L)², c2 = (0.03·L)².

    ``mode="window"`` averages the per-window index over an 11×11 Gaussian
    window (σ = 1.5) on the valid region. ``mode="global"`` evaluates the index
    once with whole-image statistics.
    """
    if mode not in SSIM_MODES:
        raise ValidationError(f"unknown SSIM mode {mode!r}; expected one of {SSIM_MODES}")
    a, b = _pair(y_ref, y_hat)
    a, b = _as_2d(a), _as_2d(b)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    if mode == "global":
        return _global_ssim(a, b, c1, c2)
    if min(a.shape) < SSIM_WINDOW:
        raise ValidationError(
            f"{a.shape[0]}×{a.shape[1]} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window; "
            "use mode='global' for whole-image statistics"
        )
    return float(
        structural_similarity(
            a,
            b,
            data_range=data_range,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
    )


def rmse_percent(y_ref: ImageLike, y_hat: ImageLike) -> float:
    a, b = _pair(y_ref, y_hat)
    return 100.0 * math.sqrt(float(mean_squared_error(a, b)))


def mae_support(y_ref: ImageLike, eps: float = MAE_EPS) -> np.ndarray:
    """Pixels with a reference value of at least ``eps``."""
    if eps <= 0:
        raise ValidationError(f"MAE epsilon must be positive, got {eps}")
    a = np.asarray(y_ref.data if isinstance(y_ref, Tensor) else y_ref, dtype=np.float64)
    return a >= eps


def mae_excluded_fraction(y_ref: ImageLike, eps: float = MAE_EPS) -> float:
    support = mae_support(y_ref, eps)
    return 1.0 - float(np.count_nonzero(support)) / support.size


def mae_percent(y_ref: ImageLike, y_hat: ImageLike, eps: float = MAE_EPS) -> float:
    """100 · mean |y − ŷ| / y over reference pixels ≥ eps; the rest are left out of the count."""
    a, b = _pair(y_ref, y_hat)
    support = mae_support(a, eps)
    if not support.any():
        raise EmptySupportError(f"empty support: no reference pixel is >= {eps}")
    return 100.0 * float(np.mean(np.abs(a[support] - b[support]) / a[support]))
