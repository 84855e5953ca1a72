"""Batch evaluation over a manifest, the report CSV and the channel ablation table."""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from tcinn.autodiff.tensor import Tensor
from tcinn.data.manifest import DatasetManifest, ManifestEntry, load_image, load_pair
from tcinn.data.preprocess import denormalize, read_scale_record
from tcinn.errors import TCINNError, ValidationError
from tcinn.metrics.quality import (
    INFINITE_PSNR,
    MAE_EPS,
    SSIM_MODES,
    PSNRValue,
    is_infinite_psnr,
    mae_excluded_fraction,
    mae_percent,
    psnr,
    rmse_percent,
    ssim,
)
from tcinn.metrics.suv import SUVParams, VOIMask, suv_mean
from tcinn.model.network import TCINNModel, augment_channels, collapse_channels, model_forward, model_inverse
from tcinn.platform.runtime import default_workers

logger = logging.getLogger("TCINN.Metrics")

REPORT_HEADER = ["pair_id", "psnr_db", "ssim", "rmse_pct", "mae_pct", "suv_ref", "suv_hat", "mae_excluded_pct"]
ABLATION_HEADER = ["channels", "psnr_db", "ssim", "rmse_pct", "mae_pct", "final_loss"]
METRIC_COLUMNS = REPORT_HEADER[1:]
DIRECTIONS = ("forward", "inverse")


@dataclass
class PairMetrics:
    pair_id: int
    psnr_db: Optional[PSNRValue] = None
    ssim: Optional[float] = None
    rmse_pct: Optional[float] = None
    mae_pct: Optional[float] = None
    suv_ref: Optional[float] = None
    suv_hat: Optional[float] = None
    mae_excluded_pct: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class MetricsReport:
    pairs: List[PairMetrics] = field(default_factory=list)

    @property
    def succeeded(self) -> List[PairMetrics]:
        return [pair for pair in self.pairs if pair.ok]

    @property
    def failed(self) -> List[PairMetrics]:
        return [pair for pair in self.pairs if not pair.ok]

    def values(self, column: str) -> List:
        if column not in METRIC_COLUMNS:
            raise ValidationError(f"unknown report column {column!r}")
        return [getattr(pair, column) for pair in self.succeeded if getattr(pair, column) is not None]

    def mean(self, column: str) -> Optional[PSNRValue]:
        return _aggregate(self.values(column))[0]

    def std(self, column: str) -> Optional[float]:
        return _aggregate(self.values(column))[1]


def _aggregate(values: Sequence) -> Tuple[Optional[PSNRValue], Optional[float]]:
    """Mean and population std of the finite values; all-infinite PSNR gives (INFINITE_PSNR, None)."""
    finite = [float(v) for v in values if not is_infinite_psnr(v)]
    if finite:
        data = np.asarray(finite, dtype=np.float64)
        return float(data.mean()), float(data.std())
    if values:
        return INFINITE_PSNR, None
    return None, None


@dataclass(frozen=True)
class EvalOptions:
    direction: str = "forward"
    ssim_mode: str = "window"
    mae_eps: float = MAE_EPS
    max_val: float = 1.0
    suv: Optional[SUVParams] = None
    voi: Optional[VOIMask] = None
    workers: int = field(default_factory=default_workers)

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.ssim_mode not in SSIM_MODES:
            raise ValidationError(f"ssim mode must be one of {SSIM_MODES}, got {self.ssim_mode!r}")
        if self.mae_eps <= 0:
            raise ValidationError(f"MAE epsilon must be positive, got {self.mae_eps}")
        if self.max_val <= 0:
            raise ValidationError(f"max_val must be positive, got {self.max_val}")
        if self.workers < 1:
            raise ValidationError(f"workers must be at least 1, got {self.workers}")


def predict(model: TCINNModel, image: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Run one 1×H×W image through the model and collapse back to 1×H×W."""
    x = augment_channels(Tensor(image[None]), model.channels)
    y = model_forward(x, model) if direction == "forward" else model_inverse(x, model)
    return collapse_channels(y).data[0]


def _evaluate_one(
    index: int,
    entry: ManifestEntry,
    model: Optional[TCINNModel],
    pred_dir: Optional[Path],
    options: EvalOptions,
) -> PairMetrics:
    try:
        source, target, pair_mask = load_pair(entry)
        if options.direction == "forward":
            given, ref, ref_path = source, target, entry.target
        else:
            given, ref, ref_path = target, source, entry.source
        if model is not None:
            pred = predict(model, given, options.direction)
        else:
            pred_name = (entry.source if options.direction == "forward" else entry.target).name
            pred = load_image(pred_dir / pred_name)
        a, b = ref[0], pred[0]
        result = PairMetrics(
            pair_id=index,
            psnr_db=psnr(a, b, options.max_val),
            ssim=ssim(a, b, options.ssim_mode),
            rmse_pct=rmse_percent(a, b),
            mae_pct=mae_percent(a, b, options.mae_eps),
            mae_excluded_pct=100.0 * mae_excluded_fraction(a, options.mae_eps),
        )
        voi = options.voi
        if voi is None and pair_mask is not None:
            voi = VOIMask(pair_mask[0] >= 0.5)
        if options.suv is not None and voi is not None:
            scale = read_scale_record(ref_path)
            result.suv_ref = suv_mean(denormalize(Tensor(a), scale), voi, options.suv)
            result.suv_hat = suv_mean(denormalize(Tensor(b), scale), voi, options.suv)
        if result.mae_excluded_pct > 0:
            logger.debug("pair %d: %.1f%% of pixels below the MAE floor", index, result.mae_excluded_pct)
        return result
    except (TCINNError, OSError, ValueError) as exc:
        logger.warning("pair %d (%s) failed: %s", index, entry.source.name, exc)
        return PairMetrics(pair_id=index, error=f"{type(exc).__name__}: {exc}")


def evaluate_pairs(
    manifest: DatasetManifest,
    model: Optional[TCINNModel] = None,
    pred_dir: Optional[Union[str, os.PathLike]] = None,
    options: Optional[EvalOptions] = None,
) -> MetricsReport:
    """Metrics for every manifest pair, from a model or from precomputed predictions.

    Predictions in ``pred_dir`` are looked up by the file name of the input
    image (the source for forward, the target for inverse). Failed pairs are
    recorded with their error and do not stop the batch.
    """
    if (model is None) == (pred_dir is None):
        raise ValidationError("evaluate_pairs needs exactly one of a model or a prediction directory")
    options = options or EvalOptions()
    pred_dir = Path(pred_dir) if pred_dir is not None else None
    indexed = list(enumerate(manifest.entries))
    with ThreadPoolExecutor(max_workers=options.workers, thread_name_prefix="TCINNEval") as pool:
        results = list(pool.map(lambda item: _evaluate_one(item[0], item[1], model, pred_dir, options), indexed))
    results.sort(key=lambda pair: pair.pair_id)
    report = MetricsReport(pairs=results)
    logger.info(
        "Evaluated %d pairs (%s): %d ok, %d failed, mean RMSE %s%%",
        len(results), options.direction, len(report.succeeded), len(report.failed),
        _format(report.mean("rmse_pct")),
    )
    return report


def _format(value) -> str:
    if value is None:
        return ""
    if is_infinite_psnr(value):
        return "inf"
    return f"{float(value):.17g}"


def _parse(text: str) -> Optional[PSNRValue]:
    text = text.strip()
    if not text:
        return None
    if text == "inf":
        return INFINITE_PSNR
    return float(text)


def write_report(report: MetricsReport, path: Union[str, os.PathLike]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for pair in report.pairs:
            writer.writerow([pair.pair_id] + [_format(getattr(pair, column)) for column in METRIC_COLUMNS])
        writer.writerow(["mean"] + [_format(report.mean(column)) for column in METRIC_COLUMNS])
        writer.writerow(["std"] + [_format(report.std(column)) for column in METRIC_COLUMNS])
    logger.info("Wrote report for %d pairs to %s", len(report.pairs), path)
    return path


def read_report(path: Union[str, os.PathLike]) -> Tuple[MetricsReport, Dict[str, Dict[str, Optional[PSNRValue]]]]:
    """Parse a report CSV into the per-pair report and its stored ``mean``/``std`` rows.

    Rows without any metric value come back as failed pairs.
    """
    pairs: List[PairMetrics] = []
    summary: Dict[str, Dict[str, Optional[PSNRValue]]] = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != REPORT_HEADER:
            raise ValidationError(f"{path}: unexpected report header {reader.fieldnames}")
        for row in reader:
            values = {column: _parse(row[column]) for column in METRIC_COLUMNS}
            if row["pair_id"] in ("mean", "std"):
                summary[row["pair_id"]] = values
                continue
            failed = all(value is None for value in values.values())
            pairs.append(PairMetrics(pair_id=int(row["pair_id"]), error="failed" if failed else None, **values))
    return MetricsReport(pairs=pairs), summary


@dataclass(frozen=True)
class SUVComparison:
    deviations: Dict[int, float]
    mean_deviation: Optional[float]


def suv_comparison(report: MetricsReport) -> SUVComparison:
    """Relative SUV deviation (suv_hat − suv_ref) / suv_ref per pair and on average."""
    deviations = {
        pair.pair_id: (pair.suv_hat - pair.suv_ref) / pair.suv_ref
        for pair in report.succeeded
        if pair.suv_ref is not None and pair.suv_hat is not None and pair.suv_ref != 0
    }
    mean = float(np.mean(list(deviations.values()))) if deviations else None
    return SUVComparison(deviations=deviations, mean_deviation=mean)


@dataclass(frozen=True)
class AblationRow:
    channels: int
    psnr_db: Optional[PSNRValue]
    ssim: Optional[float]
    rmse_pct: Optional[float]
    mae_pct: Optional[float]
    final_loss: float

    @classmethod
    def from_report(cls, channels: int, report: MetricsReport, final_loss: float) -> "AblationRow":
        return cls(
            channels=channels,
            psnr_db=report.mean("psnr_db"),
            ssim=report.mean("ssim"),
            rmse_pct=report.mean("rmse_pct"),
            mae_pct=report.mean("mae_pct"),
            final_loss=final_loss,
        )


def write_ablation_table(rows: Iterable[AblationRow], path: Union[str, os.PathLike]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(rows, key=lambda row: row.channels)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ABLATION_HEADER)
        for row in rows:
            writer.writerow([row.channels] + [_format(getattr(row, column)) for column in ABLATION_HEADER[1:]])
    logger.info("Wrote %d-row ablation table to %s", len(rows), path)
    return path
