import os
from pathlib import Path
from typing import Tuple


def project_root() -> Path:
    # /repo/src/tcinn/platform/runtime.py -> /repo
    return Path(__file__).resolve().parents[3]


def output_dirs() -> Tuple[Path, Path]:
    # default targets only; writers create the directory they write into
    root = project_root()
    checkpoint_dir = root / "data" / "outputs" / "checkpoints"
    report_dir = root / "data" / "outputs" / "reports"
    return checkpoint_dir, report_dir


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
