from collections.abc import Mapping
from pathlib import Path
from typing import Any

import pandas as pd

FLOAT_FORMAT = "%.12g"


def write_csv(path: Path, frame: pd.DataFrame, meta: Mapping[str, Any] | None = None) -> Path:
    """Write ``frame`` with ``# key=value`` metadata lines ahead of the header.

    Formatting is fixed so that identical inputs give byte-identical files.
    """
    path = Path(path)
    with path.open("w", newline="") as handle:
        for key, value in (meta or {}).items():
            handle.write(f"# {key}={value}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
