"""
Tab-separated file helpers shared by every module that writes results.

All tables are written through ``write_table`` so they share one float format
(17 significant digits, enough to round-trip a double) and land on disk with
an atomic replace.
"""

import os
import tempfile
from pathlib import Path

import pandas as pd

from .exceptions import CohortFormatError

FLOAT_FORMAT = "%.17g"


def atomic_write_text(path, text):
    """Write ``text`` to a temporary sibling of ``path`` and move it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def frame_to_tsv(frame: pd.DataFrame) -> str:
    return frame.to_csv(sep="\t", index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")


def write_table(frame: pd.DataFrame, path):
    return atomic_write_text(path, frame_to_tsv(frame))


def read_table(path, required=(), **kwargs) -> pd.DataFrame:
    """Read a tab-separated table; ``required`` columns must all be present."""
    try:
        frame = pd.read_csv(path, sep="\t", keep_default_na=True, **kwargs)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise CohortFormatError(f"{path}: {exc}") from exc
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise CohortFormatError(f"{path}: missing columns {missing}")
    return frame


def write_metrics(metrics, path):
    """Write a ``metric<TAB>value`` report."""
    frame = pd.DataFrame({"metric": list(metrics.keys()), "value": [float(v) for v in metrics.values()]})
    return write_table(frame, path)


def read_metrics(path):
    frame = read_table(path, required=("metric", "value"), dtype={"metric": str, "value": float})
    return dict(zip(frame["metric"], frame["value"]))
