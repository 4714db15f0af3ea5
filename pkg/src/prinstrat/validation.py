"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

from typing import Mapping

import numpy as np
import pandas as pd

from .exceptions import DataError

__all__ = ["check_frame", "check_columns"]


def check_frame(data) -> pd.DataFrame:
    """Coerce ``data`` to a non-empty DataFrame with string column names."""
    if isinstance(data, pd.DataFrame):
        df = data
    elif isinstance(data, Mapping):
        df = pd.DataFrame(dict(data))
    elif isinstance(data, np.ndarray) and data.dtype.names:
        df = pd.DataFrame(data)
    else:
        raise DataError(f"expected a DataFrame or a mapping of columns, got {type(data).__name__}")
    if df.empty:
        raise DataError("data has no rows")
    if not all(isinstance(c, str) for c in df.columns):
        raise DataError("column names must be strings")
    return df.reset_index(drop=True)


def check_columns(df: pd.DataFrame, columns) -> None:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"missing column(s) {missing}; data has {list(df.columns)}")
