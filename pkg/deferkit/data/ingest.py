"""
Tabular CSV ingestion

Reads a rectangular numeric CSV with a header row, reports malformed input
with the 1-based file line of the first offending row, splits it and
normalizes the features with statistics of the training split only.
"""
import io
import logging
import re
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from deferkit.data.dataset import NORMALIZATIONS, Dataset, Normalization, split_indices
from deferkit.errors import ConfigurationError, DataFormatError

logger = logging.getLogger(__name__)

_PARSER_LINE = re.compile(r"line (\d+)")


class CSVIngester:
    """Load numeric CSV files into datasets."""

    def __init__(self, train_fraction: float = 0.8, seed: int = 0):
        """
        Initialize the ingester.

        Args:
            train_fraction (float): Share of rows in the training split
            seed (int): Seed of the split
        """
        self.train_fraction = train_fraction
        self.seed = seed

    def read_frame(self, path: str) -> Tuple[pd.DataFrame, int]:
        """Raw cells as strings and the file line of the first data row; leading ``#`` lines are skipped."""
        with open(path, "r") as f:
            lines = f.readlines()
        skipped = 0
        while skipped < len(lines) and lines[skipped].startswith("#"):
            skipped += 1
        try:
            frame = pd.read_csv(io.StringIO("".join(lines[skipped:])), dtype=str, keep_default_na=False)
        except pd.errors.ParserError as e:
            match = _PARSER_LINE.search(str(e))
            line = int(match.group(1)) + skipped if match else None
            logger.error(f"Ragged CSV {path}: {e}")
            raise DataFormatError(f"ragged row in {path}", line=line) from e
        except pd.errors.EmptyDataError as e:
            raise DataFormatError(f"{path} has no header row", line=1) from e
        return frame, skipped + 2

    def ingest_from_file(self,
                         path: str,
                         target_column: str,
                         normalize: str = "zscore",
                         task: str = "regression") -> Dataset:
        """
        Parse, split and normalize a CSV file.

        Args:
            path (str): CSV path
            target_column (str): Header name of the target
            normalize (str): "zscore", "minmax" or "none"
            task (str): "classification" (integer labels) or "regression"

        Returns:
            Dataset: Dataset with normalized features and the fitted normalization
        """
        if normalize not in NORMALIZATIONS:
            raise ConfigurationError("invalid data block", [f"normalize must be one of {NORMALIZATIONS}"])
        logger.info(f"Ingesting data from file: {path}")
        frame, first_line = self.read_frame(path)
        if target_column not in frame.columns:
            raise DataFormatError(f"target column {target_column!r} not found in header", line=first_line - 1)
        if frame.empty:
            raise DataFormatError(f"{path} has no data rows", line=first_line)

        ragged = frame.isna().any(axis=1).to_numpy()
        numeric = frame.apply(pd.to_numeric, errors="coerce")
        bad = numeric.isna().any(axis=1).to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            kind = "missing cells (ragged row)" if ragged[row] else "non-numeric cell"
            column = next(c for c in frame.columns if pd.isna(numeric.at[row, c]))
            raise DataFormatError(f"{kind} in column {column!r}", line=first_line + row)

        feature_columns = [c for c in frame.columns if c != target_column]
        if not feature_columns:
            raise DataFormatError("no feature columns besides the target", line=first_line - 1)
        raw = numeric[feature_columns].to_numpy(dtype=np.float64)
        target = numeric[target_column].to_numpy(dtype=np.float64)

        num_classes = 0
        if task == "classification":
            if np.any(target != np.round(target)) or np.any(target < 0):
                row = int(np.flatnonzero((target != np.round(target)) | (target < 0))[0])
                raise DataFormatError("classification labels must be nonnegative integers", line=first_line + row)
            target = target.astype(int)
            num_classes = int(target.max()) + 1
        else:
            target = target[:, None]

        train_idx, test_idx = split_indices(raw.shape[0], self.train_fraction, self.seed)
        normalization = Normalization.fit(normalize, raw[train_idx])
        logger.info(f"Parsed {raw.shape[0]} rows x {raw.shape[1]} features from {path}")
        return Dataset(normalization.transform(raw), target, task, train_idx, test_idx,
                       normalization=normalization, num_classes=num_classes,
                       meta={"source": path, "feature_columns": feature_columns, "target_column": target_column})


def load_csv(path: str,
             target_column: str,
             normalize: str = "zscore",
             task: str = "regression",
             train_fraction: float = 0.8,
             seed: int = 0,
             ingester: Optional[CSVIngester] = None) -> Dataset:
    """
    Convenience wrapper around ``CSVIngester.ingest_from_file``.

    Args:
        path (str): CSV path
        target_column (str): Header name of the target
        normalize (str): "zscore", "minmax" or "none"
        task (str): "classification" or "regression"
        train_fraction (float): Share of rows in the training split
        seed (int): Split seed
        ingester (Optional[CSVIngester]): Reuse an existing ingester

    Returns:
        Dataset: Parsed dataset
    """
    ingester = ingester or CSVIngester(train_fraction=train_fraction, seed=seed)
    return ingester.ingest_from_file(path, target_column, normalize=normalize, task=task)
