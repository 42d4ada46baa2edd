"""
Datasets: synthetic generators, CSV ingestion, splits and normalization.
"""
from .dataset import NORMALIZATIONS, Dataset, Normalization, split_indices
from .synthetic import blob_centers, gen_blobs, gen_linear_reg, gen_piecewise_reg
from .ingest import CSVIngester, load_csv

__all__ = [
    "NORMALIZATIONS", "Dataset", "Normalization", "split_indices",
    "blob_centers", "gen_blobs", "gen_linear_reg", "gen_piecewise_reg",
    "CSVIngester", "load_csv",
]
