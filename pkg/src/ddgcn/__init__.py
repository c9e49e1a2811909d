"""Dynamic dual-graph fusion GCN for transductive binary classification of tabular data."""
from ._backend import USE_NUMBA, backend_name
from .dataio import Dataset, load_csv, save_csv, synthesize
from .trainer import TrainConfig, cross_validate, grid_search, train_fold

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "TrainConfig",
    "USE_NUMBA",
    "__version__",
    "backend_name",
    "cross_validate",
    "grid_search",
    "load_csv",
    "save_csv",
    "synthesize",
    "train_fold",
]
