"""Bayesian dynamic borrowing from historical controls: nine methods, EHSS and reports."""

from .analysis import MethodRun, run_method, run_methods
from .data import Endpoint, StudySet, builtin_dataset, load_study_set
from .inference import ChainSpec

__version__ = "0.1.0"

__all__ = ["ChainSpec", "Endpoint", "MethodRun", "StudySet", "__version__", "builtin_dataset",
           "load_study_set", "run_method", "run_methods"]
