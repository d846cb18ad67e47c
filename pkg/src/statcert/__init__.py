"""Statistical conformance testing for ML systems: exact requirement tests,
family-wise error control across model updates, and the supporting drift,
uncertainty, fairness, leakage, OOD, and robustness checks, wired together
by an auditable, hash-chained certification ledger."""

__version__ = "0.1.0"

from . import (audit, core, drift, fairness, leakage, multiplicity,
               robustness, sampling, stattest, uncertainty)
from .core import Dataset, MprSpec, SaddRecord, load_dataset
from .errors import StatcertError

__all__ = [
    "Dataset", "MprSpec", "SaddRecord", "StatcertError", "__version__",
    "audit", "core", "drift", "fairness", "leakage", "load_dataset",
    "multiplicity", "robustness", "sampling", "stattest", "uncertainty",
]
