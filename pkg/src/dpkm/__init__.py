"""Differentially private k-means clustering with guaranteed convergence."""

from .clustering import (
    DPConfig,
    DPRunResult,
    Schedule,
    Strategy,
    baseline_laplace,
    dp_kmeans,
    lloyd,
)
from .mechanisms import BudgetLedger, ledger_total

__all__ = [
    "BudgetLedger",
    "DPConfig",
    "DPRunResult",
    "Schedule",
    "Strategy",
    "baseline_laplace",
    "dp_kmeans",
    "ledger_total",
    "lloyd",
]

__version__ = "0.1.0"
