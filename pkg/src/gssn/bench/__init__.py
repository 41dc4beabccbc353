"""Benchmark problems, file I/O and the command-line driver."""

from ..convergence import CSV_HEADER, ConvergenceLog, LogRecord
from .mmio import MatrixMarketError, load_matrix_market, load_vector, save_matrix_market, save_vector
from .problems import RegressionProblem, TrescaToyProblem, gen_lasso, gen_tresca_toy, make_rng

__all__ = [
    "CSV_HEADER",
    "ConvergenceLog",
    "LogRecord",
    "MatrixMarketError",
    "RegressionProblem",
    "TrescaToyProblem",
    "gen_lasso",
    "gen_tresca_toy",
    "load_matrix_market",
    "load_vector",
    "make_rng",
    "save_matrix_market",
    "save_vector",
]
