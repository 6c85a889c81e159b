"""Fractional belief propagation between TRW and BP on Ising models."""

from fracbp.analysis import LambdaStar, LambdaSweep, dlogz_dlambda, find_lambda_star, mutual_information, sweep
from fracbp.correction import CorrectionEstimate, estimate_correction, exact_correction, log_weight
from fracbp.fbp import BeliefSet, FbpOptions, FbpResult, MessageSet, run_fbp
from fracbp.model import EnsembleSpec, Graph, IsingModel, build_complete, build_grid, sample_instance
from fracbp.oracle import ExactResult, brute_force, exact_log_z, to_zero_field
from fracbp.trw import EdgeAppearance, SpanningTreeSet, build_edge_uniform_certificate, edge_uniform_rho, rho_lambda

__all__ = [
    "BeliefSet", "CorrectionEstimate", "EdgeAppearance", "EnsembleSpec", "ExactResult", "FbpOptions",
    "FbpResult", "Graph", "IsingModel", "LambdaStar", "LambdaSweep", "MessageSet", "SpanningTreeSet",
    "brute_force", "build_complete", "build_edge_uniform_certificate", "build_grid", "dlogz_dlambda",
    "edge_uniform_rho", "estimate_correction", "exact_correction", "exact_log_z", "find_lambda_star",
    "log_weight", "mutual_information", "rho_lambda", "run_fbp", "sample_instance", "sweep", "to_zero_field",
]
