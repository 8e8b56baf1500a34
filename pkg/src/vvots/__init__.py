"""Optimal transmission switching with virtual-voltage convex relaxations."""

from .case_io import (
    Bus,
    CaseError,
    Generator,
    Line,
    PowerCase,
    ValidatedNetwork,
    load_case,
    parse_matpower,
    parse_native,
    select_switchable,
    validate,
)
from .engine import OtsResult, brute_force_oracle, run_mccormick, run_oracle, run_ots, run_security, run_vv
from .estimators import McCormickOTS, PartitionOTS, SpectralPartitioner, VirtualVoltageOTS
from .recovery import OtsBounds, certify, diagnostics, extract_alpha_hat, round_alpha
from .relaxations import ContingencySet, build_mccormick, build_p1, build_p3, build_p3_security
from .solver import SolverOptions, solve

__version__ = "0.1.0"

__all__ = [
    "Bus", "CaseError", "Generator", "Line", "PowerCase", "ValidatedNetwork",
    "load_case", "parse_matpower", "parse_native", "select_switchable", "validate",
    "OtsResult", "brute_force_oracle", "run_mccormick", "run_oracle", "run_ots", "run_security", "run_vv",
    "McCormickOTS", "PartitionOTS", "SpectralPartitioner", "VirtualVoltageOTS",
    "OtsBounds", "certify", "diagnostics", "extract_alpha_hat", "round_alpha",
    "ContingencySet", "build_mccormick", "build_p1", "build_p3", "build_p3_security",
    "SolverOptions", "solve",
]
