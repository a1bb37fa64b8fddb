"""Systematic Pascal-matrix and random linear network codes over line networks.

Finite-field arithmetic, code construction, closed-form loss analysis,
rate optimization and a timeslotted Monte Carlo simulator.
"""

from .codes import CodeSpec, ColumnPolicy, Scheme, build_generator, encode, make_code, signaling_overhead
from .gf import GF, DecoderState, field_new
from .optimizer import RateGrid, optimize_rate, optimize_sweep
from .sim import SimConfig, compare_schemes, estimate_plr, measure_delay, run_round
from .theory import ChannelSpec, RankModel, scheme_plr, z_dist, z_dist_block, z_dist_scheduled

__version__ = "0.1.0"

__all__ = [
    "GF", "DecoderState", "field_new",
    "Scheme", "ColumnPolicy", "CodeSpec", "make_code", "build_generator", "encode", "signaling_overhead",
    "ChannelSpec", "RankModel", "z_dist", "z_dist_block", "z_dist_scheduled", "scheme_plr",
    "RateGrid", "optimize_rate", "optimize_sweep",
    "SimConfig", "run_round", "estimate_plr", "measure_delay", "compare_schemes",
]
