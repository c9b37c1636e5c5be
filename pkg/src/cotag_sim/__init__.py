"""Deterministic simulator of coded Taking-and-Giving multipath forwarding
over dual-connectivity mmWave access links."""

from ._accel import backend_name
from .channel import (CalibrationError, ChannelProcess, ChannelState,
                      MarkovParams, RateLevels, TraceFormatError, TraceRecord,
                      calibrate_from_trace, generate_trace, load_trace,
                      q_for_correlation, sample_bandwidth, save_trace,
                      simulate_states, state_correlation, stationary_distribution,
                      step_state, transition_matrix, transition_prob)
from .gf import gf_inv, gf_mul
from .harness import (ConfigError, GridAxes, MetricsRecord, ScenarioConfig,
                      default_flows, run_grid, run_scenario, simulate, write_csv)
from .rlnc import (CodedPacket, Decoder, Generation, GenerationMismatch,
                   InsertOutcome, Priority, encode, random_coeffs, recode)
from .replay import run_replay, sustained_comparison
from .transport import FlowSpec, SenderParams

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "ChannelProcess", "ChannelState", "CodedPacket",
    "ConfigError", "Decoder", "FlowSpec", "Generation", "GenerationMismatch",
    "GridAxes", "InsertOutcome", "MarkovParams", "MetricsRecord", "Priority",
    "RateLevels", "ScenarioConfig", "SenderParams", "TraceFormatError",
    "TraceRecord", "backend_name", "calibrate_from_trace", "default_flows",
    "encode", "generate_trace", "gf_inv", "gf_mul", "load_trace",
    "q_for_correlation", "random_coeffs", "recode", "run_grid", "run_replay",
    "run_scenario", "sample_bandwidth", "save_trace", "simulate",
    "simulate_states", "state_correlation", "stationary_distribution",
    "step_state", "sustained_comparison", "transition_matrix",
    "transition_prob", "write_csv",
]
