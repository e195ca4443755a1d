"""Secure transmit design for cognitive satellite-terrestrial networks.

Minimum-power beamforming and artificial noise that keep a secrecy rate at
the satellite user and an information rate at the terrestrial user, with
perfect or norm-bounded imperfect CSI.
"""
from .channel_models import (
    ChannelSet,
    LinkSpecs,
    RobustSpec,
    SatChannelSpec,
    TerrestrialChannelSpec,
    beam_gain,
    correlation_matrix,
    draw_channel_set,
)
from .experiments import SweepResult, SweepSpec, baseline, default_links, emit_results, run_sweep
from .optimizer import (
    BeamformingSolution,
    InfeasibleError,
    beta_interval,
    extract_rank_one,
    gaussian_randomization,
    line_search_beta,
    solve_perfect,
    solve_robust,
)
from .rate_metrics import CovarianceTriple, ResidualReport, ScenarioConfig, residuals, secrecy_rate

__version__ = "0.1.0"

__all__ = [
    "BeamformingSolution", "ChannelSet", "CovarianceTriple", "InfeasibleError", "LinkSpecs",
    "ResidualReport", "RobustSpec", "SatChannelSpec", "ScenarioConfig", "SweepResult", "SweepSpec",
    "TerrestrialChannelSpec", "baseline", "beam_gain", "beta_interval", "correlation_matrix",
    "default_links", "draw_channel_set", "emit_results", "extract_rank_one", "gaussian_randomization",
    "line_search_beta", "residuals", "run_sweep", "secrecy_rate", "solve_perfect", "solve_robust",
]
