"""Shared test helpers."""
from __future__ import annotations

import numpy as np

from secure_stn.channel_models import ChannelSet, draw_channel_set
from secure_stn.experiments import default_links, trial_rngs
from secure_stn.rate_metrics import ScenarioConfig


def cn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Circularly-symmetric CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_channels(rng: np.random.Generator, n_t: int = 3, n_s: int = 3, n_r: int = 2) -> ChannelSet:
    return ChannelSet(
        h_p=cn(rng, n_t), h_s=cn(rng, n_t), H_e=cn(rng, n_t, n_r),
        g_p=cn(rng, n_s), g_s=cn(rng, n_s), G_e=cn(rng, n_s, n_r),
    )


def scenario_channels(seed: int, trial: int = 0) -> ChannelSet:
    """One draw of the default link set, as used by sweeps."""
    cfg = ScenarioConfig()
    rng, _ = trial_rngs(seed, trial)
    return draw_channel_set(default_links(cfg.n_t, cfg.n_s), cfg.n_t, cfg.n_r, rng)
