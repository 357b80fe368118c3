"""Renewable production scenario generation.

Per vres unit, draws are truncated-normal within [0, capacity]: rejection
sampling against the plain normal, falling back to clamping after 1000
rejections per sample (a slight boundary bias, acceptable for the extreme
parameter choices that trigger it).  Weights are uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import CaseError, ScenarioSet

_MAX_REJECTS = 1000


@dataclass(frozen=True)
class ScenarioConfig:
    count: int
    mean_fraction: float = 0.5   # forecast mean as a fraction of capacity
    std_fraction: float = 0.2    # forecast stdev as a fraction of capacity
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise CaseError("scenario count must be at least 1")
        if not 0.0 <= self.mean_fraction <= 1.0:
            raise CaseError("mean_fraction must lie in [0, 1]")
        if self.std_fraction < 0.0:
            raise CaseError("std_fraction must be nonnegative")


def generate_scenarios(case, config):
    """Deterministic in (case, config): same seed, same draws, bit for bit."""
    rng = np.random.default_rng(config.seed)
    cap = case.vres_capacity()
    out = np.zeros((config.count, case.n_vres))
    for k in range(case.n_vres):
        mu = config.mean_fraction * cap[k]
        sigma = config.std_fraction * cap[k]
        for s in range(config.count):
            if sigma == 0.0:
                out[s, k] = mu
                continue
            x = rng.normal(mu, sigma)
            rejects = 0
            while not 0.0 <= x <= cap[k]:
                rejects += 1
                if rejects >= _MAX_REJECTS:
                    x = min(max(x, 0.0), cap[k])
                    break
                x = rng.normal(mu, sigma)
            out[s, k] = x
    weights = np.full(config.count, 1.0 / config.count)
    return ScenarioSet(out, weights)
