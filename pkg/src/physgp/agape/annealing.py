"""Parallel simulated annealing over a box, vectorized across chains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import sobol_points


@dataclass(frozen=True)
class AnnealConfig:
    """Settings for :func:`anneal`.

    ``initial_temperature=None`` sets it from the spread of the objective
    over ``probe_size`` scrambled Sobol points. ``proposal_scale`` is the
    Gaussian step std as a fraction of each domain width.
    """

    chains: int = 4
    steps: int = 500
    initial_temperature: float | None = None
    cooling: float = 0.97
    proposal_scale: float = 0.1
    refine_steps: int = 100
    probe_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1 or self.steps < 1:
            raise ValueError("chains and steps must be positive")
        if not 0 < self.cooling < 1:
            raise ValueError(f"cooling must lie in (0, 1), got {self.cooling}")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be positive")
        if self.initial_temperature is not None and not self.initial_temperature > 0:
            raise ValueError("initial_temperature must be positive")


def _temperature(log_f, probe, cfg):
    if cfg.initial_temperature is not None:
        return cfg.initial_temperature
    vals = log_f(probe)
    vals = vals[np.isfinite(vals)]
    if vals.size < 2:
        return 1.0
    spread = float(np.std(vals))
    return spread if spread > 0 else 1.0


def anneal(log_f, bounds, cfg: AnnealConfig, rng):
    """Maximize ``log_f`` (vectorized: (n, d) -> (n,)) over the box ``bounds``.

    Runs ``cfg.chains`` independent Metropolis chains with geometric cooling,
    then hill-climbs from the best point seen by any chain. Returns
    ``(x_best, log_f(x_best))``; ``-inf`` means nothing finite was found.
    Ties between chains go to the lowest chain index.
    """
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    lo, hi = b[:, 0], b[:, 1]
    width = hi - lo
    d = b.shape[0]
    probe = lo + sobol_points(d, cfg.probe_size, scramble=True,
                              seed=int(rng.integers(2**31))) * width
    T = _temperature(log_f, probe, cfg)

    x = lo + rng.random((cfg.chains, d)) * width
    fx = log_f(x)
    best_x = x.copy()
    best_f = fx.copy()
    step = cfg.proposal_scale * width
    for _ in range(cfg.steps):
        prop = np.clip(x + rng.standard_normal((cfg.chains, d)) * step, lo, hi)
        fp = log_f(prop)
        u = rng.random(cfg.chains)
        with np.errstate(invalid="ignore"):
            delta = fp - fx
            accept = (fp > fx) | (np.isfinite(fp) & (np.log(u) < delta / T))
        # any finite value beats -inf
        accept |= np.isfinite(fp) & ~np.isfinite(fx)
        x = np.where(accept[:, None], prop, x)
        fx = np.where(accept, fp, fx)
        better = fx > best_f
        best_x[better] = x[better]
        best_f[better] = fx[better]
        T *= cfg.cooling

    i = int(np.argmax(np.where(np.isfinite(best_f), best_f, -np.inf)))
    xb, fb = best_x[i].copy(), best_f[i]
    # greedy refinement around the winner
    local = 0.1 * step
    for _ in range(cfg.refine_steps):
        prop = np.clip(xb + rng.standard_normal(d) * local, lo, hi)
        fp = log_f(prop[None, :])[0]
        if fp > fb:
            xb, fb = prop, fp
    return xb, float(fb)
