"""Synthetic stand-ins for field campaigns and satellite time series.

Every generator is a pure function of its spec and an integer seed. The
specs are built from config mappings, so the formulas' constants live in
the config files rather than here.

Campaigns
---------
Real inputs are 4-band reflectances ``(blue, green, red, nir)`` drawn from
a site-specific Gaussian mixture and clipped to ``[0.001, 1]``. With the
normalized difference index ``v = (nir - red) / (nir + red)`` the true
target is the saturating exponential

    f(x) = amplitude * (1 - exp(-rate * max(v, 0)))

Real targets are ``f(x) + N(0, noise_std^2)``. Simulated rows draw inputs
from the simulator's own mixture and get ``scale * f(x) + bias +
N(0, sim_noise_std^2)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..jgp import TaggedDataset
from ..lfm import LFMConfig, MultiOutputSeries, sample_outputs

BANDS = ("blue", "green", "red", "nir")

# stream ids keep real, simulated and test draws independent of each other
_REAL, _SIM, _GAP = 1, 2, 3


def _rng(seed, *keys):
    words = [int(seed)]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.default_rng(np.random.SeedSequence(words))


@dataclass(frozen=True)
class Mixture:
    """Gaussian mixture over the 4 bands (diagonal covariances)."""

    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.means, float))
        sd = np.broadcast_to(np.asarray(self.stds, float), mu.shape).copy()
        w = np.asarray(self.weights if self.weights is not None
                       else np.ones(mu.shape[0]), float).ravel()
        if mu.shape[1] != len(BANDS):
            raise ValueError(f"mixture means need {len(BANDS)} columns, got {mu.shape[1]}")
        if w.shape[0] != mu.shape[0] or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("mixture weights must be non-negative, one per component")
        if np.any(sd < 0):
            raise ValueError("mixture stds must be non-negative")
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)
        object.__setattr__(self, "weights", w / w.sum())

    @classmethod
    def from_dict(cls, d):
        return cls(d["means"], d.get("stds", 0.02), d.get("weights"))

    def sample(self, n, comp_rng, jitter_rng):
        """``n`` draws; separate streams keep the first rows fixed as ``n`` grows."""
        comp = comp_rng.choice(self.weights.size, size=n, p=self.weights)
        X = self.means[comp] + self.stds[comp] * jitter_rng.standard_normal((n, len(BANDS)))
        return np.clip(X, 1e-3, 1.0)


@dataclass(frozen=True)
class CampaignSpec:
    sites: dict
    simulator: Mixture
    amplitude: float = 6.0
    rate: float = 2.5
    noise_std: float = 0.2
    sim_bias: float = 0.0
    sim_scale: float = 1.0
    sim_noise_std: float = 0.2

    @classmethod
    def from_dict(cls, d):
        """Build from a config mapping with keys ``sites`` (name -> mixture),
        ``simulator`` (mixture) and ``target`` (amplitude, rate, noise_std,
        sim_bias, sim_scale, sim_noise_std)."""
        try:
            sites = {str(k): Mixture.from_dict(v) for k, v in d["sites"].items()}
            sim = Mixture.from_dict(d["simulator"])
        except KeyError as exc:
            raise ValueError(f"campaign spec is missing {exc}") from None
        if not sites:
            raise ValueError("campaign spec needs at least one site")
        t = dict(d.get("target", {}))
        unknown = set(t) - {"amplitude", "rate", "noise_std", "sim_bias", "sim_scale",
                            "sim_noise_std"}
        if unknown:
            raise ValueError(f"unknown target keys {sorted(unknown)}")
        return cls(sites, sim, **{k: float(v) for k, v in t.items()})

    def truth(self, X):
        X = np.atleast_2d(X)
        red, nir = X[:, 2], X[:, 3]
        v = (nir - red) / (nir + red)
        return self.amplitude * (1.0 - np.exp(-self.rate * np.maximum(v, 0.0)))

    def real(self, site, n, seed, stream=_REAL):
        if site not in self.sites:
            raise KeyError(f"unknown site {site!r}; available: {sorted(self.sites)}")
        X = self.sites[site].sample(n, _rng(seed, stream, site, 0), _rng(seed, stream, site, 1))
        noise = _rng(seed, stream, site, 2).standard_normal(n)
        return X, self.truth(X) + self.noise_std * noise

    def simulated(self, n, seed):
        X = self.simulator.sample(n, _rng(seed, _SIM, 0), _rng(seed, _SIM, 1))
        y = self.sim_scale * self.truth(X) + self.sim_bias
        return X, y + self.sim_noise_std * _rng(seed, _SIM, 2).standard_normal(n)

    def campaign(self, site, n_real, n_sim, seed) -> TaggedDataset:
        """Real rows from ``site`` followed by ``n_sim`` simulated rows.

        Rows are nested per seed: asking for more real or simulated rows
        keeps the first ones unchanged.
        """
        Xr, yr = self.real(site, n_real, seed)
        Xs, ys = self.simulated(n_sim, seed)
        return TaggedDataset(np.vstack([Xr, Xs]), np.concatenate([yr, ys]),
                             np.r_[np.ones(n_real, bool), np.zeros(n_sim, bool)])


@dataclass(frozen=True)
class GapFillSpec:
    """Outputs sharing latent forces, with a contiguous gap in one of them.

    ``lfm`` holds the generating hyperparameters. Each output is sampled
    at ``n_times`` regular times over ``[0, t_max]``; ``gap_fraction`` of
    the samples of output ``gap_output`` are removed as one contiguous
    block whose start is drawn from the seed.
    """

    lfm: LFMConfig
    n_times: int = 60
    t_max: float = 10.0
    gap_output: int = 0
    gap_fraction: float = 0.3
    names: tuple = None

    def __post_init__(self):
        if not 0 <= self.gap_output < self.lfm.Q:
            raise ValueError(f"gap_output must index one of {self.lfm.Q} outputs")
        if not 0 < self.gap_fraction < 1:
            raise ValueError("gap_fraction must lie in (0, 1)")
        if self.n_times < 4:
            raise ValueError("n_times must be at least 4")

    @classmethod
    def from_dict(cls, d):
        g = d.get("generator", d)
        try:
            cfg = LFMConfig(g["sensitivities"], g["lf_lengthscales"],
                            g["smoothing_widths"], g["noise_stds"])
        except KeyError as exc:
            raise ValueError(f"gap-fill generator is missing {exc}") from None
        keys = ("n_times", "t_max", "gap_output", "gap_fraction")
        kw = {k: type(getattr(cls, k))(d[k]) for k in keys if k in d}
        names = d.get("names")
        return cls(cfg, names=tuple(names) if names else None, **kw)

    def draw(self, seed):
        """Return ``(full series, boolean gap mask for gap_output)``."""
        rng = _rng(seed, _GAP)
        t = np.linspace(0.0, self.t_max, self.n_times)
        vals = sample_outputs(self.lfm, [t] * self.lfm.Q, rng, noise=True)
        series = MultiOutputSeries([t] * self.lfm.Q, vals, self.names)
        size = max(1, int(round(self.gap_fraction * self.n_times)))
        start = int(rng.integers(0, self.n_times - size + 1))
        mask = np.zeros(self.n_times, bool)
        mask[start : start + size] = True
        return series, mask
