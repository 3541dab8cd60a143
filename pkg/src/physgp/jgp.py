"""Joint GP over pooled real and simulated samples.

Simulated rows get observation noise ``sigma_e^2 / gamma`` instead of
``sigma_e^2``, so ``gamma`` measures how far the simulator is trusted
relative to field data. ``gamma = 1`` is the ordinary GP on the pool.
Hyperparameters are chosen by the leave-one-out log predictive density of
the real rows alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import gp
from .gp import LOG_2PI, Dataset, GPModel, grid_argmax
from .kernels import NotPositiveDefiniteError, factorize, inverse, solve, sq_dist

REAL = "real"
SIMULATED = "sim"


@dataclass(frozen=True)
class TaggedDataset:
    """Rows flagged as real (field) or simulated (RTM) samples.

    ``is_real`` may be given as booleans or as the strings ``"real"`` /
    ``"sim"``; row order is irrelevant.
    """

    inputs: np.ndarray
    targets: np.ndarray
    is_real: np.ndarray

    def __post_init__(self):
        base = Dataset(self.inputs, self.targets)
        flags = np.asarray(self.is_real)
        if flags.dtype.kind in "US" or flags.dtype == object:
            lowered = np.char.lower(flags.astype(str))
            unknown = ~np.isin(lowered, [REAL, SIMULATED])
            if np.any(unknown):
                raise ValueError(f"unknown source tags: {sorted(set(flags[unknown]))}")
            flags = lowered == REAL
        flags = flags.astype(bool).ravel()
        if flags.shape[0] != base.n:
            raise ValueError(f"{flags.shape[0]} source flags for {base.n} rows")
        if not flags.any():
            raise ValueError("tagged dataset needs at least one real row")
        object.__setattr__(self, "inputs", base.inputs)
        object.__setattr__(self, "targets", base.targets)
        object.__setattr__(self, "is_real", flags)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def d(self):
        return self.inputs.shape[1]

    @property
    def n_real(self):
        return int(self.is_real.sum())

    def pooled(self) -> Dataset:
        return Dataset(self.inputs, self.targets)

    def subset(self, rows) -> "TaggedDataset":
        rows = np.asarray(rows)
        return TaggedDataset(self.inputs[rows], self.targets[rows], self.is_real[rows])

    def real(self) -> Dataset:
        return Dataset(self.inputs[self.is_real], self.targets[self.is_real])

    def simulated(self) -> Dataset:
        return Dataset(self.inputs[~self.is_real], self.targets[~self.is_real])


@dataclass(frozen=True, order=True)
class JGPHyperparams:
    lengthscale: float
    noise_std: float
    gamma: float = 1.0
    signal_variance: float = 1.0

    def __post_init__(self):
        gp.GPHyperparams(self.lengthscale, self.noise_std, self.signal_variance)
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def base(self) -> gp.GPHyperparams:
        return gp.GPHyperparams(self.lengthscale, self.noise_std, self.signal_variance)


def noise_weights(is_real, gamma):
    """Diagonal of V: 1 for real rows, 1/gamma for simulated rows."""
    return np.where(np.asarray(is_real, bool), 1.0, 1.0 / gamma)


@dataclass
class JGPModel(GPModel):
    noise_weights: np.ndarray = None
    gamma: float = 1.0


def fit_jgp(data: TaggedDataset, hp: JGPHyperparams) -> JGPModel:
    w = noise_weights(data.is_real, hp.gamma)
    m = gp.fit(data.pooled(), hp.base(), noise_weights=w)
    return JGPModel(m.support_inputs, m.targets, m.kernel, m.noise_std,
                    m.factorization, m.alpha, noise_weights=w, gamma=hp.gamma)


def predict_jgp(model: JGPModel, X_star, full_cov=False):
    """Predictive mean and variance of a real (field) output at ``X_star``."""
    return gp.predict(model, X_star, full_cov=full_cov)


def _joint_cov(D2, is_real, hp):
    C = hp.signal_variance * np.exp(-0.5 * D2 / hp.lengthscale**2)
    C[np.diag_indices_from(C)] += hp.noise_std**2 * noise_weights(is_real, hp.gamma)
    return C


def loo_moments(data: TaggedDataset, hp: JGPHyperparams, _D2=None):
    """Leave-one-out predictive means and variances for every row.

    Uses ``mu_i = y_i - [C^-1 y]_i / [C^-1]_ii`` and
    ``var_i = 1 / [C^-1]_ii`` with ``C = K + sigma_e^2 V``.
    """
    D2 = sq_dist(data.inputs, data.inputs) if _D2 is None else _D2
    F = factorize(_joint_cov(D2, data.is_real, hp))
    Cinv = inverse(F)
    a = solve(F, data.targets)
    diag = np.diag(Cinv)
    return data.targets - a / diag, 1.0 / diag


def loo_pseudo_likelihood(data: TaggedDataset, hp: JGPHyperparams, _D2=None) -> float:
    """Sum over real rows of ``log N(y_i; mu_i, var_i)`` with row i held out."""
    if data.n_real < 2:
        raise ValueError(f"need at least 2 real rows, got {data.n_real}")
    mu, var = loo_moments(data, hp, _D2)
    r = data.is_real
    resid = data.targets[r] - mu[r]
    return float(np.sum(-0.5 * (LOG_2PI + np.log(var[r])) - 0.5 * resid**2 / var[r]))


def loo_pseudo_likelihood_naive(data: TaggedDataset, hp: JGPHyperparams) -> float:
    """Same quantity by refitting once per held-out real row (reference path)."""
    if data.n_real < 2:
        raise ValueError(f"need at least 2 real rows, got {data.n_real}")
    total = 0.0
    for i in np.flatnonzero(data.is_real):
        keep = np.arange(data.n) != i
        model = fit_jgp(data.subset(keep), hp)
        mu, var = predict_jgp(model, data.inputs[i : i + 1])
        total += -0.5 * (LOG_2PI + np.log(var[0])) - 0.5 * (data.targets[i] - mu[0]) ** 2 / var[0]
    return float(total)


@dataclass(frozen=True)
class JGPGrid:
    """Grid for :func:`optimize_jgp`; None axes take data-scaled defaults."""

    lengthscales: tuple | None = None
    noise_stds: tuple | None = None
    gammas: tuple | None = None
    signal_variances: tuple | None = None


def default_jgp_grid(data: TaggedDataset) -> JGPGrid:
    base = gp.default_grid(data.pooled())
    return JGPGrid(
        lengthscales=tuple(np.logspace(-1.5, 1.5, 10) * gp.median_pairwise_distance(data.inputs)),
        noise_stds=tuple(np.logspace(-3, 0, 7) * (np.std(data.targets) or 1.0)),
        gammas=tuple(np.logspace(-3, 3, 13)),
        signal_variances=base.signal_variances,
    )


def optimize_jgp(data: TaggedDataset, search: JGPGrid | None = None) -> JGPHyperparams:
    """Grid-maximize the real-row leave-one-out pseudo-likelihood."""
    if data.n_real < 2:
        raise ValueError(f"need at least 2 real rows, got {data.n_real}")
    dflt = default_jgp_grid(data)
    s = search or JGPGrid()
    axes = [getattr(s, f) if getattr(s, f) is not None else getattr(dflt, f)
            for f in ("lengthscales", "noise_stds", "gammas", "signal_variances")]
    if not all(len(a) for a in axes):
        raise ValueError("empty hyperparameter grid")
    D2 = sq_dist(data.inputs, data.inputs)

    def score(hp):
        try:
            return loo_pseudo_likelihood(data, hp, D2)
        except NotPositiveDefiniteError:
            return -np.inf

    candidates = [JGPHyperparams(l, s_, g, v) for l, s_, g, v in product(*axes)]
    best, _ = grid_argmax(candidates, score)
    return best
