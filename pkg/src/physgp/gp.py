"""Single-output Gaussian-process regression with a zero prior mean."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.optimize import minimize

from .kernels import (
    DEFAULT_JITTERS,
    NotPositiveDefiniteError,
    SEKernel,
    SPDFactorization,
    cross_cov,
    factorize,
    inverse,
    solve,
    sq_dist,
)

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Dataset:
    """Training inputs (n, d) and targets (n,)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.targets, dtype=float).ravel()
        if X.ndim != 2:
            raise ValueError(f"inputs must be 2-d, got shape {X.shape}")
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if X.shape[0] != y.shape[0]:
            raise ValueError(
                f"inputs have {X.shape[0]} rows but targets have {y.shape[0]}"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs contain non-finite values")
        if not np.all(np.isfinite(y)):
            bad = np.flatnonzero(~np.isfinite(y))
            raise ValueError(f"targets contain non-finite values at rows {bad.tolist()}")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True, order=True)
class GPHyperparams:
    lengthscale: float
    noise_std: float = 0.0
    signal_variance: float = 1.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std}")
        if not self.signal_variance > 0:
            raise ValueError(
                f"signal_variance must be positive, got {self.signal_variance}"
            )

    @property
    def kernel(self) -> SEKernel:
        return SEKernel(self.lengthscale, self.signal_variance)


@dataclass
class GPModel:
    """A fitted GP.

    The arrays are not copied defensively; treat them as read-only.
    ``diagnostics["clamped_variances"]`` counts predictive variances that came
    out negative through round-off and were set to zero.
    """

    support_inputs: np.ndarray
    targets: np.ndarray
    kernel: SEKernel
    noise_std: float
    factorization: SPDFactorization
    alpha: np.ndarray
    diagnostics: dict = field(default_factory=lambda: {"clamped_variances": 0})

    @property
    def hyperparams(self) -> GPHyperparams:
        return GPHyperparams(
            self.kernel.lengthscale, self.noise_std, self.kernel.signal_variance
        )

    def predict(self, X_star, full_cov=False):
        return predict(self, X_star, full_cov=full_cov)


def _noise_diagonal(n, noise_std, weights=None):
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    return noise_std**2 * w


def fit(data: Dataset, hp: GPHyperparams, *, noise_weights=None,
        jitter_schedule=DEFAULT_JITTERS) -> GPModel:
    """Factorize ``K + noise_std^2 * diag(noise_weights)`` and solve for alpha.

    ``noise_weights`` defaults to ones (the standard homoscedastic GP); the
    joint real/simulated model passes its per-row weights here.
    """
    if not isinstance(data, Dataset):
        data = Dataset(*data)
    kernel = hp.kernel
    C = cross_cov(kernel, data.inputs)
    C[np.diag_indices_from(C)] += _noise_diagonal(data.n, hp.noise_std, noise_weights)
    F = factorize(C, jitter_schedule)
    alpha = solve(F, data.targets)
    return GPModel(data.inputs, data.targets, kernel, hp.noise_std, F, alpha)


def predict(model: GPModel, X_star, full_cov=False):
    """Predictive mean and variance of noisy outputs at ``X_star``.

    The variance includes the observation noise, ``c* = k(x*, x*) + sigma_e^2``.
    With ``full_cov=True`` the full (m, m) posterior covariance of the latent
    function (without noise) is returned instead of the variance vector.
    """
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star[:, None] if model.support_inputs.shape[1] == 1 else X_star[None, :]
    if X_star.shape[1] != model.support_inputs.shape[1]:
        raise ValueError(
            f"query dimension {X_star.shape[1]} does not match training "
            f"dimension {model.support_inputs.shape[1]}"
        )
    Ks = cross_cov(model.kernel, X_star, model.support_inputs)
    mean = Ks @ model.alpha
    V = solve(model.factorization, Ks.T)
    if full_cov:
        cov = cross_cov(model.kernel, X_star) - Ks @ V
        return mean, 0.5 * (cov + cov.T)
    var = model.kernel.signal_variance + model.noise_std**2 - np.einsum("ij,ji->i", Ks, V)
    negative = var < 0
    if np.any(negative):
        model.diagnostics["clamped_variances"] += int(negative.sum())
        logger.debug("clamped %d negative predictive variances", negative.sum())
        var = np.where(negative, 0.0, var)
    return mean, var


def log_marginal_likelihood(data: Dataset, hp: GPHyperparams, *, noise_weights=None,
                            jitter_schedule=DEFAULT_JITTERS) -> float:
    """``log N(y; 0, K + sigma_e^2 I)`` evaluated through the Cholesky factor."""
    if not isinstance(data, Dataset):
        data = Dataset(*data)
    model = fit(data, hp, noise_weights=noise_weights, jitter_schedule=jitter_schedule)
    return _lml_from_model(model)


def _lml_from_model(model):
    y = model.targets
    return float(
        -0.5 * y @ model.alpha
        - 0.5 * model.factorization.logdet()
        - 0.5 * y.shape[0] * LOG_2PI
    )


@dataclass(frozen=True)
class GridSearch:
    """Exhaustive hyperparameter grid. Any axis left as None uses the default."""

    lengthscales: tuple | None = None
    noise_stds: tuple | None = None
    signal_variances: tuple | None = None


@dataclass(frozen=True)
class MultiStartSearch:
    """Nelder-Mead restarts in log-space from seeded random starts."""

    n_starts: int = 5
    max_evals: int = 200
    seed: int = 0
    fix_noise: float | None = None


def median_pairwise_distance(X) -> float:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    D = np.sqrt(sq_dist(X, X))
    off = D[np.triu_indices(X.shape[0], k=1)]
    off = off[off > 0]
    return float(np.median(off)) if off.size else 1.0


def default_grid(data: Dataset) -> GridSearch:
    """Log-spaced grid scaled to the data.

    Lengthscales: 15 points over [1e-2, 1e2] times the median pairwise input
    distance. Noise: 10 points over [1e-4, 1] times the target std.
    Signal variance: mean square of the targets (zero prior mean).
    """
    med = median_pairwise_distance(data.inputs)
    ystd = float(np.std(data.targets))
    if not ystd > 0:
        ystd = max(float(np.sqrt(np.mean(data.targets**2))), 1.0)
    msq = float(np.mean(data.targets**2))
    return GridSearch(
        lengthscales=tuple(np.logspace(-2, 2, 15) * med),
        noise_stds=tuple(np.logspace(-4, 0, 10) * ystd),
        signal_variances=(msq if msq > 0 else 1.0,),
    )


def _resolve_grid(data, search):
    base = default_grid(data)
    if search is None:
        return base
    return GridSearch(
        lengthscales=base.lengthscales if search.lengthscales is None else tuple(search.lengthscales),
        noise_stds=base.noise_stds if search.noise_stds is None else tuple(search.noise_stds),
        signal_variances=(base.signal_variances if search.signal_variances is None
                          else tuple(search.signal_variances)),
    )


def grid_argmax(candidates, score):
    """Maximize ``score`` over ``candidates``.

    Ties (and NaN/-inf scores) resolve to the lexicographically smallest
    candidate. Returns ``(best, best_score)``; raises ValueError if no
    candidate has a finite score.
    """
    best, best_score = None, -np.inf
    for cand in sorted(candidates):
        s = score(cand)
        if np.isfinite(s) and (best is None or s > best_score):
            best, best_score = cand, s
    if best is None:
        raise ValueError("no candidate produced a finite score")
    return best, best_score


def optimize_hyperparams(data: Dataset, search=None, *, noise_weights=None):
    """Select hyperparameters by maximizing the log marginal likelihood.

    ``search`` is a :class:`GridSearch` (default, see :func:`default_grid`) or
    a :class:`MultiStartSearch`.
    """
    if not isinstance(data, Dataset):
        data = Dataset(*data)
    if data.n < 3:
        raise ValueError(f"hyperparameter search needs at least 3 samples, got {data.n}")
    if isinstance(search, MultiStartSearch):
        return _multistart(data, search, noise_weights)
    grid = _resolve_grid(data, search)
    if not (grid.lengthscales and grid.noise_stds and grid.signal_variances):
        raise ValueError("empty hyperparameter grid")

    # one kernel matrix per (lengthscale, signal variance) pair
    D2 = sq_dist(data.inputs, data.inputs)
    w = np.ones(data.n) if noise_weights is None else np.asarray(noise_weights, float)
    cache = {}

    def score(hp):
        key = (hp.lengthscale, hp.signal_variance)
        if key not in cache:
            cache.clear()
            cache[key] = hp.signal_variance * np.exp(-0.5 * D2 / hp.lengthscale**2)
        C = cache[key].copy()
        C[np.diag_indices_from(C)] += hp.noise_std**2 * w
        try:
            F = factorize(C)
        except NotPositiveDefiniteError:
            return -np.inf
        alpha = solve(F, data.targets)
        return float(-0.5 * data.targets @ alpha - 0.5 * F.logdet()
                     - 0.5 * data.n * LOG_2PI)

    candidates = [GPHyperparams(l, s, v) for l, s, v in
                  product(grid.lengthscales, grid.noise_stds, grid.signal_variances)]
    # sorted by (lengthscale, noise, signal) keeps the kernel cache warm
    best, _ = grid_argmax(candidates, score)
    return best


def _multistart(data, search, noise_weights):
    rng = np.random.default_rng(search.seed)
    med = median_pairwise_distance(data.inputs)
    ystd = float(np.std(data.targets)) or 1.0
    msq = float(np.mean(data.targets**2)) or 1.0
    fixed_noise = search.fix_noise

    def unpack(z):
        ell, sv = np.exp(z[0]), np.exp(z[1])
        noise = fixed_noise if fixed_noise is not None else np.exp(z[2])
        return GPHyperparams(float(ell), float(noise), float(sv))

    def neg(z):
        try:
            return -log_marginal_likelihood(data, unpack(z), noise_weights=noise_weights)
        except (NotPositiveDefiniteError, ValueError):
            return np.inf

    best, best_val = None, np.inf
    for i in range(search.n_starts):
        z0 = [np.log(med) + rng.uniform(-2, 2), np.log(msq) + rng.uniform(-1, 1)]
        if fixed_noise is None:
            z0.append(np.log(0.1 * ystd) + rng.uniform(-3, 2))
        res = minimize(neg, np.array(z0), method="Nelder-Mead",
                       options={"maxfev": search.max_evals, "xatol": 1e-6, "fatol": 1e-9})
        if np.isfinite(res.fun) and res.fun < best_val:
            best, best_val = unpack(res.x), res.fun
    if best is None:
        raise ValueError("multi-start search found no finite likelihood")
    return best
