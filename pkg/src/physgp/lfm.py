"""Multi-output latent force model with Gaussian smoothing kernels.

Each of the Q outputs is a weighted sum over R independent latent GPs
(squared-exponential, unit variance, lengthscale ``ell_r``) convolved with
an output-specific Gaussian smoothing kernel ``exp(-t^2 / (2 nu_q^2))``,
plus white noise of std ``eta_q``. Convolutions run over the whole real
line, which gives Gaussian closed forms for every covariance:

    cov(y_p(t), y_q(t')) = sum_r S[r,p] S[r,q] * 2 pi ell_r nu_p nu_q / w
                           * exp(-(t - t')^2 / (2 w^2)),
    w^2 = ell_r^2 + nu_p^2 + nu_q^2

    cov(f_r(t), y_q(t')) = S[r,q] * sqrt(2 pi) ell_r nu_q / sqrt(ell_r^2 + nu_q^2)
                           * exp(-(t - t')^2 / (2 (ell_r^2 + nu_q^2)))
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .gp import LOG_2PI
from .kernels import NotPositiveDefiniteError, SPDFactorization, factorize, solve

logger = logging.getLogger(__name__)

SQRT_2PI = float(np.sqrt(2.0 * np.pi))


@dataclass(frozen=True)
class LFMConfig:
    """Hyperparameters of a latent force model.

    sensitivities : (R, Q) coupling weights S[r, q]
    lf_lengthscales : (R,) lengthscales of the latent forces
    smoothing_widths : (Q,) widths of the per-output smoothing kernels
    noise_stds : (Q,) white-noise std per output
    """

    sensitivities: np.ndarray
    lf_lengthscales: np.ndarray
    smoothing_widths: np.ndarray
    noise_stds: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.sensitivities, dtype=float))
        ell = np.atleast_1d(np.asarray(self.lf_lengthscales, dtype=float))
        nu = np.atleast_1d(np.asarray(self.smoothing_widths, dtype=float))
        eta = np.atleast_1d(np.asarray(self.noise_stds, dtype=float))
        R, Q = S.shape
        if R < 1 or Q < 1:
            raise ValueError("need at least one latent force and one output")
        if ell.shape != (R,):
            raise ValueError(f"expected {R} latent-force lengthscales, got {ell.shape}")
        if nu.shape != (Q,) or eta.shape != (Q,):
            raise ValueError(f"expected {Q} smoothing widths and noise stds")
        if not (np.all(ell > 0) and np.all(nu > 0)):
            raise ValueError("lengthscales and smoothing widths must be positive")
        if not np.all(eta >= 0):
            raise ValueError("noise stds must be non-negative")
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(ell))
                and np.all(np.isfinite(nu)) and np.all(np.isfinite(eta))):
            raise ValueError("non-finite hyperparameter")
        for name, arr in (("sensitivities", S), ("lf_lengthscales", ell),
                          ("smoothing_widths", nu), ("noise_stds", eta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def R(self) -> int:
        return self.sensitivities.shape[0]

    @property
    def Q(self) -> int:
        return self.sensitivities.shape[1]


@dataclass(frozen=True)
class MultiOutputSeries:
    """Irregularly sampled outputs; missing samples are simply absent."""

    times: tuple
    values: tuple
    names: tuple = None

    def __post_init__(self):
        times = tuple(np.asarray(t, dtype=float).ravel() for t in self.times)
        values = tuple(np.asarray(v, dtype=float).ravel() for v in self.values)
        if len(times) != len(values):
            raise ValueError("times and values must list the same outputs")
        for q, (t, v) in enumerate(zip(times, values)):
            if t.shape != v.shape:
                raise ValueError(f"output {q}: {t.size} times but {v.size} values")
            if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
                raise ValueError(f"output {q}: non-finite entries")
            if t.size > 1 and np.any(np.diff(t) <= 0):
                raise ValueError(f"output {q}: times must be strictly increasing")
        names = self.names
        if names is None:
            names = tuple(f"y{q}" for q in range(len(times)))
        if len(names) != len(times):
            raise ValueError("one name per output required")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(names))

    @property
    def Q(self) -> int:
        return len(self.times)

    @property
    def counts(self):
        return [t.size for t in self.times]

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def stacked(self):
        """(output index, time, value) arrays over all samples, output-major."""
        idx = np.concatenate([np.full(t.size, q) for q, t in enumerate(self.times)]) \
            if self.Q else np.empty(0, int)
        t = np.concatenate(self.times) if self.Q else np.empty(0)
        v = np.concatenate(self.values) if self.Q else np.empty(0)
        return idx.astype(int), t, v

    def drop(self, q, mask):
        """Copy with samples of output ``q`` where ``mask`` is True removed."""
        keep = ~np.asarray(mask, bool)
        times = list(self.times)
        values = list(self.values)
        times[q] = times[q][keep]
        values[q] = values[q][keep]
        return MultiOutputSeries(tuple(times), tuple(values), self.names)


def _check_indices(config, **idx):
    for name, value in idx.items():
        upper = config.R if name == "r" else config.Q
        if not (0 <= value < upper):
            raise IndexError(f"{name}={value} out of range [0, {upper})")


def lf_auto_cov(config: LFMConfig, r, t, t_prime):
    """Covariance of latent force r at two times (unit variance)."""
    _check_indices(config, r=r)
    ell = config.lf_lengthscales[r]
    lag = np.subtract(t, t_prime)
    return np.exp(-0.5 * lag**2 / ell**2)


def _pair_block(config, p, q, lag):
    """Noise-free output covariance block for a broadcastable lag array."""
    S, ell, nu = config.sensitivities, config.lf_lengthscales, config.smoothing_widths
    out = np.zeros(np.shape(lag))
    for r in range(config.R):
        coef = S[r, p] * S[r, q]
        if coef == 0.0:
            continue
        # grouped so that swapping p and q gives bit-identical values
        w2 = ell[r] ** 2 + (nu[p] ** 2 + nu[q] ** 2)
        amp = 2.0 * np.pi * ell[r] * (nu[p] * nu[q]) / np.sqrt(w2)
        out += coef * amp * np.exp(-0.5 * lag**2 / w2)
    return out


def output_cross_cov(config: LFMConfig, p, q, t, t_prime, noise=True):
    """Covariance between output p at time t and output q at time t'."""
    _check_indices(config, p=p, q=q)
    lag = np.subtract(t, t_prime)
    k = _pair_block(config, p, q, lag)
    if noise and p == q:
        k = k + config.noise_stds[q] ** 2 * (lag == 0)
    return k


def lf_output_cross_cov(config: LFMConfig, r, q, t, t_prime):
    """Covariance between latent force r at time t and output q at time t'."""
    _check_indices(config, r=r, q=q)
    ell, nu = config.lf_lengthscales[r], config.smoothing_widths[q]
    s2 = ell**2 + nu**2
    lag = np.subtract(t, t_prime)
    amp = config.sensitivities[r, q] * SQRT_2PI * ell * nu / np.sqrt(s2)
    return amp * np.exp(-0.5 * lag**2 / s2)


def build_joint_gram(config: LFMConfig, series, noise=True, query=None):
    """Joint covariance over all (output, time) samples.

    ``series`` is a :class:`MultiOutputSeries` or a sequence of per-output
    time arrays. With ``query`` (another set of per-output times) the
    cross-covariance between ``query`` rows and ``series`` columns is
    returned instead, without noise.
    """
    times = series.times if isinstance(series, MultiOutputSeries) else tuple(
        np.asarray(t, float).ravel() for t in series)
    if len(times) != config.Q:
        raise ValueError(f"series has {len(times)} outputs, config has {config.Q}")
    rows = times if query is None else tuple(np.asarray(t, float).ravel() for t in query)
    if len(rows) != config.Q:
        raise ValueError(f"query has {len(rows)} outputs, config has {config.Q}")
    blocks = []
    for p in range(config.Q):
        row = []
        for q in range(config.Q):
            lag = rows[p][:, None] - times[q][None, :]
            B = _pair_block(config, p, q, lag)
            if noise and query is None and p == q:
                B[np.diag_indices_from(B)] += config.noise_stds[q] ** 2
            row.append(B)
        blocks.append(row)
    n_rows = sum(t.size for t in rows)
    n_cols = sum(t.size for t in times)
    if n_rows == 0 or n_cols == 0:
        return np.zeros((n_rows, n_cols))
    return np.block(blocks)


@dataclass
class LFMModel:
    """A latent force model conditioned on observed series."""

    config: LFMConfig
    series: MultiOutputSeries
    factorization: SPDFactorization | None
    alpha: np.ndarray
    log_likelihood: float = float("nan")
    info: dict = field(default_factory=dict)

    @classmethod
    def condition(cls, config: LFMConfig, series: MultiOutputSeries) -> "LFMModel":
        if series.Q != config.Q:
            raise ValueError(f"series has {series.Q} outputs, config has {config.Q}")
        if series.total == 0:
            return cls(config, series, None, np.empty(0), 0.0)
        K = build_joint_gram(config, series)
        F = factorize(K)
        _, _, y = series.stacked()
        alpha = solve(F, y)
        ll = float(-0.5 * y @ alpha - 0.5 * F.logdet() - 0.5 * y.size * LOG_2PI)
        return cls(config, series, F, alpha, ll)


def log_marginal_likelihood(config: LFMConfig, series: MultiOutputSeries) -> float:
    return LFMModel.condition(config, series).log_likelihood


def _normalize_query(model, query_times):
    if len(query_times) != model.config.Q:
        raise ValueError(f"need query times for {model.config.Q} outputs")
    return tuple(np.atleast_1d(np.asarray(t, float)).ravel() for t in query_times)


def predict_outputs(model: LFMModel, query_times, include_noise=False):
    """Conditional mean and variance of every output at its query times.

    Returns two lists (one array per output). Variances are of the
    noise-free outputs unless ``include_noise`` is set.
    """
    cfg = model.config
    query = _normalize_query(model, query_times)
    means, variances = [], []
    for q in range(cfg.Q):
        tq = query[q]
        prior = _pair_block(cfg, q, q, np.zeros(tq.size))
        if include_noise:
            prior = prior + cfg.noise_stds[q] ** 2
        if model.factorization is None:
            means.append(np.zeros(tq.size))
            variances.append(prior)
            continue
        only_q = tuple(tq if p == q else np.empty(0) for p in range(cfg.Q))
        Kx = build_joint_gram(cfg, model.series, query=only_q)
        V = solve(model.factorization, Kx.T)
        means.append(Kx @ model.alpha)
        variances.append(np.maximum(prior - np.einsum("ij,ji->i", Kx, V), 0.0))
    return means, variances


def predict_joint(model: LFMModel, query_times):
    """Mean vector and full covariance over all stacked query points."""
    cfg = model.config
    query = _normalize_query(model, query_times)
    prior = build_joint_gram(cfg, query, noise=False)
    if model.factorization is None:
        return np.zeros(prior.shape[0]), prior
    Kx = build_joint_gram(cfg, model.series, query=query)
    return Kx @ model.alpha, prior - Kx @ solve(model.factorization, Kx.T)


def _lf_output_matrix(cfg, r, t_star, series):
    cols = [lf_output_cross_cov(cfg, r, q, t_star[:, None], tq[None, :])
            for q, tq in enumerate(series.times)]
    return np.hstack(cols) if cols else np.zeros((t_star.size, 0))


def infer_latent_forces(model: LFMModel, query_times):
    """Posterior mean and variance of each latent force at ``query_times``.

    Returns two (R, m) arrays.
    """
    cfg = model.config
    t_star = np.atleast_1d(np.asarray(query_times, float)).ravel()
    means = np.zeros((cfg.R, t_star.size))
    variances = np.ones((cfg.R, t_star.size))
    if model.factorization is None:
        return means, variances
    for r in range(cfg.R):
        Kfy = _lf_output_matrix(cfg, r, t_star, model.series)
        means[r] = Kfy @ model.alpha
        V = solve(model.factorization, Kfy.T)
        variances[r] = np.clip(1.0 - np.einsum("ij,ji->i", Kfy, V), 0.0, 1.0)
    return means, variances


def sample_outputs(config: LFMConfig, times, rng, noise=True):
    """Draw one joint sample of all outputs at the given per-output times."""
    K = build_joint_gram(config, times, noise=noise)
    F = factorize(K)
    z = rng.standard_normal(K.shape[0])
    draw = F.lower @ z
    out, start = [], 0
    for t in times:
        t = np.asarray(t).ravel()
        out.append(draw[start : start + t.size])
        start += t.size
    return out


# -- training

class _Packing:
    """Maps an LFMConfig to an unconstrained parameter vector and back."""

    def __init__(self, R, Q, noise_floor):
        self.R, self.Q = R, Q
        self.noise_floor = noise_floor

    def pack(self, cfg):
        excess = np.maximum(cfg.noise_stds - self.noise_floor, 1e-12)
        return np.concatenate([
            np.log(cfg.smoothing_widths),
            np.log(cfg.lf_lengthscales),
            cfg.sensitivities.ravel(),
            np.log(excess),
        ])

    def unpack(self, z):
        R, Q = self.R, self.Q
        nu = np.exp(z[:Q])
        ell = np.exp(z[Q : Q + R])
        S = z[Q + R : Q + R + R * Q].reshape(R, Q)
        eta = np.exp(z[Q + R + R * Q :]) + self.noise_floor
        return LFMConfig(S, ell, nu, eta)


def canonical_signs(cfg: LFMConfig) -> LFMConfig:
    """Flip latent forces so that S[r, 0] >= 0 (the likelihood is unchanged)."""
    S = cfg.sensitivities.copy()
    flip = S[:, 0] < 0
    S[flip] *= -1.0
    return replace(cfg, sensitivities=S)


def _correlation_signs(series):
    """Sign of each output's correlation with output 0 on output 0's times."""
    signs = np.ones(series.Q)
    t0, v0 = series.times[0], series.values[0]
    if t0.size < 2:
        return signs
    for q in range(1, series.Q):
        tq, vq = series.times[q], series.values[q]
        if tq.size < 2:
            continue
        inside = (t0 >= tq[0]) & (t0 <= tq[-1])
        if inside.sum() < 2:
            continue
        c = np.corrcoef(v0[inside], np.interp(t0[inside], tq, vq))[0, 1]
        signs[q] = -1.0 if c < 0 else 1.0
    return signs


def _random_start(rng, R, series):
    span = max(float(max(t.max() - t.min() for t in series.times if t.size) or 1.0), 1e-9)
    gaps = [np.median(np.diff(t)) for t in series.times if t.size > 1]
    dt = float(np.median(gaps)) if gaps else span / 10
    Q = series.Q
    nu = dt * np.exp(rng.uniform(0.0, 1.5, Q))
    ell = span / 10 * np.exp(rng.uniform(-1.5, 1.0, R))
    stds = np.array([np.std(v) if v.size > 1 else 1.0 for v in series.values])
    stds[~(stds > 0)] = 1.0
    S = np.empty((R, Q))
    for r in range(R):
        # the first force follows the sign pattern of the data, the others are random
        signs = _correlation_signs(series) if r == 0 else rng.choice([-1.0, 1.0], Q)
        for q in range(Q):
            c0 = 2.0 * np.pi * ell[r] * nu[q] ** 2 / np.sqrt(ell[r] ** 2 + 2 * nu[q] ** 2)
            S[r, q] = stds[q] / np.sqrt(R * c0) * signs[q] * np.exp(rng.uniform(-0.5, 0.5))
    eta = 0.1 * stds * np.exp(rng.uniform(-1, 1, Q))
    return LFMConfig(S, ell, nu, eta)


def fit_lfm(series: MultiOutputSeries, R: int, *, budget: int = 2000, n_starts: int = 3,
            seed: int = 0, init=None, noise_floor: float | None = None) -> LFMModel:
    """Fit an R-force model by multi-start Powell search on the log likelihood.

    ``budget`` is the total number of likelihood evaluations, shared evenly
    across restarts. ``init`` is an optional list of starting configs tried
    before the random ones (useful for nesting an R=1 solution into R>1;
    configs with fewer forces are padded with zero-sensitivity forces).
    Ties in the final likelihood go to the lowest restart index.
    """
    if not isinstance(series, MultiOutputSeries):
        series = MultiOutputSeries(*series)
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    if series.total < 10:
        raise ValueError(f"need at least 10 samples to fit, got {series.total}")
    if noise_floor is None:
        scale = float(np.std(series.stacked()[2])) or 1.0
        noise_floor = 1e-4 * scale
    pk = _Packing(R, series.Q, noise_floor)
    rng = np.random.default_rng(seed)
    starts = [_pad_config(c, R) for c in (init or [])]
    while len(starts) < n_starts:
        starts.append(_random_start(rng, R, series))
    per_start = max(budget // len(starts), 50)

    def objective(z):
        try:
            return -LFMModel.condition(pk.unpack(z), series).log_likelihood
        except (NotPositiveDefiniteError, ValueError, FloatingPointError):
            return np.inf

    best_cfg, best_val, best_idx = None, np.inf, -1
    for i, cfg0 in enumerate(starts):
        z0 = pk.pack(cfg0)
        f0 = objective(z0)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            res = minimize(objective, z0, method="Powell",
                           options={"maxfev": per_start, "xtol": 1e-6, "ftol": 1e-10})
        z, val = (res.x, res.fun) if res.fun <= f0 else (z0, f0)
        logger.debug("restart %d: -loglik %.6g -> %.6g (%d evals)", i, f0, val, res.nfev)
        if np.isfinite(val) and val < best_val:
            best_cfg, best_val, best_idx = pk.unpack(z), val, i
    if best_cfg is None:
        raise ValueError("no restart reached a finite likelihood")
    model = LFMModel.condition(canonical_signs(best_cfg), series)
    model.info.update(best_restart=best_idx, n_starts=len(starts))
    return model


def _pad_config(cfg, R):
    if cfg.R == R:
        return cfg
    if cfg.R > R:
        raise ValueError(f"initial config has {cfg.R} forces, model has {R}")
    extra = R - cfg.R
    S = np.vstack([cfg.sensitivities, np.zeros((extra, cfg.Q))])
    ell = np.concatenate([cfg.lf_lengthscales, np.full(extra, np.median(cfg.lf_lengthscales))])
    return LFMConfig(S, ell, cfg.smoothing_widths, cfg.noise_stds)


# -- metrics

def mse_nmse(y_true, y_pred):
    """Per-output MSE and NMSE (percent of the mean squared signal).

    Accepts a single pair of arrays or sequences of per-output arrays.
    """
    single = np.ndim(y_true[0]) == 0 if len(y_true) else True
    if single:
        y_true, y_pred = [y_true], [y_pred]
    mse, nmse = [], []
    for yt, yp in zip(y_true, y_pred):
        yt = np.asarray(yt, float)
        yp = np.asarray(yp, float)
        if yt.shape != yp.shape:
            raise ValueError(f"shape mismatch {yt.shape} vs {yp.shape}")
        m = float(np.mean((yt - yp) ** 2))
        power = float(np.mean(yt**2))
        mse.append(m)
        nmse.append(100.0 * m / power if power > 0 else np.inf if m > 0 else 0.0)
    mse, nmse = np.array(mse), np.array(nmse)
    return (mse[0], nmse[0]) if single else (mse, nmse)


def fit_exponential_relation(lai, fapar) -> float:
    """Least-squares alpha in ``fAPAR = 1 - exp(alpha * LAI)`` in log space.

    Minimizes ``sum (log(1 - fAPAR) - alpha * LAI)^2``.
    """
    lai = np.asarray(lai, float).ravel()
    fapar = np.asarray(fapar, float).ravel()
    if lai.shape != fapar.shape or lai.size == 0:
        raise ValueError("need equally many LAI and fAPAR values")
    if np.any(fapar >= 1) or np.any(fapar < 0):
        raise ValueError("fAPAR values must lie in [0, 1)")
    if np.any(lai < 0):
        raise ValueError("LAI values must be non-negative")
    denom = float(lai @ lai)
    if denom == 0:
        raise ValueError("all LAI values are zero")
    return float(lai @ np.log1p(-fapar) / denom)
