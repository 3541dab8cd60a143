"""Experiment runners.

Each ``run_*`` function takes an :class:`ExperimentConfig` and returns a
:class:`RunRecord` (plus, for the single-fit commands, extra artifact
tables). Work fans out over seeds; every seed task is a pure function of
its arguments, and results are merged in seed order, so the record does
not depend on ``workers``.
"""

from __future__ import annotations

import functools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import gp, jgp, lfm
from ..agape import (
    ATMOS_INITIAL_NODES,
    TOY_INITIAL_NODES,
    AnnealConfig,
    EmulatorConfig,
    StopRule,
    baseline_samplers,
    fit_state,
    make_oracle,
    run,
    truth_error,
)
from ..agape.oracles import BUILTIN
from ..agape.sampling import KINDS as SAMPLER_KINDS
from ..agape.sampling import LHC
from .config import ConfigError, ExperimentConfig
from .synthetic import CampaignSpec, GapFillSpec
from .tables import RunRecord

MEAN = "mean"
GP_R = "gp_r"
GP_S = "gp_s"
GP_RS = "gp_rs"
JGP = "jgp"
STRATEGIES = (GP_R, GP_S, GP_RS, JGP)
MODEL_KINDS = (MEAN,) + STRATEGIES

AGAPE = "AGAPE"
EMULATION_METHODS = (AGAPE,) + SAMPLER_KINDS


class _Clock:
    """Seconds since the previous call; used for per-row wall-clock."""

    def __init__(self):
        self._last = time.perf_counter()

    def __call__(self):
        now = time.perf_counter()
        dt, self._last = now - self._last, now
        return dt


def _map_seeds(task, seeds, workers):
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            return list(pool.map(task, seeds))
    return [task(s) for s in seeds]


def _collect(config, task):
    record = RunRecord(config.hash, config.experiment)
    for rows in _map_seeds(task, list(config.seeds), config.workers):
        for seed, iteration, metric, value, clock, labels in rows:
            record.add(seed, iteration, metric, value, wall_clock=clock, **labels)
    return record


def _spec(build, section, what):
    try:
        return build(section)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


# -- JGP strategies

@dataclass(frozen=True)
class SearchSpec:
    """Hyperparameter grid shared by the JGP-family strategies.

    Lengthscales are ``n_lengthscales`` log-spaced multipliers of the
    median pairwise distance over ``10**lengthscale_range``; noise levels
    are multipliers of the target std over ``10**noise_range``; the signal
    variance is the mean square of the targets. The reference rows that
    set these scales are the real training rows (simulated rows for GP_s).
    """

    n_lengthscales: int = 10
    lengthscale_range: tuple = (-1.5, 1.5)
    n_noise: int = 7
    noise_range: tuple = (-3.0, 0.0)
    gammas: tuple = tuple(np.logspace(-3, 3, 13))

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        kw = {}
        for k in ("n_lengthscales", "n_noise"):
            if k in d:
                kw[k] = int(d.pop(k))
        for k in ("lengthscale_range", "noise_range", "gammas"):
            if k in d:
                kw[k] = tuple(float(v) for v in d.pop(k))
        if d:
            raise ValueError(f"unknown search keys {sorted(d)}")
        return cls(**kw)

    def grid(self, ref: gp.Dataset, gammas=None) -> jgp.JGPGrid:
        med = gp.median_pairwise_distance(ref.inputs)
        std = float(np.std(ref.targets)) or 1.0
        msq = float(np.mean(ref.targets**2)) or 1.0
        return jgp.JGPGrid(
            lengthscales=tuple(np.logspace(*self.lengthscale_range, self.n_lengthscales) * med),
            noise_stds=tuple(np.logspace(*self.noise_range, self.n_noise) * std),
            gammas=tuple(self.gammas if gammas is None else gammas),
            signal_variances=(msq,),
        )


def _strategy_data(train: jgp.TaggedDataset, kind):
    """Training rows and reference rows (for grid scales) of a strategy."""
    if kind == GP_R:
        d = train.subset(train.is_real)
        return d, d.real()
    if kind == GP_RS:
        return train, train.real()
    if kind == JGP:
        return train, train.real()
    if kind == GP_S:
        sim = ~train.is_real
        if not sim.any():
            raise ValueError("GP_s needs simulated rows")
        d = jgp.TaggedDataset(train.inputs[sim], train.targets[sim], np.ones(sim.sum(), bool))
        return d, d.real()
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def fit_strategy(train: jgp.TaggedDataset, kind, search: SearchSpec | None = None,
                 hyperparams: jgp.JGPHyperparams | None = None):
    """Fit one strategy and return ``(predict_mean, hyperparams)``.

    GP_r uses the real rows, GP_s the simulated rows, GP_{r+s} the pool
    with gamma fixed at 1, and JGP the pool with gamma searched. All four
    pick (lengthscale, noise) on the same kind of grid by the leave-one-out
    pseudo-likelihood of their (real) training rows, so with no simulated
    rows GP_r, GP_{r+s} and JGP give identical predictions. ``mean``
    predicts the average real training target.
    """
    if kind == MEAN:
        c = float(np.mean(train.targets[train.is_real]))
        return (lambda X: np.full(np.atleast_2d(X).shape[0], c)), None
    data, ref = _strategy_data(train, kind)
    if hyperparams is None:
        search = search or SearchSpec()
        hyperparams = jgp.optimize_jgp(data, search.grid(ref, None if kind == JGP else (1.0,)))
    elif kind != JGP:
        hyperparams = jgp.JGPHyperparams(hyperparams.lengthscale, hyperparams.noise_std, 1.0,
                                         hyperparams.signal_variance)
    model = jgp.fit_jgp(data, hyperparams)
    return (lambda X: jgp.predict_jgp(model, X)[0]), hyperparams


@dataclass(frozen=True)
class KFoldResult:
    mean_rmse: float
    fold_rmse: np.ndarray
    folds: tuple


def fold_assignment(n_real, k, seed):
    """Split real-row positions ``0..n_real-1`` into ``k`` shuffled folds."""
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > n_real:
        raise ValueError(f"k={k} exceeds the number of real rows ({n_real})")
    perm = np.random.default_rng(seed).permutation(n_real)
    return tuple(np.sort(f) for f in np.array_split(perm, k))


def _rmse(y, yhat):
    return float(np.sqrt(np.mean((np.asarray(y) - np.asarray(yhat)) ** 2)))


def kfold_rmse(data: jgp.TaggedDataset, kind, k=10, seed=0, search=None,
               hyperparams=None) -> KFoldResult:
    """k-fold cross-validated RMSE on the real rows.

    Folds partition the real rows (shuffled by ``seed``); simulated rows
    always stay in the training set. Hyperparameters are re-selected on
    each training split unless ``hyperparams`` is given.
    """
    real = np.flatnonzero(data.is_real)
    folds = fold_assignment(real.size, k, seed)
    errs = []
    for f in folds:
        held = real[f]
        keep = np.ones(data.n, bool)
        keep[held] = False
        predict, _ = fit_strategy(data.subset(keep), kind, search, hyperparams)
        errs.append(_rmse(data.targets[held], predict(data.inputs[held])))
    errs = np.array(errs)
    return KFoldResult(float(errs.mean()), errs, folds)


def _external_rmse(train, X_test, y_test, kind, folds, search):
    predict, _ = fit_strategy(train, kind, search)
    yhat = predict(X_test)
    errs = np.array([_rmse(y_test[f], yhat[f]) for f in folds])
    return KFoldResult(float(errs.mean()), errs, folds)


def _check_kinds(kinds, allowed, what="strategies"):
    kinds = list(kinds)
    bad = [k for k in kinds if k not in allowed]
    if bad or not kinds:
        raise ConfigError(f"{what} must be a non-empty subset of {allowed}, got {kinds}")
    return kinds


def _campaign(config):
    return _spec(CampaignSpec.from_dict, config.section("campaign"), "campaign")


def _samesite_task(seed, spec, site, n_real, p_grid, k, kinds, search):
    clock, rows = _Clock(), []
    for p in p_grid:
        data = spec.campaign(site, n_real, int(round(p * n_real)), seed)
        for kind in kinds:
            res = kfold_rmse(data, kind, k, seed, search)
            rows.append((seed, 0, "rmse", res.mean_rmse, clock(),
                         {"site": site, "p": p, "strategy": kind}))
    return rows


def run_samesite(config: ExperimentConfig) -> RunRecord:
    """RMSE of GP_r, GP_{r+s} and JGP versus the ratio p = s / r.

    Config keys: ``campaign`` (see :class:`CampaignSpec`), ``site``,
    ``n_real``, ``p_grid``, ``k`` (folds), ``strategies``, ``search``.
    One row per (p, strategy, seed).
    """
    spec = _campaign(config)
    site = config.get("site", next(iter(spec.sites)))
    if site not in spec.sites:
        raise ConfigError(f"unknown site {site!r}")
    n_real = int(config.get("n_real", 40))
    p_grid = [float(p) for p in config.get("p_grid", [0.0, 0.5, 1.0, 2.0])]
    if any(p < 0 for p in p_grid) or not p_grid:
        raise ConfigError("p_grid must be a non-empty list of non-negative ratios")
    k = int(config.get("k", 10))
    if not 2 <= k <= n_real:
        raise ConfigError(f"k must lie in [2, n_real={n_real}], got {k}")
    kinds = _check_kinds(config.get("strategies", [GP_R, GP_RS, JGP]), (MEAN, GP_R, GP_RS, JGP))
    search = _spec(SearchSpec.from_dict, config.get("search"), "search")
    task = functools.partial(_samesite_task, spec=spec, site=site, n_real=n_real,
                             p_grid=p_grid, k=k, kinds=kinds, search=search)
    return _collect(config, task)


def _crosssite_task(seed, spec, sites, n_real, n_sim, k, kinds, search):
    clock, rows = _Clock(), []
    for target in sites:
        Xt, yt = spec.real(target, n_real, seed)
        folds = fold_assignment(n_real, k, seed)
        for source in sites:
            train = spec.campaign(source, n_real, n_sim, seed)
            for kind in kinds:
                if source == target:
                    res = kfold_rmse(train, kind, k, seed, search)
                else:
                    res = _external_rmse(train, Xt, yt, kind, folds, search)
                rows.append((seed, 0, "rmse", res.mean_rmse, clock(),
                             {"source": source, "target": target, "strategy": kind}))
    return rows


def run_crosssite(config: ExperimentConfig) -> RunRecord:
    """Source x target RMSE matrix for GP_r, GP_s, GP_{r+s} and JGP.

    Real training rows come from the source site, test rows are the real
    rows of the target site, split into the same ``k`` folds used by the
    same-site run; when source equals target this is exactly same-site
    cross-validation with ``p = n_sim / n_real``.
    """
    spec = _campaign(config)
    sites = [str(s) for s in config.get("sites", list(spec.sites))]
    unknown = [s for s in sites if s not in spec.sites]
    if unknown or not sites:
        raise ConfigError(f"unknown or empty site list: {unknown or sites}")
    n_real = int(config.get("n_real", 40))
    n_sim = int(config.get("n_sim", 40))
    k = int(config.get("k", 10))
    if not 2 <= k <= n_real:
        raise ConfigError(f"k must lie in [2, n_real={n_real}], got {k}")
    kinds = _check_kinds(config.get("strategies", list(STRATEGIES)), MODEL_KINDS)
    if GP_S in kinds and n_sim < 3:
        raise ConfigError("GP_s needs n_sim >= 3")
    search = _spec(SearchSpec.from_dict, config.get("search"), "search")
    task = functools.partial(_crosssite_task, spec=spec, sites=sites, n_real=n_real,
                             n_sim=n_sim, k=k, kinds=kinds, search=search)
    return _collect(config, task)


def run_kfold(config: ExperimentConfig, data: jgp.TaggedDataset) -> RunRecord:
    """k-fold RMSE of each requested model kind on a loaded dataset."""
    k = int(config.get("k", 10))
    if not 2 <= k <= data.n_real:
        raise ConfigError(f"k must lie in [2, {data.n_real}] (number of real rows), got {k}")
    kinds = _check_kinds(config.get("models", [GP_R, JGP]), MODEL_KINDS, "models")
    if GP_S in kinds and data.n_real == data.n:
        raise ConfigError("GP_s needs simulated rows")
    search = _spec(SearchSpec.from_dict, config.get("search"), "search")

    def task(seed):
        clock, rows = _Clock(), []
        for kind in kinds:
            res = kfold_rmse(data, kind, k, seed, search)
            for i, e in enumerate(res.fold_rmse):
                rows.append((seed, i, "fold_rmse", e, clock(), {"model": kind}))
            rows.append((seed, -1, "rmse", res.mean_rmse, clock(), {"model": kind}))
        return rows

    # closures do not pickle; the per-dataset evaluation is cheap enough serially
    record = RunRecord(config.hash, config.experiment)
    for seed in config.seeds:
        for s, it, metric, value, clock, labels in task(seed):
            record.add(s, it, metric, value, wall_clock=clock, **labels)
    return record


# -- LFM gap filling

def _center(series):
    means = [float(np.mean(v)) if v.size else 0.0 for v in series.values]
    shifted = lfm.MultiOutputSeries(series.times, [v - m for v, m in zip(series.values, means)],
                                    series.names)
    return shifted, means


def gap_fill_once(series, gap_output, mask, R=1, budget=2000, n_starts=3, seed=0,
                  center=False):
    """Fit LFM and an independent GP with samples of one output removed.

    Returns ``{method: (mse, nmse, prediction)}`` on the removed samples.
    Both models use a zero prior mean. With ``center`` each output is first
    shifted by the mean of its kept samples; this suits data with a large
    offset but is harmful when the outputs really are zero-mean, since
    unrelated shifts of coupled outputs look very unlikely to the model.
    """
    observed = series.drop(gap_output, mask)
    if center:
        centred, means = _center(observed)
    else:
        centred, means = observed, [0.0] * series.Q
    t_gap = series.times[gap_output][mask]
    y_gap = series.values[gap_output][mask]

    model = lfm.fit_lfm(centred, R, budget=budget, n_starts=n_starts, seed=seed)
    query = [t_gap if q == gap_output else np.empty(0) for q in range(series.Q)]
    pred_lfm = lfm.predict_outputs(model, query)[0][gap_output] + means[gap_output]

    single = gp.Dataset(centred.times[gap_output], centred.values[gap_output])
    hp = gp.optimize_hyperparams(single)
    pred_gp = gp.predict(gp.fit(single, hp), t_gap[:, None])[0] + means[gap_output]

    out = {}
    for name, pred in (("lfm", pred_lfm), ("gp", pred_gp)):
        mse, nmse = lfm.mse_nmse(y_gap, pred)
        out[name] = (float(mse), float(nmse), pred)
    return out


def _gapfill_task(seed, spec, R, budget, n_starts, center):
    clock, rows = _Clock(), []
    series, mask = spec.draw(seed)
    res = gap_fill_once(series, spec.gap_output, mask, R, budget, n_starts, seed, center)
    for method in ("lfm", "gp"):
        mse, nmse, _ = res[method]
        rows.append((seed, 0, "mse", mse, clock(), {"method": method}))
        rows.append((seed, 0, "nmse", nmse, 0.0, {"method": method}))
    return rows


def run_gapfill(config: ExperimentConfig) -> RunRecord:
    """LFM versus per-output GP on a contiguous gap in one output.

    Config keys: ``gapfill`` (see :class:`GapFillSpec`), ``R``, ``budget``
    and ``n_starts`` for the LFM search, ``center`` (default false).
    """
    spec = _spec(GapFillSpec.from_dict, config.section("gapfill"), "gapfill")
    R = int(config.get("R", 1))
    if R < 1:
        raise ConfigError("R must be >= 1")
    task = functools.partial(_gapfill_task, spec=spec, R=R,
                             budget=int(config.get("budget", 2000)),
                             n_starts=int(config.get("n_starts", 3)),
                             center=bool(config.get("center", False)))
    return _collect(config, task)


# -- emulation benchmarks

def emulator_config(section, seed) -> EmulatorConfig:
    """EmulatorConfig from a config mapping; the anneal seed is ``seed``."""
    section = dict(section or {})
    anneal = dict(section.pop("anneal", {}) or {})
    anneal["seed"] = int(seed)
    kw = {}
    if "lengthscale_grid" in section:
        kw["lengthscale_grid"] = tuple(float(v) for v in section.pop("lengthscale_grid"))
    for key in ("gamma_temper", "min_separation"):
        if key in section:
            kw[key] = float(section.pop(key))
    for key in ("criterion",):
        if key in section:
            kw[key] = str(section.pop(key))
    if "refine_lengthscale" in section:
        kw["refine_lengthscale"] = bool(section.pop("refine_lengthscale"))
    if "fallback_probe" in section:
        kw["fallback_probe"] = int(section.pop("fallback_probe"))
    if section:
        raise ValueError(f"unknown emulator keys {sorted(section)}")
    return EmulatorConfig(anneal=AnnealConfig(**anneal), **kw)


DEFAULT_INITIAL_NODES = {"toy_log": TOY_INITIAL_NODES, "pseudo_atmospheric": ATMOS_INITIAL_NODES}


def truth_grid(oracle, spec=None):
    """Dense ground-truth inputs and outputs.

    Default: 1000 evenly spaced points for 1-d oracles and a 35 x 50 grid
    for 2-d ones; ``spec`` may give ``shape`` (points per axis).
    """
    b = oracle.bounds
    shape = (spec or {}).get("shape")
    if shape is None:
        shape = [1000] if oracle.dim == 1 else [35, 50] if oracle.dim == 2 else [10] * oracle.dim
    shape = [int(s) for s in np.atleast_1d(shape)]
    if len(shape) != oracle.dim:
        raise ValueError(f"truth grid needs {oracle.dim} axis sizes, got {shape}")
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(b, shape)]
    Y = np.column_stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])
    return Y, oracle.evaluate_grid(Y)


def _lhc_scan(oracle_name, initial, cfg, truth, max_nodes, eps, seed):
    """Fresh LHC designs of size m - m0 added to the initial nodes."""
    oracle = make_oracle(oracle_name)
    m0 = len(initial)
    out = []
    for m in range(m0, max_nodes + 1):
        extra = baseline_samplers(LHC, oracle.bounds, m - m0, seed=[seed, m])
        nodes = np.vstack([initial, extra]) if m > m0 else initial
        outputs = np.array([oracle(y) for y in nodes])
        state = fit_state(oracle.bounds, nodes, outputs, cfg)
        mse = truth_error(state, truth)
        out.append((m, mse))
        if eps is not None and math.sqrt(mse) <= eps:
            break
    return out


def _emulation_task(seed, oracle_name, initial, methods, max_nodes, eps, truth, emu):
    clock, rows = _Clock(), []
    cfg = emulator_config(emu, seed)
    m0 = len(initial)
    stop = StopRule(epsilon=-math.inf, max_nodes=max_nodes, truth_epsilon=eps)
    for method in methods:
        if method == LHC:
            trace = _lhc_scan(oracle_name, initial, cfg, truth, max_nodes, eps, seed)
        else:
            oracle = make_oracle(oracle_name)
            proposals = None
            if method != AGAPE:
                proposals = baseline_samplers(method, oracle.bounds, max_nodes - m0, seed=seed)
            _, rec = run(oracle, initial, cfg, stop, truth=truth, proposals=proposals)
            trace = list(zip(rec.column("m"), rec.column("true_mse")))
        for m, mse in trace:
            rows.append((seed, m - m0, "mse", mse, clock(), {"method": method, "m": m}))
        if eps is not None:
            m_last, mse_last = trace[-1]
            reached = math.sqrt(mse_last) <= eps
            rows.append((seed, -1, "nodes_to_eps", m_last if reached else math.inf, 0.0,
                         {"method": method, "m": ""}))
    return rows


def run_emulation_bench(config: ExperimentConfig) -> RunRecord:
    """Compare AGAPE/AMOGAPE with RANDOM, SOBOL, LHC and SEQ_LHC designs.

    Config keys: ``oracle`` (built-in name), ``initial_nodes``, ``methods``,
    ``max_nodes``, ``epsilon`` (RMSE against the truth grid; omit for
    fixed-budget curves), ``truth`` (``shape``), ``emulator`` (settings of
    :class:`EmulatorConfig`, ``anneal`` nested). Rows: true MSE per method
    and node count, and ``nodes_to_eps`` per method when ``epsilon`` is set
    (``inf`` if ``max_nodes`` was reached first).
    """
    name = config.get("oracle", "toy_log")
    if name not in BUILTIN:
        raise ConfigError(f"unknown oracle {name!r}; available: {sorted(BUILTIN)}")
    oracle = make_oracle(name)
    initial = np.asarray(config.get("initial_nodes", DEFAULT_INITIAL_NODES[name]), float)
    initial = initial.reshape(-1, oracle.dim)
    if initial.shape[0] < 2:
        raise ConfigError("need at least 2 initial nodes")
    methods = _check_kinds([str(m).upper() for m in config.get("methods", EMULATION_METHODS)],
                           EMULATION_METHODS, "methods")
    max_nodes = int(config.get("max_nodes", initial.shape[0] + 20))
    if max_nodes < initial.shape[0]:
        raise ConfigError("max_nodes is smaller than the initial design")
    eps = config.get("epsilon")
    eps = None if eps is None else float(eps)
    truth = _spec(lambda s: truth_grid(oracle, s), config.section("truth"), "truth grid")
    emu = config.section("emulator")
    _spec(lambda s: emulator_config(s, 0), emu, "emulator settings")
    task = functools.partial(_emulation_task, oracle_name=name, initial=initial, methods=methods,
                             max_nodes=max_nodes, eps=eps, truth=truth, emu=emu)
    return _collect(config, task)
