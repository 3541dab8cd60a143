"""Command-line entry point.

Usage::

    physgp <command> --config FILE [--seed N] [--out DIR] [--oracle-cmd PROG]

Commands: fit-gp, fit-jgp, fit-lfm, emulate, bench-emulation, bench-jgp,
eval. Exit status is 0 on success, 2 for configuration or input-data
errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys

import numpy as np

from .. import gp, jgp, lfm
from ..agape import OracleError, ProcessOracle, StopRule, make_oracle, run
from ..agape.oracles import BUILTIN
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .io import DataFormatError, load_matrix_csv, load_series_csv, load_tagged_csv
from .tables import RunRecord, emit_tables, write_csv

logger = logging.getLogger("physgp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _query_points(config, d, default):
    path = config.get("query_path")
    if path is None:
        return default
    names, Q = load_matrix_csv(path)
    if Q.shape[1] != d:
        raise DataFormatError(f"{path}: expected {d} feature columns, got {Q.shape[1]}")
    return Q


def _prediction_table(out, stem, X, mean, var, names):
    write_csv(os.path.join(out, f"{stem}_predictions.csv"), list(names) + ["mean", "variance"],
              [list(x) + [m, v] for x, m, v in zip(X, mean, var)])


def cmd_fit_gp(config: ExperimentConfig, args):
    """Fit a standard GP by LML grid search on a tagged CSV.

    Keys: ``data_path``, ``rows`` (``real`` or ``all``), ``query_path``,
    ``search`` (``lengthscales``, ``noise_stds``, ``signal_variances``).
    """
    data = load_tagged_csv(_require(config, "data_path"))
    rows = config.get("rows", "real")
    if rows not in ("real", "all"):
        raise ConfigError("rows must be 'real' or 'all'")
    ds = data.real() if rows == "real" else data.pooled()
    s = config.section("search")
    unknown = set(s) - {"lengthscales", "noise_stds", "signal_variances"}
    if unknown:
        raise ConfigError(f"unknown search keys {sorted(unknown)}")
    search = gp.GridSearch(**{k: tuple(float(v) for v in s[k]) for k in s})
    hp = gp.optimize_hyperparams(ds, search)
    model = gp.fit(ds, hp)
    lml = gp.log_marginal_likelihood(ds, hp)
    record = RunRecord(config.hash, config.experiment)
    seed = config.seeds[0]
    for name, value in (("lengthscale", hp.lengthscale), ("noise_std", hp.noise_std),
                        ("signal_variance", hp.signal_variance), ("log_marginal_likelihood", lml),
                        ("n_train", ds.n)):
        record.add(seed, 0, name, value)
    X = _query_points(config, ds.d, ds.inputs)
    mean, var = gp.predict(model, X)
    _prediction_table(config.out_dir, config.experiment, X, mean, var, data.feature_names)
    return record


def cmd_fit_jgp(config: ExperimentConfig, args):
    """Fit a joint GP on a tagged CSV (keys ``data_path``, ``query_path``, ``search``)."""
    data = load_tagged_csv(_require(config, "data_path"))
    search = ex._spec(ex.SearchSpec.from_dict, config.get("search"), "search")
    predict, hp = ex.fit_strategy(data, ex.JGP, search)
    model = jgp.fit_jgp(data, hp)
    record = RunRecord(config.hash, config.experiment)
    seed = config.seeds[0]
    for name, value in (("lengthscale", hp.lengthscale), ("noise_std", hp.noise_std),
                        ("gamma", hp.gamma), ("signal_variance", hp.signal_variance),
                        ("loo_pseudo_likelihood", jgp.loo_pseudo_likelihood(data, hp)),
                        ("n_real", data.n_real), ("n_sim", data.n - data.n_real)):
        record.add(seed, 0, name, value)
    X = _query_points(config, data.inputs.shape[1], data.inputs[data.is_real])
    mean, var = jgp.predict_jgp(model, X)
    _prediction_table(config.out_dir, config.experiment, X, mean, var, data.feature_names)
    return record


def cmd_fit_lfm(config: ExperimentConfig, args):
    """Fit a latent force model to series in long CSV format.

    Keys: ``data_path``, ``R``, ``budget``, ``n_starts``, ``center``
    (subtract per-output means first, default true), ``query``
    (``t_min``, ``t_max``, ``n``; default spans the data with 200 points).
    Writes predicted outputs and inferred latent forces.
    """
    series = load_series_csv(_require(config, "data_path"))
    R = int(config.get("R", 1))
    if R < 1:
        raise ConfigError("R must be >= 1")
    seed = config.seeds[0]
    if config.get("center", True):
        centred, means = ex._center(series)
    else:
        centred, means = series, [0.0] * series.Q
    model = lfm.fit_lfm(centred, R, budget=int(config.get("budget", 2000)),
                        n_starts=int(config.get("n_starts", 3)), seed=seed)
    all_t = np.concatenate(series.times)
    q = config.section("query")
    t = np.linspace(float(q.get("t_min", all_t.min())), float(q.get("t_max", all_t.max())),
                    int(q.get("n", 200)))

    record = RunRecord(config.hash, config.experiment)
    record.add(seed, 0, "log_likelihood", model.log_likelihood)
    cfg = model.config
    for qi, name in enumerate(series.names):
        record.add(seed, 0, "smoothing_width", cfg.smoothing_widths[qi], output=name, force="")
        record.add(seed, 0, "noise_std", cfg.noise_stds[qi], output=name, force="")
        for r in range(cfg.R):
            record.add(seed, 0, "sensitivity", cfg.sensitivities[r, qi], output=name, force=r)
    for r in range(cfg.R):
        record.add(seed, 0, "lf_lengthscale", cfg.lf_lengthscales[r], output="", force=r)

    mu, var = lfm.predict_outputs(model, [t] * series.Q)
    rows = [[name, tt, m + means[qi], v] for qi, name in enumerate(series.names)
            for tt, m, v in zip(t, mu[qi], var[qi])]
    write_csv(os.path.join(config.out_dir, f"{config.experiment}_predictions.csv"),
              ["output", "time", "mean", "variance"], rows)
    fm, fv = lfm.infer_latent_forces(model, t)
    write_csv(os.path.join(config.out_dir, f"{config.experiment}_forces.csv"),
              ["force", "time", "mean", "variance"],
              [[r, tt, m, v] for r in range(cfg.R) for tt, m, v in zip(t, fm[r], fv[r])])
    return record


def _oracle(config, args):
    if args.oracle_cmd:
        bounds = config.get("bounds")
        if bounds is None or config.get("output_dim") is None:
            raise ConfigError("--oracle-cmd needs 'bounds' and 'output_dim' in the config")
        return ProcessOracle(shlex.split(args.oracle_cmd), bounds, int(config.get("output_dim")))
    name = config.get("oracle", "toy_log")
    if name not in BUILTIN:
        raise ConfigError(f"unknown oracle {name!r}; available: {sorted(BUILTIN)}")
    return make_oracle(name)


def cmd_emulate(config: ExperimentConfig, args):
    """Build a compact look-up table with the active emulator.

    Keys: ``oracle`` (or ``bounds``/``output_dim`` with ``--oracle-cmd``),
    ``initial_nodes``, ``stop`` (``epsilon``, ``max_nodes``), ``emulator``.
    Writes the per-iteration trace as the record and the table of nodes and
    outputs as ``<experiment>_lut.csv``.
    """
    seed = config.seeds[0]
    cfg = ex._spec(lambda s: ex.emulator_config(s, seed), config.section("emulator"),
                   "emulator settings")
    stop_s = config.section("stop")
    stop = StopRule(epsilon=float(stop_s.get("epsilon", 0.0)),
                    max_nodes=int(stop_s.get("max_nodes", 50)))
    oracle = _oracle(config, args)
    try:
        initial = config.get("initial_nodes")
        if initial is None:
            if oracle.name not in ex.DEFAULT_INITIAL_NODES:
                raise ConfigError("initial_nodes is required for external oracles")
            initial = ex.DEFAULT_INITIAL_NODES[oracle.name]
        initial = np.asarray(initial, float).reshape(-1, oracle.dim)
        try:
            state, rec = run(oracle, initial, cfg, stop)
        except ValueError as exc:
            if "initial" in str(exc):
                raise ConfigError(str(exc)) from exc
            raise
        calls = oracle.calls
    finally:
        if isinstance(oracle, ProcessOracle):
            oracle.close()
    record = RunRecord(config.hash, config.experiment)
    for row in rec.rows:
        for metric in ("m", "acquisition", "stop_distance"):
            record.add(seed, row["t"], metric, row[metric])
    record.add(seed, -1, "oracle_calls", calls)
    header = [f"y{i}" for i in range(oracle.dim)] + [f"g{k}" for k in range(state.K)]
    write_csv(os.path.join(config.out_dir, f"{config.experiment}_lut.csv"), header,
              [list(y) + list(x) for y, x in zip(state.nodes, state.outputs)])
    return record


def cmd_bench_emulation(config, args):
    return ex.run_emulation_bench(config)


def cmd_bench_jgp(config, args):
    return ex.run_samesite(config) if config.experiment == "samesite" else ex.run_crosssite(config)


def cmd_eval(config, args):
    if config.experiment == "gapfill":
        return ex.run_gapfill(config)
    return ex.run_kfold(config, load_tagged_csv(_require(config, "data_path")))


def _require(config, key):
    val = config.get(key)
    if val is None:
        raise ConfigError(f"missing required key {key!r}")
    return val


COMMANDS = {
    "fit-gp": (cmd_fit_gp, ("fit-gp",)),
    "fit-jgp": (cmd_fit_jgp, ("fit-jgp",)),
    "fit-lfm": (cmd_fit_lfm, ("fit-lfm",)),
    "emulate": (cmd_emulate, ("emulate",)),
    "bench-emulation": (cmd_bench_emulation, ("bench-emulation",)),
    "bench-jgp": (cmd_bench_jgp, ("samesite", "crosssite")),
    "eval": (cmd_eval, ("kfold", "gapfill")),
}


def build_parser():
    p = argparse.ArgumentParser(prog="physgp", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (func, kinds) in COMMANDS.items():
        s = sub.add_parser(name, help=(func.__doc__ or "").split("\n")[0] or None,
                           description=f"Accepted experiment kinds: {', '.join(kinds)}.")
        s.add_argument("--config", required=True, help="YAML experiment config")
        s.add_argument("--seed", type=int, default=None,
                       help="replaces the first seed listed in the config")
        s.add_argument("--out", default=None, help="output directory (overrides out_dir)")
        s.add_argument("--oracle-cmd", default=None,
                       help="external oracle program (emulate): reads CSV rows on stdin, "
                            "answers one CSV row per query")
    return p


def execute(args) -> RunRecord:
    func, kinds = COMMANDS[args.command]
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be non-negative")
    config = load_config(args.config, seed=args.seed, out_dir=args.out)
    if config.experiment not in kinds:
        raise ConfigError(f"'{args.command}' runs experiments {kinds}, "
                          f"config has {config.experiment!r}")
    if args.oracle_cmd and args.command != "emulate":
        raise ConfigError("--oracle-cmd is only used by 'emulate'")
    os.makedirs(config.out_dir, exist_ok=True)
    record = func(config, args)
    paths = emit_tables(record, config.out_dir)
    for p in paths.values():
        logger.info("wrote %s", p)
    return record


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        execute(args)
    except (ConfigError, DataFormatError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, OracleError, ValueError,
            ArithmeticError) as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
