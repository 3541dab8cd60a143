"""Active GP emulation of a costly oracle.

Nodes are added one at a time at the maximizer of

    A_t(y) = [prod_k H_k(y)]^beta_t * prod_k D_k(y)

where, for each output k, ``D_k`` is the predictive variance of a noise-free
GP interpolator, ``H_k`` is the norm of the interpolant's gradient and
``beta_t = 1 - exp(-gamma * t)`` phases the gradient term in.

Interpolators work on inputs rescaled to the unit box and on targets
centred at their mean; every public function takes and returns raw units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .. import gp
from ..kernels import cross_cov, solve, sq_dist
from .annealing import AnnealConfig, anneal
from .oracles import Oracle
from .sampling import sobol_points

logger = logging.getLogger(__name__)

H_FLOOR = 1e-12


def _points(Y, d):
    """Rows of query points; a flat array is n points when d == 1, else one point."""
    Y = np.asarray(Y, float)
    return Y.reshape(-1, d)


@dataclass(frozen=True)
class Interpolator:
    """Noise-free GP interpolant of one output."""

    model: gp.GPModel
    offset: float
    lo: np.ndarray
    width: np.ndarray

    def _unit(self, Y):
        return (_points(Y, self.lo.size) - self.lo) / self.width

    def mean(self, Y):
        U = self._unit(Y)
        return cross_cov(self.model.kernel, U, self.model.support_inputs) @ self.model.alpha + self.offset

    def _gradient(self, U, Ks):
        m = self.model
        diff = U[:, None, :] - m.support_inputs[None, :, :]
        grad_u = -np.einsum("ij,j,ijk->ik", Ks, m.alpha, diff) / m.kernel.lengthscale**2
        return grad_u / self.width

    def gradient(self, Y):
        """Interpolant gradient w.r.t. raw inputs, shape (n, d)."""
        U = self._unit(Y)
        return self._gradient(U, cross_cov(self.model.kernel, U, self.model.support_inputs))

    def terms(self, Y):
        """Gradient norm (raw units) and predictive variance at each row of Y."""
        U = self._unit(Y)
        m = self.model
        Ks = cross_cov(m.kernel, U, m.support_inputs)
        H = np.linalg.norm(self._gradient(U, Ks), axis=1)
        V = solve(m.factorization, Ks.T)
        D = m.kernel.signal_variance - np.einsum("ij,ji->i", Ks, V)
        return H, np.maximum(D, 0.0)


# multipliers of the median node spacing (unit box); finer than the GP default
# because successive fits are compared against each other
DEFAULT_LENGTHSCALE_GRID = tuple(np.logspace(-1.5, 1.0, 41))


def loo_squared_error(data, hp):
    """Sum of squared leave-one-out residuals ``[K^-1 y]_i / [K^-1]_ii``."""
    F = gp.factorize(gp.cross_cov(hp.kernel, data.inputs)
                     + hp.noise_std**2 * np.eye(data.n))
    Kinv = gp.inverse(F)
    resid = (Kinv @ data.targets) / np.diag(Kinv)
    return float(resid @ resid)


def _refine_lengthscale(data, hp, grid, score=None):
    """Bounded 1-d maximization of ``score`` (default LML) between the grid
    neighbours of ``hp``."""
    g = np.sort(np.asarray(grid))
    i = int(np.searchsorted(g, hp.lengthscale))
    lo, hi = np.log(g[max(i - 1, 0)]), np.log(g[min(i + 1, g.size - 1)])
    if hi <= lo:
        return hp

    if score is None:
        def score(h):
            try:
                return gp.log_marginal_likelihood(data, h)
            except gp.NotPositiveDefiniteError:
                return -np.inf

    def neg(z):
        return -score(replace(hp, lengthscale=float(np.exp(z))))

    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-3})
    if np.isfinite(res.fun) and res.fun < neg(np.log(hp.lengthscale)):
        return replace(hp, lengthscale=float(np.exp(res.x)))
    return hp


def fit_interpolator(nodes, values, domain, lengthscale_grid=DEFAULT_LENGTHSCALE_GRID,
                     criterion="lml", refine=True):
    """Fit one output: signal variance = sample variance, lengthscale by grid search.

    ``lengthscale_grid`` holds multipliers of the median pairwise distance
    between nodes in unit-box coordinates. ``criterion`` is ``"lml"`` (log
    marginal likelihood) or ``"loo"`` (leave-one-out squared error).
    """
    b = np.atleast_2d(np.asarray(domain, float))
    lo, width = b[:, 0], b[:, 1] - b[:, 0]
    U = (np.atleast_2d(np.asarray(nodes, float)) - lo) / width
    x = np.asarray(values, float).ravel()
    offset = float(np.mean(x))
    var = float(np.var(x))
    if not var > 0:
        var = 1.0
    data = gp.Dataset(U, x - offset)
    med = gp.median_pairwise_distance(U)
    if data.n >= 3:
        grid = gp.GridSearch(lengthscales=tuple(np.asarray(lengthscale_grid) * med),
                             noise_stds=(0.0,), signal_variances=(var,))
        if criterion == "lml":
            hp = gp.optimize_hyperparams(data, grid)
            if refine:
                hp = _refine_lengthscale(data, hp, grid.lengthscales)
        elif criterion == "loo":
            cands = [gp.GPHyperparams(l, 0.0, var) for l in grid.lengthscales]

            def score(h):
                try:
                    return -loo_squared_error(data, h)
                except gp.NotPositiveDefiniteError:
                    return -np.inf

            hp, _ = gp.grid_argmax(cands, score)
        else:
            raise ValueError(f"unknown criterion {criterion!r}")
    else:
        hp = gp.GPHyperparams(med, 0.0, var)
    return Interpolator(gp.fit(data, hp), offset, lo, width)


@dataclass(frozen=True)
class EmulatorConfig:
    gamma_temper: float = 0.2
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    lengthscale_grid: tuple = DEFAULT_LENGTHSCALE_GRID
    criterion: str = "lml"
    refine_lengthscale: bool = True
    min_separation: float = 1e-9
    fallback_probe: int = 1024

    def __post_init__(self):
        if self.gamma_temper < 0:
            raise ValueError("gamma_temper must be non-negative")


@dataclass(frozen=True)
class EmulatorState:
    """Emulator after ``t`` acquisition steps.

    ``nodes`` is (m, d) (one node per row) and ``outputs`` (m, K).
    ``snapshot`` holds the interpolant on the stopping grid and ``previous``
    the snapshot of the step before; the initial design has no snapshot, so
    the stopping distance first becomes finite after two steps.
    """

    domain: np.ndarray
    nodes: np.ndarray
    outputs: np.ndarray
    t: int
    interpolators: tuple
    config: EmulatorConfig
    stopping_grid: np.ndarray
    snapshot: np.ndarray | None = None
    previous: np.ndarray | None = None
    last_acquisition: float = float("nan")

    @property
    def m(self) -> int:
        return self.nodes.shape[0]

    @property
    def K(self) -> int:
        return self.outputs.shape[1]

    def predict(self, Y):
        """Interpolant values, shape (n, K)."""
        return np.column_stack([f.mean(Y) for f in self.interpolators])


def stopping_grid(domain, n_side=33, n_scattered=4096):
    """Fixed evaluation grid: ``n_side**d`` lattice for d <= 2, else Sobol points."""
    b = np.atleast_2d(np.asarray(domain, float))
    d = b.shape[0]
    if d <= 2:
        axes = [np.linspace(lo, hi, n_side) for lo, hi in b]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([g.ravel() for g in mesh])
    U = sobol_points(d, n_scattered, scramble=True, seed=0)
    return b[:, 0] + U * (b[:, 1] - b[:, 0])


def fit_state(domain, nodes, outputs, config=None, t=0, grid=None, previous=None,
              take_snapshot=False):
    """Build an :class:`EmulatorState` from nodes and oracle outputs."""
    config = config or EmulatorConfig()
    domain = np.atleast_2d(np.asarray(domain, float))
    nodes = np.atleast_2d(np.asarray(nodes, float))
    if nodes.shape[1] != domain.shape[0]:
        nodes = nodes.reshape(-1, domain.shape[0])
    outputs = np.asarray(outputs, float).reshape(nodes.shape[0], -1)
    interps = tuple(fit_interpolator(nodes, outputs[:, k], domain, config.lengthscale_grid,
                                     config.criterion, config.refine_lengthscale)
                    for k in range(outputs.shape[1]))
    grid = stopping_grid(domain) if grid is None else grid
    state = EmulatorState(domain, nodes, outputs, t, interps, config, grid, None, previous)
    if take_snapshot:
        state = replace(state, snapshot=state.predict(grid))
    return state


def initial_state(oracle: Oracle, initial_nodes, config=None):
    nodes = np.atleast_2d(np.asarray(initial_nodes, float))
    if nodes.shape[1] != oracle.dim:
        nodes = nodes.reshape(-1, oracle.dim)
    if nodes.shape[0] < 2:
        raise ValueError("need at least 2 initial nodes")
    lo, hi = oracle.bounds[:, 0], oracle.bounds[:, 1]
    if np.any(nodes < lo) or np.any(nodes > hi):
        raise ValueError("initial nodes must lie inside the oracle domain")
    outputs = np.array([oracle(y) for y in nodes])
    return fit_state(oracle.bounds, nodes, outputs, config)


# -- acquisition terms

def _terms(state, Y):
    Y = _points(Y, state.domain.shape[0])
    H = np.empty((Y.shape[0], state.K))
    D = np.empty((Y.shape[0], state.K))
    for k, f in enumerate(state.interpolators):
        H[:, k], D[:, k] = f.terms(Y)
    return H, D


def diversity(state: EmulatorState, Y):
    """Interpolator predictive variance, shape (n, K); zero at every node."""
    return _terms(state, Y)[1]


def geometry(state: EmulatorState, Y):
    """Norm of the interpolant gradient in raw input units, shape (n, K)."""
    return _terms(state, Y)[0]


def tempering(t, gamma_temper) -> float:
    """``1 - exp(-gamma * t)``: 0 at t=0, increasing towards 1."""
    if t < 0 or gamma_temper < 0:
        raise ValueError("t and gamma must be non-negative")
    return -math.expm1(-gamma_temper * t)


def _log_acquisition(state, Y, beta):
    H, D = _terms(state, Y)
    with np.errstate(divide="ignore"):
        logD = np.log(D).sum(axis=1)
        if beta == 0:
            return logD
        logH = np.log(np.maximum(H, H_FLOOR)).sum(axis=1)
    return beta * logH + logD


def acquisition(state: EmulatorState, Y):
    """``[prod_k max(H_k, 1e-12)]^beta_t * prod_k D_k`` at each row of Y."""
    beta = tempering(state.t, state.config.gamma_temper)
    return np.exp(_log_acquisition(state, Y, beta))


def _too_close(state, Y):
    tol = state.config.min_separation * float(np.max(state.domain[:, 1] - state.domain[:, 0]))
    return np.sqrt(sq_dist(_points(Y, state.domain.shape[0]), state.nodes)).min(axis=1) < tol


def maximize_acquisition(state: EmulatorState, cfg: AnnealConfig | None = None):
    """Next node: annealing maximizer of the acquisition.

    Falls back to the best point of a scrambled Sobol probe set when the
    acquisition is numerically zero everywhere the chains went. Returns
    ``(y_new, acquisition value)``.
    """
    if state.m < 1:
        raise ValueError("state has no nodes")
    cfg = cfg or state.config.anneal
    beta = tempering(state.t, state.config.gamma_temper)
    rng = np.random.default_rng([cfg.seed, state.t])

    def log_f(Y):
        return _log_acquisition(state, Y, beta)

    y, f = anneal(log_f, state.domain, cfg, rng)
    if not np.isfinite(f) or _too_close(state, y[None, :])[0]:
        logger.debug("annealing collapsed onto nodes; using probe fallback")
        b = state.domain
        probe = b[:, 0] + sobol_points(b.shape[0], state.config.fallback_probe, scramble=True,
                                       seed=int(rng.integers(2**31))) * (b[:, 1] - b[:, 0])
        vals = log_f(probe)
        vals[_too_close(state, probe)] = -np.inf
        i = int(np.argmax(vals))
        y, f = probe[i], vals[i]
    return y, float(np.exp(f))


def step(state: EmulatorState, oracle: Oracle, cfg: AnnealConfig | None = None, y_new=None):
    """Add one node (the acquisition maximizer unless ``y_new`` is given)."""
    acq = float("nan")
    if y_new is None:
        y_new, acq = maximize_acquisition(state, cfg)
    y_new = np.asarray(y_new, float).ravel()
    x_new = oracle(y_new)
    nodes = np.vstack([state.nodes, y_new])
    outputs = np.vstack([state.outputs, x_new])
    new = fit_state(state.domain, nodes, outputs, state.config, t=state.t + 1,
                    grid=state.stopping_grid, previous=state.snapshot, take_snapshot=True)
    return replace(new, last_acquisition=acq)


def stopping_distance(state: EmulatorState) -> float:
    """RMS change of the interpolant over the stopping grid since the last step.

    Maximum over outputs; ``inf`` until two snapshots exist.
    """
    if state.snapshot is None or state.previous is None:
        return math.inf
    diff = state.snapshot - state.previous
    return float(np.max(np.sqrt(np.mean(diff**2, axis=0))))


def truth_error(state: EmulatorState, truth):
    """MSE against ground truth ``(Y_grid, G_grid)``, averaged over outputs."""
    Y, G = truth
    return float(np.mean((state.predict(Y) - np.asarray(G).reshape(len(Y), -1)) ** 2))


@dataclass(frozen=True)
class StopRule:
    """Stop when the successive-interpolant distance is <= ``epsilon``,
    when ``m`` reaches ``max_nodes``, or (if set and ground truth is given)
    when the true RMSE is <= ``truth_epsilon``."""

    epsilon: float = 0.0
    max_nodes: int = 50
    truth_epsilon: float | None = None


@dataclass
class EmulationRecord:
    """Per-iteration history of a run. Row 0 describes the initial design."""

    rows: list = field(default_factory=list)

    def column(self, name):
        return [r[name] for r in self.rows]


def _record_row(state, truth):
    row = {
        "t": state.t,
        "m": state.m,
        "node": tuple(float(v) for v in state.nodes[-1]),
        "acquisition": state.last_acquisition,
        "stop_distance": stopping_distance(state),
        "true_mse": float("nan"),
    }
    if truth is not None:
        row["true_mse"] = truth_error(state, truth)
    return row


def run(oracle: Oracle, initial_nodes, config: EmulatorConfig | None = None,
        stop: StopRule | None = None, truth=None, proposals=None):
    """Run the emulation loop.

    ``proposals`` (optional) is a sequence of points used instead of the
    acquisition maximizer, which turns the loop into a sequential baseline
    design evaluated with identical interpolators. Returns
    ``(final state, EmulationRecord)``.
    """
    config = config or EmulatorConfig()
    stop = stop or StopRule()
    state = initial_state(oracle, initial_nodes, config)
    record = EmulationRecord([_record_row(state, truth)])
    feed = iter(proposals) if proposals is not None else None

    def done(st, row):
        if st.m >= stop.max_nodes:
            return True
        dist = stopping_distance(st)
        # the +inf sentinel means "nothing to compare yet", never "converged"
        if math.isfinite(dist) and dist <= stop.epsilon:
            return True
        if stop.truth_epsilon is not None and truth is not None:
            return math.sqrt(row["true_mse"]) <= stop.truth_epsilon
        return False

    if state.m >= stop.max_nodes or done(state, record.rows[0]):
        return state, record
    while True:
        if feed is not None:
            try:
                y = next(feed)
            except StopIteration:
                break
            state = step(state, oracle, y_new=y)
        else:
            state = step(state, oracle, config.anneal)
        row = _record_row(state, truth)
        record.rows.append(row)
        if done(state, row):
            break
    return state, record
