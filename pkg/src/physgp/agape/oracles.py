"""Costly-function oracles the emulator queries.

An :class:`Oracle` wraps a deterministic vector function on a box domain and
counts evaluations, since evaluations are the resource being saved.
"""

from __future__ import annotations

import subprocess

import numpy as np


class OracleError(RuntimeError):
    """An oracle evaluation failed; ``point`` holds the offending input."""

    def __init__(self, message, point):
        super().__init__(f"{message} (at y={np.asarray(point).tolist()})")
        self.point = np.asarray(point, dtype=float)


class Oracle:
    """Deterministic function from a box in R^d to R^K.

    Parameters
    ----------
    func : callable
        Maps a length-d array to K values.
    bounds : array_like, shape (d, 2)
        Lower and upper bound per input dimension.
    output_dim : int
        K.
    name : str, optional
    """

    def __init__(self, func, bounds, output_dim, name="oracle"):
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        if bounds.shape[1] != 2 or np.any(bounds[:, 1] <= bounds[:, 0]):
            raise ValueError(f"bounds must be (d, 2) with lo < hi, got {bounds.tolist()}")
        self.func = func
        self.bounds = bounds
        self.output_dim = int(output_dim)
        self.name = name
        self.calls = 0

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).ravel()
        if y.shape != (self.dim,):
            raise ValueError(f"expected a point of dimension {self.dim}, got {y.shape}")
        self.calls += 1
        try:
            out = np.asarray(self.func(y), dtype=float).ravel()
        except OracleError:
            raise
        except Exception as exc:
            raise OracleError(f"{self.name} failed: {exc}", y) from exc
        if out.shape != (self.output_dim,):
            raise OracleError(
                f"{self.name} returned {out.size} values, expected {self.output_dim}", y)
        if not np.all(np.isfinite(out)):
            raise OracleError(f"{self.name} returned non-finite values", y)
        return out

    def evaluate_grid(self, Y) -> np.ndarray:
        """Evaluate many points without touching the call counter (ground truth)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return np.array([np.asarray(self.func(y), dtype=float).ravel() for y in Y])


def toy_log_pair(y):
    """The two-output test mapping ``[log y, 0.5 log(3y)]``."""
    y = float(np.asarray(y).ravel()[0])
    return np.array([np.log(y), 0.5 * np.log(3.0 * y)])


def pseudo_atmospheric(y):
    """Smooth stand-in for a top-of-atmosphere radiance at 760 nm.

    Inputs are aerosol optical thickness ``tau`` and ground elevation ``h``
    in km. Oxygen absorption depth decays quickly with elevation, aerosol
    attenuation of the surface signal competes with aerosol path radiance,
    and both scale with the aerosol load above the ground. Output is in
    arbitrary radiance units, roughly 0.15 to 3.5.
    """
    tau, h = np.asarray(y, dtype=float).ravel()[:2]
    t_gas = np.exp(-3.0 * np.exp(-h / 0.6))
    aerosol = tau * np.exp(-h / 2.0)
    surface = 0.35 * np.exp(-2.2 * aerosol)
    path = 0.25 * (1.0 - np.exp(-3.0 * aerosol))
    return np.array([10.0 * t_gas * (surface + path)])


BUILTIN = {
    "toy_log": dict(func=toy_log_pair, bounds=[[0.1, 10.0]], output_dim=2),
    "pseudo_atmospheric": dict(func=pseudo_atmospheric,
                               bounds=[[0.05, 0.4], [0.0, 3.0]], output_dim=1),
}

# initial designs used by the benchmarks
TOY_INITIAL_NODES = np.array([[0.1], [3.4], [6.7], [10.0]])
ATMOS_INITIAL_NODES = np.array([[0.05, 0.0], [0.05, 3.0], [0.4, 0.0], [0.4, 3.0], [0.2, 1.5]])


def make_oracle(name) -> Oracle:
    """Fresh oracle (with a zeroed counter) from the built-in registry."""
    try:
        spec = BUILTIN[name]
    except KeyError:
        raise KeyError(f"unknown oracle {name!r}; available: {sorted(BUILTIN)}") from None
    return Oracle(spec["func"], spec["bounds"], spec["output_dim"], name=name)


class ProcessOracle(Oracle):
    """Oracle backed by a child process speaking a line protocol.

    For each query one CSV line with the d input values is written to the
    child's stdin; the child answers with one line of K comma-separated
    numbers on stdout. Use as a context manager, or call :meth:`close`.
    """

    def __init__(self, command, bounds, output_dim, name=None):
        self.command = command if isinstance(command, (list, tuple)) else [command]
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1,
        )
        super().__init__(self._query, bounds, output_dim,
                         name=name or " ".join(map(str, self.command)))

    def _query(self, y):
        if self._proc.poll() is not None:
            raise OracleError(f"process exited with code {self._proc.returncode}", y)
        self._proc.stdin.write(",".join(repr(float(v)) for v in y) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise OracleError("process closed its output", y)
        try:
            return [float(v) for v in line.strip().split(",")]
        except ValueError:
            raise OracleError(f"unparseable reply {line.strip()!r}", y) from None

    def evaluate_grid(self, Y):
        return np.array([self._query(np.asarray(y, float)) for y in np.atleast_2d(Y)])

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdout:
            self._proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
