"""Non-adaptive baseline designs: random, Sobol, Latin hypercube."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import qmc

RANDOM = "RANDOM"
SOBOL = "SOBOL"
LHC = "LHC"
SEQ_LHC = "SEQ_LHC"
KINDS = (RANDOM, SOBOL, LHC, SEQ_LHC)


def _bounds(domain):
    b = np.atleast_2d(np.asarray(domain, dtype=float))
    if b.shape[1] != 2:
        raise ValueError(f"domain must be (d, 2), got {b.shape}")
    return b


def to_domain(U, domain):
    b = _bounds(domain)
    return b[:, 0] + np.asarray(U) * (b[:, 1] - b[:, 0])


def sobol_points(d, count, skip_origin=True, scramble=False, seed=None):
    """First ``count`` Sobol points in [0, 1)^d.

    The unscrambled sequence starts at the origin; with ``skip_origin`` it
    starts at the centre (0.5, ..., 0.5) instead.
    """
    offset = 1 if skip_origin and not scramble else 0
    n = count + offset
    m = max(int(np.ceil(np.log2(max(n, 1)))), 0)
    engine = qmc.Sobol(d, scramble=scramble, seed=seed)
    return engine.random_base2(m)[offset : offset + count]


def baseline_samplers(kind, domain, count, seed=0, scramble=False):
    """Return ``count`` points in the box ``domain`` (shape (d, 2)).

    RANDOM : i.i.d. uniform.
    SOBOL : Sobol sequence starting at the domain centre; ``seed`` only
        matters when ``scramble`` is set.
    LHC : one Latin hypercube design (one point per stratum in every
        coordinate), randomly ordered.
    SEQ_LHC : same design; meant to be released one point per iteration,
        in the returned order.
    """
    b = _bounds(domain)
    d = b.shape[0]
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.empty((0, d))
    kind = kind.upper()
    if kind == RANDOM:
        U = np.random.default_rng(seed).random((count, d))
    elif kind == SOBOL:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            U = sobol_points(d, count, scramble=scramble,
                             seed=seed if scramble else None)
    elif kind in (LHC, SEQ_LHC):
        U = qmc.LatinHypercube(d, seed=np.random.default_rng(seed)).random(count)
    else:
        raise ValueError(f"unknown sampler {kind!r}; expected one of {KINDS}")
    return to_domain(U, b)
