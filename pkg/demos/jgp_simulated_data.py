"""
Mixing field and simulated samples
==================================

A field campaign gives few labelled samples; a radiative transfer model
gives many, but with a bias. The joint GP puts both in one regression and
learns how much to trust the simulated rows through ``gamma``: their noise
variance is ``sigma_e^2 / gamma``.

Here the simulator is good for the first site settings and poor for the
second, and the leave-one-out score over field rows picks ``gamma``.
"""

import numpy as np

from physgp.jgp import JGPGrid, TaggedDataset, fit_jgp, optimize_jgp, predict_jgp

rng = np.random.default_rng(0)
f = lambda x: np.sin(2 * x[:, 0])

X_real = rng.uniform(-2, 2, size=(15, 1))
y_real = f(X_real) + 0.2 * rng.normal(size=15)
X_sim = rng.uniform(-2, 2, size=(60, 1))
X_test = np.linspace(-2, 2, 200)[:, None]

grid = JGPGrid(gammas=tuple(np.logspace(-3, 3, 13)))
rmse = lambda mu: np.sqrt(np.mean((mu - f(X_test)) ** 2))

# reference: field rows only
field = TaggedDataset(X_real, y_real, np.ones(15, bool))
mu, _ = predict_jgp(fit_jgp(field, optimize_jgp(field, JGPGrid(gammas=(1.0,)))), X_test)
print(f"{'field rows only':20s} {'':14s}  test RMSE={rmse(mu):.3f}")

for label, y_sim in [("faithful simulator", f(X_sim) + 0.02 * rng.normal(size=60)),
                     ("biased simulator", f(X_sim) + 0.8)]:
    data = TaggedDataset(np.vstack([X_real, X_sim]), np.r_[y_real, y_sim],
                         np.r_[np.ones(15, bool), np.zeros(60, bool)])
    hp = optimize_jgp(data, grid)
    mu, _ = predict_jgp(fit_jgp(data, hp), X_test)
    print(f"{label:20s} gamma={hp.gamma:8.3g}  test RMSE={rmse(mu):.3f}")

# The faithful simulator earns a large gamma; the biased one is pushed to
# the smallest gamma on the grid, so its rows barely count.
