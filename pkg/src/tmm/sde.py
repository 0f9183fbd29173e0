"""SDE dynamics ``dX = r(t, X) dt + sigma(t, X) L dW`` and Euler-Maruyama paths.

``W`` is a standard D-dimensional Brownian motion with independent
components and ``L`` is the lower Cholesky factor of the correlation
matrix, so the effective diffusion is ``sigma L``.
"""

import numpy as np

from .errors import DomainError, InvalidArgumentError

#: Distance above ``-shift`` at which the SABR forward is absorbed.
ABSORPTION_GAP = 1e-12


def _cholesky(corr, dim):
    C = np.asarray(corr, dtype=float)
    if C.shape != (dim, dim):
        raise InvalidArgumentError(f"correlation must be {dim}x{dim}")
    if not np.allclose(C, C.T, atol=1e-14) or not np.allclose(np.diag(C), 1.0):
        raise InvalidArgumentError("correlation must be symmetric with unit diagonal")
    w, V = np.linalg.eigh(C)
    if w[0] < -1e-12:
        raise InvalidArgumentError("correlation matrix is not positive semi-definite")
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        # singular but PSD: use the symmetric square root
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


class SdeModel:
    """Vectorized drift and diffusion fields with a correlation matrix.

    ``drift(t, X)`` maps ``(n, D)`` states to ``(n, D)``; ``diffusion(t, X)``
    returns ``(n, D, D)`` matrices.
    """

    martingale = False

    def __init__(self, dim, drift, diffusion, correlation=None, name="custom"):
        self.dim = int(dim)
        self.drift = drift
        self.diffusion = diffusion
        self.correlation = np.eye(self.dim) if correlation is None else np.asarray(correlation, float)
        self.chol = _cholesky(self.correlation, self.dim)
        self.name = name

    def check_state(self, X):
        if not np.all(np.isfinite(X)):
            raise DomainError("non-finite state")

    def effective_diffusion(self, t, X):
        return self.diffusion(t, X) @ self.chol

    def step(self, t, X, dt, Z):
        """One Euler-Maruyama step from ``X`` with standard normal draws ``Z``."""
        dW = np.sqrt(dt) * Z
        return X + self.drift(t, X) * dt + np.einsum("nij,nj->ni", self.effective_diffusion(t, X), dW)

    @property
    def id(self):
        return self.name


def drift_preset(kind, dim, value=None):
    """Named drift fields: ``zero``, ``constant`` (vector), ``mean-reverting`` ((speed, level))."""
    if kind == "zero":
        return lambda t, X: np.zeros_like(X)
    if kind == "constant":
        v = np.broadcast_to(np.asarray(value, float), (dim,)).copy()
        return lambda t, X: np.broadcast_to(v, X.shape).copy()
    if kind == "mean-reverting":
        speed, level = value
        return lambda t, X: speed * (level - X)
    raise InvalidArgumentError(f"unknown drift preset {kind!r}")


def diffusion_preset(kind, dim, value=None):
    """Named diffusion fields: ``zero``, ``constant`` (per-coordinate vol), ``geometric`` (vol * x)."""
    if kind == "zero":
        return lambda t, X: np.zeros((len(X), dim, dim))
    v = np.broadcast_to(np.asarray(value if value is not None else 1.0, float), (dim,)).copy()
    if kind == "constant":
        return lambda t, X: np.broadcast_to(np.diag(v), (len(X), dim, dim)).copy()
    if kind == "geometric":
        return lambda t, X: v[None, :, None] * np.eye(dim)[None] * X[:, :, None]
    raise InvalidArgumentError(f"unknown diffusion preset {kind!r}")


class SabrModel(SdeModel):
    """Shifted SABR: ``dF = a (F + s)^beta dW1``, ``da = nu a dW2``, ``corr(dW1, dW2) = rho12``.

    The volatility is stepped exactly in log space; the forward uses an
    arithmetic Euler step floored at ``-s + ABSORPTION_GAP``.
    """

    def __init__(self, F0=0.03, alpha0=0.10, beta=1.0, nu=0.10, shift=0.0, rho12=0.5):
        if not 0.0 <= beta <= 1.0:
            raise InvalidArgumentError("beta must lie in [0, 1]")
        if nu < 0:
            raise InvalidArgumentError("nu must be nonnegative")
        if shift < 0:
            raise InvalidArgumentError("shift must be nonnegative")
        if not -1.0 < rho12 < 1.0:
            raise InvalidArgumentError("rho12 must lie in (-1, 1)")
        if alpha0 <= 0:
            raise InvalidArgumentError("alpha0 must be positive")
        if F0 + shift <= 0:
            raise DomainError("F0 + shift must be positive")
        self.F0, self.alpha0, self.beta = float(F0), float(alpha0), float(beta)
        self.nu, self.shift, self.rho12 = float(nu), float(shift), float(rho12)
        corr = np.array([[1.0, rho12], [rho12, 1.0]])
        super().__init__(2, self._drift, self._diffusion, corr, name="sabr")

    @property
    def martingale(self):
        return True

    @property
    def x0(self):
        return np.array([self.F0, self.alpha0])

    @property
    def id(self):
        return (f"sabr(F0={self.F0:g},alpha0={self.alpha0:g},beta={self.beta:g},"
                f"nu={self.nu:g},shift={self.shift:g},rho12={self.rho12:g})")

    def check_state(self, X):
        super().check_state(X)
        if np.any(X[:, 0] + self.shift <= 0):
            raise DomainError("SABR state requires F + shift > 0")

    def _drift(self, t, X):
        return np.zeros_like(X)

    def _diffusion(self, t, X):
        out = np.zeros((len(X), 2, 2))
        out[:, 0, 0] = X[:, 1] * (X[:, 0] + self.shift) ** self.beta
        out[:, 1, 1] = self.nu * X[:, 1]
        return out

    def step(self, t, X, dt, Z):
        F, a = X[:, 0], X[:, 1]
        dW1 = np.sqrt(dt) * Z[:, 0]
        dW2 = np.sqrt(dt) * (self.rho12 * Z[:, 0] + np.sqrt(1 - self.rho12 ** 2) * Z[:, 1])
        Fn = F + a * np.maximum(F + self.shift, 0.0) ** self.beta * dW1
        Fn = np.maximum(Fn, -self.shift + ABSORPTION_GAP)
        an = a * np.exp(self.nu * dW2 - 0.5 * self.nu ** 2 * dt)
        return np.column_stack([Fn, an])


def drift_diffusion(model, t, x):
    """Drift vector and effective diffusion matrix ``sigma L`` at one state."""
    X = np.asarray(x, dtype=float).reshape(1, model.dim)
    model.check_state(X)
    return model.drift(t, X)[0], model.effective_diffusion(t, X)[0]


def _check_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise InvalidArgumentError("time grid must start at 0 and increase strictly")
    return t


def euler_paths(model, t_grid, n_paths, seed=0, x0=None):
    """Simulated paths on ``t_grid``, shape ``(len(t_grid), n_paths, D)``.

    Deterministic in ``seed``.  ``x0`` defaults to the model's initial state.
    """
    t = _check_grid(t_grid)
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    out = np.empty((len(t), n_paths, model.dim))
    out[0] = x0
    for j in range(len(t) - 1):
        Z = rng.standard_normal((n_paths, model.dim))
        out[j + 1] = model.step(t[j], out[j], t[j + 1] - t[j], Z)
    return out


def terminal_values(model, T, n_paths, seed=0, n_steps=256, x0=None, block=1 << 16):
    """States at time ``T`` for ``n_paths`` paths, simulated in independent blocks.

    Block ``b`` draws from the ``b``-th child of ``SeedSequence(seed)``, so the
    result does not depend on how blocks are scheduled.
    """
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)
    dt = T / n_steps
    n_blocks = -(-n_paths // block)
    seeds = np.random.SeedSequence(seed).spawn(n_blocks)
    out = np.empty((n_paths, model.dim))
    for b, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        n = min(block, n_paths - b * block)
        X = np.broadcast_to(x0, (n, model.dim)).copy()
        for j in range(n_steps):
            X = model.step(j * dt, X, dt, rng.standard_normal((n, model.dim)))
        out[b * block:b * block + n] = X
    return out


def monte_carlo_expectation(model, T, phi, n_paths=1_000_000, seed=0, n_steps=256, x0=None):
    """Euler-Maruyama estimate of ``E[phi(X_T)]`` and its standard error.

    ``phi`` maps ``(n, D)`` states to ``(n,)`` or ``(n, M)`` values.
    """
    X = terminal_values(model, T, n_paths, seed, n_steps, x0)
    v = np.asarray(phi(X), dtype=float)
    return v.mean(axis=0), v.std(axis=0, ddof=1) / np.sqrt(len(v))
