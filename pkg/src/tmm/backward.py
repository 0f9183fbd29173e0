"""Backward solver: transition matrices on the particle grid, fair values and sensitivities.

``Pi[n, m]`` is the share of the auxiliary children launched from particle
``n`` at ``t_j`` that is credited to particle ``m`` at ``t_{j+1}``.  Fair
values are rolled back with ``P(t_j) = Pi_j P(t_{j+1})``.
"""

import re
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import InvalidArgumentError, NumericalError
from .kernels import GaussianKernel

SINKHORN_TOL = 1e-8
SINKHORN_MAX_SWEEPS = 10_000
#: Row mass spread uniformly before Sinkhorn scaling.
SINKHORN_FLOOR = 1e-5
#: Largest condition number accepted for the regularized Gram matrix.
#: Width of the sensitivity kernel in units of the particle spread.
SENSITIVITY_WIDTH = 3.0
#: Uniform mass mixed into rows before moment matching.
TILT_FLOOR = 1e-8
MAX_CONDITION = 1e14


@dataclass
class TransitionMatrix:
    source_time: float
    target_time: float
    pi: np.ndarray
    stochastic_kind: str = "row-stochastic"
    #: Largest row-mean mismatch left by moment matching, in units of the particle spread.
    moment_residual: float = 0.0

    def __matmul__(self, other):
        return self.pi @ other

    def row_residual(self):
        return float(np.abs(self.pi.sum(axis=1) - 1).max())

    def column_residual(self):
        return float(np.abs(self.pi.sum(axis=0) - 1).max())


@dataclass
class FairValueSurface:
    """Values ``P(t_j, y^n)`` for every grid time, ``N x M`` per time."""

    times: np.ndarray
    values: list
    payoff_ids: list

    @property
    def price(self):
        """Mean over the initial particles, which all sit at ``y0``."""
        return self.values[0].mean(axis=0)


def sinkhorn(P, tol=SINKHORN_TOL, max_sweeps=SINKHORN_MAX_SWEEPS):
    """Alternate row and column normalization until both sums are within ``tol`` of 1."""
    P = np.array(P, dtype=float)
    res = np.inf
    for _ in range(max_sweeps):
        P /= P.sum(axis=0, keepdims=True)
        P /= P.sum(axis=1, keepdims=True)
        res = np.abs(P.sum(axis=0) - 1).max()
        if res <= tol:
            return P
    raise NumericalError(f"Sinkhorn did not converge in {max_sweeps} sweeps (residual {res:.3e})")


def _standardize(Y, *others):
    m = Y.mean(axis=0)
    sd = Y.std(axis=0)
    sd[sd == 0] = 1.0
    return [(A - m) / sd for A in (Y,) + others]


def _nearest_counts(Y, cloud, parents, N):
    Z, C = _standardize(Y, cloud)
    counts = np.zeros((N, len(Y)))
    np.add.at(counts, (parents, cKDTree(Z).query(C)[1]), 1.0)
    return counts


def _barycentric_counts(Y, cloud, parents, N):
    """Each child spreads unit mass over the vertices of its enclosing simplex.

    The weights are the child's barycentric coordinates, so the mass keeps
    the child's position; children outside the convex hull of ``Y`` go to
    their nearest particle.
    """
    Z, C = _standardize(Y, cloud)
    M, D = C.shape
    counts = np.zeros((N, len(Y)))
    if D == 1:
        order = np.argsort(Z[:, 0])
        z = Z[order, 0]
        k = np.clip(np.searchsorted(z, C[:, 0]), 1, len(z) - 1)
        inside = (C[:, 0] >= z[0]) & (C[:, 0] <= z[-1])
        lo, hi = z[k - 1], z[k]
        w = np.where(hi > lo, (C[:, 0] - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
        idx = np.column_stack([order[k - 1], order[k]])
        bary = np.column_stack([1 - w, w])
    else:
        try:
            tri = Delaunay(Z)
        except QhullError:
            return _nearest_counts(Y, cloud, parents, N)
        simplex = tri.find_simplex(C)
        inside = simplex >= 0
        T = tri.transform[simplex[inside]]
        b = np.einsum("nij,nj->ni", T[:, :D], C[inside] - T[:, D])
        idx = np.zeros((M, D + 1), dtype=int)
        bary = np.zeros((M, D + 1))
        idx[inside] = tri.simplices[simplex[inside]]
        bary[inside] = np.clip(np.column_stack([b, 1 - b.sum(axis=1)]), 0.0, None)
    rows = np.repeat(parents[inside], idx.shape[1])
    np.add.at(counts, (rows, idx[inside].ravel()), bary[inside].ravel())
    if (~inside).any():
        near = cKDTree(Z).query(C[~inside])[1]
        np.add.at(counts, (parents[~inside], near), 1.0)
    return counts


def tilt_rows(P, Y, targets, iters=50):
    """Exponentially tilt each row of ``P`` so its mean of ``Y`` equals the row's target.

    Row ``n`` becomes ``P[n, m] exp(theta_n . y^m) / Z_n``: the closest row in
    relative entropy with the prescribed mean.  ``theta_n`` minimizes the
    convex dual by damped Newton steps.  Targets outside the convex hull of
    a row's support cannot be met; those rows move as far as the
    iteration budget allows.  Returns the tilted matrix and, per row, the
    remaining mismatch in units of the spread of ``Y``.
    """
    Z, T = _standardize(Y, targets)
    N, D = Z.shape
    logP = np.log(np.where(P > 0, P, 1e-300))
    theta = np.zeros((len(P), D))

    def dual(th):
        A = logP + th @ Z.T - (th * T).sum(axis=1, keepdims=True)
        mx = A.max(axis=1, keepdims=True)
        W = np.exp(A - mx)
        s = W.sum(axis=1, keepdims=True)
        return (np.log(s) + mx)[:, 0], W / s

    f, W = dual(theta)
    for _ in range(iters):
        mean = W @ Z
        g = mean - T
        if np.abs(g).max() < 1e-12:
            break
        cov = np.einsum("nm,md,me->nde", W, Z, Z) - mean[:, :, None] * mean[:, None, :]
        step = np.linalg.solve(cov + 1e-12 * np.eye(D), g[:, :, None])[:, :, 0]
        t = np.ones((len(P), 1))
        for _ in range(30):
            fn, _ = dual(theta - t * step)
            bad = fn > f + 1e-14
            if not bad.any():
                break
            t[bad] *= 0.5
        t[bad] = 0.0
        theta = theta - t * step
        f, W = dual(theta)
    return W, np.abs(W @ Z - T).max(axis=1)


def transition_matrix(flow, j, martingale=False, scheme="barycentric", moment_match=True):
    """Transition matrix of step ``t_j -> t_{j+1}`` from the recorded auxiliary cloud.

    ``scheme`` chooses how children are counted: ``nearest`` credits the
    particle nearest to each child, ``barycentric`` spreads each child over
    its enclosing simplex.  Rows without children fall back to the uniform
    distribution.  With ``moment_match`` each row is then tilted so its
    mean state equals the mean of that particle's children.  With
    ``martingale`` set, a uniform floor of total mass ``SINKHORN_FLOOR`` is
    added to every row and the result is Sinkhorn-scaled to a bi-stochastic
    matrix; the floor makes the scaling converge linearly even when some
    particle receives few or no children.
    """
    if not 0 <= j < len(flow.steps):
        raise InvalidArgumentError(f"step index {j} out of range")
    if scheme not in ("nearest", "barycentric"):
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    rec = flow.steps[j]
    N = flow.N
    Y = flow.points(j + 1)
    count = _barycentric_counts if scheme == "barycentric" else _nearest_counts
    counts = count(Y, rec.cloud, rec.parents, N)
    rows = counts.sum(axis=1)
    empty = rows == 0
    if empty.any():
        warnings.warn(f"{empty.sum()} particles without children at step {j}; using uniform rows")
        counts[empty] = 1.0
        rows[empty] = N
    pi = counts / rows[:, None]
    residual = 0.0
    if moment_match:
        n_children = np.bincount(rec.parents, minlength=N)
        targets = np.zeros((N, flow.D))
        np.add.at(targets, rec.parents, rec.cloud)
        has = n_children > 0
        targets[has] /= n_children[has, None]
        targets[~has] = pi[~has] @ Y
        # full support lets every row reach targets outside its local simplices
        pi, res = tilt_rows((pi + TILT_FLOOR / N) / (1.0 + TILT_FLOOR), Y, targets)
        residual = float(res.max())
    kind = "row-stochastic"
    if martingale:
        pi = (pi + SINKHORN_FLOOR / N) / (1.0 + SINKHORN_FLOOR)
        pi = sinkhorn(pi)
        kind = "bi-stochastic"
    return TransitionMatrix(float(flow.times[j]), float(flow.times[j + 1]), pi, kind, residual)


def transition_matrices(flow, martingale=False, scheme="barycentric", moment_match=True):
    return [transition_matrix(flow, j, martingale, scheme, moment_match)
            for j in range(len(flow.steps))]


def _payoff_values(payoff, t, Y, M=None):
    v = np.asarray(payoff(t, Y), dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != len(Y) or (M is not None and v.shape[1] != M):
        raise InvalidArgumentError(f"payoff returned shape {v.shape} for {len(Y)} points")
    return v


def backward_solve(flow, matrices, payoff, pay_times=None, payoff_ids=None):
    """Fair-value surface by backward recursion over the particle grid.

    ``payoff(t, Y)`` returns an ``(N,)`` or ``(N, M)`` array.  It is paid at
    the terminal time and, in addition, at every time in ``pay_times``
    (a subset of the grid) with left-endpoint weight ``t_{j+1} - t_j``.
    """
    times = flow.times
    J = len(times) - 1
    if len(matrices) != J:
        raise InvalidArgumentError(f"expected {J} transition matrices, got {len(matrices)}")
    for j, m in enumerate(matrices):
        if m.pi.shape != (flow.N, flow.N):
            raise InvalidArgumentError(f"matrix {j} has shape {m.pi.shape}, expected {(flow.N, flow.N)}")
    pay_idx = set()
    for s in (pay_times or []):
        hit = np.flatnonzero(np.isclose(times, s, rtol=0, atol=1e-12))
        if len(hit) == 0:
            raise InvalidArgumentError(f"pay time {s} is not on the grid")
        pay_idx.add(int(hit[0]))

    V = _payoff_values(payoff, times[J], flow.points(J))
    M = V.shape[1]
    values = [None] * (J + 1)
    values[J] = V
    for j in range(J - 1, -1, -1):
        V = matrices[j].pi @ V
        if j in pay_idx:
            V = V + (times[j + 1] - times[j]) * _payoff_values(payoff, times[j], flow.points(j), M)
        values[j] = V
    ids = payoff_ids or [f"payoff{i}" for i in range(M)]
    return FairValueSurface(np.array(times), values, list(ids))


def forward_value(flow, matrices, surface, s):
    """Expected fair value at time ``s`` seen from ``y0``: the Pi chain up to ``s``, averaged."""
    times = flow.times
    if s < times[0] - 1e-12:
        raise InvalidArgumentError("s precedes the initial time")
    hit = np.flatnonzero(np.isclose(times, s, rtol=0, atol=1e-12))
    if len(hit) == 0:
        raise InvalidArgumentError(f"time {s} is not on the grid")
    k = int(hit[0])
    V = surface.values[k]
    for j in range(k - 1, -1, -1):
        V = matrices[j].pi @ V
    return V.mean(axis=0)


def differentiation_matrix(kernel, Y, lam=None, X=None, center=True):
    """Kernel-interpolation derivative ``G = grad_1 K(X, Y) (K(Y, Y) + lam I)^{-1}``.

    With ``center`` the values are interpolated as deviations from their
    mean, so ``G`` maps constant vectors to zero; without it, kernel
    sections ``K(., y_n)`` are reproduced exactly when ``lam = 0``.  Returns shape ``(n_X, D, N)``; ``X`` defaults
    to ``Y``.  ``lam`` defaults
    to ``1e-8 trace(K) / N``.
    """
    Y = np.asarray(Y, dtype=float)
    X = Y if X is None else np.atleast_2d(np.asarray(X, dtype=float))
    K = kernel(Y, Y)
    K = 0.5 * (K + K.T)
    N = len(Y)
    if lam is None:
        lam = 1e-8 * np.trace(K) / N
    A = K + lam * np.eye(N)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"regularized Gram matrix is ill-conditioned (condition {cond:.3e})")
    dK = kernel.gradient(X, Y)  # (n_X, N, D)
    G = np.linalg.solve(A, dK.reshape(len(X), N, -1).transpose(1, 0, 2).reshape(N, -1))
    # A is symmetric, so solve(A, dK^T) = (dK A^{-1})^T
    G = G.reshape(N, len(X), -1).transpose(1, 2, 0)
    if center:
        G = G - G.mean(axis=-1, keepdims=True)
    return G


def sensitivity_kernel(Y, width=SENSITIVITY_WIDTH):
    """Gaussian kernel with per-coordinate scale ``width`` times the spread of ``Y``."""
    Y = np.asarray(Y, dtype=float)
    sd = np.maximum(Y.std(axis=0), 1e-12 * np.maximum(np.abs(Y.mean(axis=0)), 1.0))
    return GaussianKernel(Y.shape[1], width * sd)


def sensitivity(flow, surface, j, lam=None, at=None, kernel=None):
    """Gradient of the fair value at time ``t_j``, shape ``(n, D, M)``.

    By default the gradient is taken at the particles ``Y(t_j)``; ``at``
    evaluates the interpolant's gradient at other points.  Step 0 uses the
    first step's particles and values evaluated at ``y0``, because the
    initial particles all sit at ``y0``.  ``kernel`` defaults to
    :func:`sensitivity_kernel` of the particles: a smooth kernel, since the
    derivative of an exponential-kernel interpolant jumps at every center.
    """
    if not 0 <= j < len(flow.times):
        raise InvalidArgumentError(f"time index {j} out of range")
    src = 1 if j == 0 else j
    Y = flow.points(src)
    kernel = sensitivity_kernel(Y) if kernel is None else kernel
    V = surface.values[src]
    if j == 0 and at is None:
        at = flow.y0[None]
    G = differentiation_matrix(kernel, Y, lam, X=None if at is None else at)
    return np.einsum("xdn,nm->xdm", G, V)


# -- payoff mini-language ----------------------------------------------------

_CALL = re.compile(r"^(call|put)\(\s*(?:F\s*,)?\s*(.*)\)$")


class Payoff:
    """Parsed payoff: callable ``(t, Y) -> (N, M)`` with an identifier per column.

    Grammar::

        payoff := term | "sum(" term ("," term)* ")"
        term   := "call(F, strike=K[, T=t])" | "put(F, strike=K[, T=t])"
                | "linear(a1, ..., aD)" | "const(c)"

    Each top-level term (or each ``sum``) is one instrument column; several
    instruments are separated by ``;``.
    """

    def __init__(self, text):
        self.text = text
        self.instruments = [s.strip() for s in text.split(";") if s.strip()]
        if not self.instruments:
            raise InvalidArgumentError("empty payoff specification")
        self._funcs = [_parse(s) for s in self.instruments]

    @property
    def ids(self):
        return list(self.instruments)

    def __call__(self, t, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return np.column_stack([f(t, Y) for f in self._funcs])


def _split_args(body):
    out, depth, cur = [], 0, ""
    for ch in body:
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def _parse(text):
    text = text.strip()
    try:
        if text.startswith("sum(") and text.endswith(")"):
            terms = [_parse(a) for a in _split_args(text[4:-1])]
            return lambda t, Y: sum(f(t, Y) for f in terms)
        m = _CALL.match(text)
        if m:
            kw = dict(_kv(a) for a in _split_args(m.group(2)))
            strike = float(kw.pop("strike"))
            kw.pop("T", None)
            if kw:
                raise InvalidArgumentError(f"unknown arguments {sorted(kw)}")
            sign = 1.0 if m.group(1) == "call" else -1.0
            return lambda t, Y: np.maximum(sign * (Y[:, 0] - strike), 0.0)
        if text.startswith("linear(") and text.endswith(")"):
            a = np.array([float(v) for v in _split_args(text[7:-1])])

            def linear(t, Y):
                if Y.shape[1] != len(a):
                    raise InvalidArgumentError(f"linear payoff has {len(a)} coefficients for D={Y.shape[1]}")
                return Y @ a
            return linear
        if text.startswith("const(") and text.endswith(")"):
            c = float(text[6:-1])
            return lambda t, Y: np.full(len(Y), c)
    except (KeyError, ValueError) as exc:
        raise InvalidArgumentError(f"cannot parse payoff {text!r}: {exc}") from None
    raise InvalidArgumentError(f"cannot parse payoff {text!r}")


def _kv(arg):
    k, sep, v = arg.partition("=")
    if not sep:
        raise InvalidArgumentError(f"expected key=value, got {arg!r}")
    return k.strip(), v.strip()


def parse_payoff(text):
    return Payoff(text)
