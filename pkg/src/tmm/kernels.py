"""Admissible kernels, Gram matrices and finite expansions in the native space.

Every kernel is an immutable callable: ``kernel(X, Y)`` returns the matrix
``K(x_i, y_j)`` for point arrays of shape ``(n, D)`` and ``(m, D)``, and
``kernel.gradient(X, Y)`` returns ``dK/dx`` with shape ``(n, m, D)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DegenerateInputError, InvalidArgumentError

#: Smallest admissible gap (infinity norm) between two points of a point set.
DISTINCT_TOL = 1e-12
#: Relative floor for Gram eigenvalues (fraction of the largest eigenvalue).
TOL_PD = 1e-10


def as_points(X, dim):
    """Coerce ``X`` to a float array of shape ``(n, dim)``.

    A 1-D array is read as a single point, except when ``dim == 1`` where
    it is read as a list of scalars.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1) if dim == 1 else X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != dim:
        raise InvalidArgumentError(
            f"expected points of dimension {dim}, got array of shape {X.shape}")
    return X


def min_separation(Y):
    """Minimum pairwise infinity-norm distance of the rows of ``Y``."""
    Y = np.asarray(Y, dtype=float)
    if len(Y) < 2:
        return np.inf
    return float(pdist(Y, "chebyshev").min())


def check_distinct(Y):
    if min_separation(Y) <= DISTINCT_TOL:
        raise DegenerateInputError(
            "point set contains (numerically) coincident points")


class Kernel:
    """Base class for symmetric positive-definite kernels on R^D."""

    kind = None

    def __init__(self, dim):
        if int(dim) != dim or dim < 1:
            raise InvalidArgumentError(f"dimension must be a positive integer, got {dim}")
        self.dim = int(dim)

    def __call__(self, X, Y=None):
        X = as_points(X, self.dim)
        Y = X if Y is None else as_points(Y, self.dim)
        return self._matrix(X, Y)

    def gradient(self, X, Y=None):
        """Gradient in the first argument, shape ``(n, m, D)``."""
        X = as_points(X, self.dim)
        Y = X if Y is None else as_points(Y, self.dim)
        return self._gradient(X, Y)

    def value_and_gradient(self, X, Y=None):
        """``(K(X, Y), dK/dx)`` computed together."""
        X = as_points(X, self.dim)
        Y = X if Y is None else as_points(Y, self.dim)
        return self._value_and_gradient(X, Y)

    def _value_and_gradient(self, X, Y):
        return self._matrix(X, Y), self._gradient(X, Y)

    def row_sums(self, X, Y):
        """``sum_j K(x_i, y_j)`` and ``sum_j dK/dx (x_i, y_j)``, shapes ``(n,)`` and ``(n, D)``."""
        X = as_points(X, self.dim)
        Y = as_points(Y, self.dim)
        return self._row_sums(X, Y)

    def _row_sums(self, X, Y):
        K, G = self._value_and_gradient(X, Y)
        return K.sum(axis=1), G.sum(axis=1)

    def paired(self, A, B):
        """``K(a_i, b_i)`` for matching rows of ``A`` and ``B``."""
        A = as_points(A, self.dim)
        B = as_points(B, self.dim)
        return self._paired(A, B)

    def _paired(self, A, B):
        return np.array([self._matrix(a[None], b[None])[0, 0] for a, b in zip(A, B)])

    def eval(self, x, y):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size != self.dim or y.size != self.dim:
            raise InvalidArgumentError(
                f"points must have dimension {self.dim}, got {x.size} and {y.size}")
        return float(self._matrix(x[None, :], y[None, :])[0, 0])

    def diag(self, X):
        X = as_points(X, self.dim)
        return np.array([self._matrix(x[None], x[None])[0, 0] for x in X])

    @property
    def id(self):
        return f"{self.kind}(D={self.dim})"

    def __repr__(self):
        return f"<{type(self).__name__} {self.id}>"

    def _matrix(self, X, Y):
        raise NotImplementedError

    def _gradient(self, X, Y):
        raise NotImplementedError


class TensorKernel(Kernel):
    """Product kernel ``prod_d k(x_d - y_d)`` of a stationary 1-D factor.

    Subclasses supply the log of the factor and its derivative; the
    gradient is then ``K * dlog k``.
    """

    def _log_factor(self, Z):
        raise NotImplementedError

    def _dlog_factor(self, Z):
        raise NotImplementedError

    def _matrix(self, X, Y):
        Z = X[:, None, :] - Y[None, :, :]
        return np.exp(self._log_factor(Z).sum(axis=-1))

    def _gradient(self, X, Y):
        return self._value_and_gradient(X, Y)[1]

    def _value_and_gradient(self, X, Y):
        Z = X[:, None, :] - Y[None, :, :]
        K = np.exp(self._log_factor(Z).sum(axis=-1))
        return K, K[..., None] * self._dlog_factor(Z)

    def _row_sums(self, X, Y):
        # one coordinate at a time keeps the work on (n, m) arrays
        diffs = [X[:, d, None] - Y[None, :, d] for d in range(self.dim)]
        logK = sum(self._log_factor_1d(Z, d) for d, Z in enumerate(diffs))
        K = np.exp(logK)
        G = np.column_stack([(K * self._dlog_factor_1d(Z, d)).sum(axis=1)
                             for d, Z in enumerate(diffs)])
        return K.sum(axis=1), G

    def _log_factor_1d(self, Z, d):
        e = np.zeros(self.dim)
        e[d] = 1.0
        return self._log_factor(Z[..., None] * e).sum(axis=-1)

    def _dlog_factor_1d(self, Z, d):
        e = np.zeros(self.dim)
        e[d] = 1.0
        return self._dlog_factor(Z[..., None] * e)[..., d]

    def _paired(self, A, B):
        return np.exp(self._log_factor(A - B).sum(axis=-1))

    def diag(self, X):
        X = as_points(X, self.dim)
        return np.full(len(X), np.exp(self._log_factor(np.zeros(self.dim)).sum()))


def _scale_vector(scale, dim):
    s = np.broadcast_to(np.asarray(scale, dtype=float), (dim,)).copy()
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise InvalidArgumentError(f"scale must be positive, got {scale}")
    return s


class TensorMaternKernel(TensorKernel):
    """Exponential kernel ``exp(-|x - y|_1 / scale)``.

    The factor has a kink at coincident coordinates; there the gradient
    uses ``sign(0) = 0``.
    """

    kind = "tensor-matern"

    def __init__(self, dim, scale=1.0):
        super().__init__(dim)
        self.scale = _scale_vector(scale, self.dim)

    def _log_factor(self, Z):
        return -np.abs(Z) / self.scale

    def _dlog_factor(self, Z):
        return -np.sign(Z) / self.scale

    def _log_factor_1d(self, Z, d):
        return -np.abs(Z) / self.scale[d]

    def _dlog_factor_1d(self, Z, d):
        return -np.sign(Z) / self.scale[d]

    @property
    def id(self):
        return f"tensor-matern(D={self.dim},scale={_fmt(self.scale)})"


class GaussianKernel(TensorKernel):
    """Gaussian kernel ``exp(-sum_d ((x_d - y_d) / scale_d)^2)``."""

    kind = "gaussian"

    def __init__(self, dim, scale=1.0):
        super().__init__(dim)
        self.scale = _scale_vector(scale, self.dim)

    def _log_factor(self, Z):
        return -(Z / self.scale) ** 2

    def _dlog_factor(self, Z):
        return -2.0 * Z / self.scale ** 2

    def _log_factor_1d(self, Z, d):
        return -(Z / self.scale[d]) ** 2

    def _dlog_factor_1d(self, Z, d):
        return -2.0 * Z / self.scale[d] ** 2

    @property
    def id(self):
        return f"gaussian(D={self.dim},scale={_fmt(self.scale)})"


#: Named activation functions for zonal kernels: (F, F').  Each has a power
#: series with nonnegative coefficients, so F(<x, y>) is admissible.
ACTIVATIONS = {
    "exp": (np.exp, np.exp),
}


class ZonalKernel(Kernel):
    """Zonal kernel ``F(<x, y> / scale^2)`` with a named activation ``F``."""

    kind = "zonal"

    def __init__(self, dim, activation="exp", scale=1.0):
        super().__init__(dim)
        if activation not in ACTIVATIONS:
            raise InvalidArgumentError(
                f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        if scale <= 0:
            raise InvalidArgumentError("scale must be positive")
        self.activation = activation
        self.scale = float(scale)
        self._F, self._dF = ACTIVATIONS[activation]

    def _matrix(self, X, Y):
        return self._F(X @ Y.T / self.scale ** 2)

    def _paired(self, A, B):
        return self._F(np.sum(A * B, axis=-1) / self.scale ** 2)

    def _gradient(self, X, Y):
        dF = self._dF(X @ Y.T / self.scale ** 2)
        return dF[..., None] * Y[None, :, :] / self.scale ** 2

    @property
    def id(self):
        return f"zonal(D={self.dim},activation={self.activation},scale={self.scale:g})"


class TransportedKernel(Kernel):
    """Kernel ``K(S(x), S(y))`` for a base kernel ``K`` and a transport map ``S``."""

    kind = "transported"

    def __init__(self, base, tmap):
        if base.dim != tmap.dim:
            raise InvalidArgumentError(
                f"kernel dimension {base.dim} does not match map dimension {tmap.dim}")
        super().__init__(base.dim)
        self.base = base
        self.map = tmap

    def _matrix(self, X, Y):
        return self.base._matrix(self.map.apply(X), self.map.apply(Y))

    def _paired(self, A, B):
        return self.base._paired(self.map.apply(A), self.map.apply(B))

    def _gradient(self, X, Y):
        return self._value_and_gradient(X, Y)[1]

    def _value_and_gradient(self, X, Y):
        K, G = self.base._value_and_gradient(self.map.apply(X), self.map.apply(Y))
        # componentwise maps have a diagonal Jacobian
        return K, G * self.map.jacobian_diag(X)[:, None, :]

    def _row_sums(self, X, Y):
        s, g = self.base._row_sums(self.map.apply(X), self.map.apply(Y))
        return s, g * self.map.jacobian_diag(X)

    @property
    def id(self):
        return f"transported({self.base.id},{self.map.id})"


def transported_kernel(base, tmap):
    return TransportedKernel(base, tmap)


def _fmt(v):
    v = np.atleast_1d(v)
    if np.all(v == v[0]):
        return f"{v[0]:g}"
    return "[" + ",".join(f"{x:g}" for x in v) + "]"


def gram(kernel, Y):
    """Gram matrix ``K(Y, Y)``; raises on coincident points."""
    Y = as_points(Y, kernel.dim)
    check_distinct(Y)
    K = kernel(Y, Y)
    return 0.5 * (K + K.T)


def kernel_gradient(kernel, x, y):
    """Gradient of ``K(x, y)`` with respect to ``x`` as a length-D vector."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != kernel.dim or y.size != kernel.dim:
        raise InvalidArgumentError(
            f"points must have dimension {kernel.dim}, got {x.size} and {y.size}")
    return kernel.gradient(x[None, :], y[None, :])[0, 0]


def is_admissible(K, tol=TOL_PD):
    """True when the symmetric matrix ``K`` is positive semi-definite up to ``tol``."""
    w = np.linalg.eigvalsh(0.5 * (K + K.T))
    return bool(w[0] > -tol * max(w[-1], 0.0))


@dataclass(frozen=True)
class RkhsElement:
    """Finite expansion ``f = sum_i c_i K(., x_i)``."""

    centers: np.ndarray
    weights: np.ndarray
    kernel: Kernel

    def __post_init__(self):
        centers = as_points(self.centers, self.kernel.dim)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(weights) != len(centers):
            raise InvalidArgumentError(
                f"{len(centers)} centers but {len(weights)} weights")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)

    def __call__(self, X):
        return self.kernel(X, self.centers) @ self.weights

    def inner(self, other):
        return float(self.weights @ self.kernel(self.centers, other.centers) @ other.weights)

    def norm(self):
        return rkhs_norm(self)


def rkhs_norm(f):
    """Native-space norm ``sqrt(c^T K(X, X) c)``."""
    if not np.any(f.weights):
        return 0.0
    sq = f.weights @ gram(f.kernel, f.centers) @ f.weights
    return float(np.sqrt(max(sq, 0.0)))
