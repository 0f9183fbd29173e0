"""Lattice-based periodic kernels built from a spectral profile on the dual lattice.

A lattice kernel is ``K(x, y) = |C|^{-1} sum_a rho(a) cos(2 pi <x - y, a>)``
where ``a`` runs over the dual lattice and ``rho`` is a nonnegative,
summable, even profile with ``rho(0) = 1``.

For rectangular lattices and the separable families (constant, Matern,
gaussian) the sum factorises over coordinates and every factor is evaluated
exactly (closed form for Matern, a fast-converging 1-D series for gaussian),
so no multi-dimensional support is ever enumerated.  Other lattices fall back
on the stored truncated support.
"""

import heapq
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, TruncationWarning
from .kernels import Kernel, as_points

DEFAULT_TRUNCATION = 1e-8
#: Hard cap on the number of stored dual-lattice points.
MAX_SUPPORT = 1 << 17


@dataclass(frozen=True, eq=False)
class Lattice:
    """Lattice spanned by the rows of ``generators``."""

    generators: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.generators, dtype=float))
        if G.shape[0] != G.shape[1]:
            raise InvalidArgumentError(f"generator matrix must be square, got {G.shape}")
        det = np.linalg.det(G)
        if abs(det) <= 1e-12:
            raise InvalidArgumentError("lattice generators are linearly dependent")
        object.__setattr__(self, "generators", G)
        object.__setattr__(self, "_inv", np.linalg.inv(G))

    @classmethod
    def unit(cls, dim):
        return cls(np.eye(dim))

    @property
    def dim(self):
        return self.generators.shape[0]

    @property
    def cell_volume(self):
        return float(abs(np.linalg.det(self.generators)))

    @property
    def dual_generators(self):
        """Rows ``l*_j`` with ``<l_i, l*_j> = delta_ij``."""
        return self._inv.T

    @property
    def is_rectangular(self):
        G = self.generators
        return bool(np.all(G == np.diag(np.diag(G))))

    @property
    def periods(self):
        return np.abs(np.diag(self.generators))

    def wrap(self, X):
        """Reduce points into the fundamental cell ``{u G : u in [0,1)^D}``."""
        X = as_points(X, self.dim)
        U = X @ self._inv
        U -= np.floor(U)
        U[U >= 1.0] = 0.0
        return U @ self.generators

    def sample(self, n, rng):
        return rng.random((n, self.dim)) @ self.generators

    def __repr__(self):
        return f"Lattice({self.generators.tolist()})"


def _matern_factor(omega, scale):
    return 1.0 / (1.0 + (2.0 * np.pi * scale * omega) ** 2)


def _gaussian_factor(omega, scale):
    return np.exp(-(np.pi * scale * omega) ** 2)


def _constant_factor(omega, scale):
    return np.where(omega == 0, 1.0, 0.0)


FAMILIES = {
    "matern": _matern_factor,
    "gaussian": _gaussian_factor,
    "constant": _constant_factor,
}


@dataclass(frozen=True, eq=False)
class SpectralProfile:
    """Nonnegative even profile on the dual lattice with ``rho(0) = 1``.

    ``family`` is one of ``matern``, ``gaussian``, ``constant`` (the value is
    a product of 1-D factors of the dual coordinates) or ``custom`` (values
    given explicitly on ``indices``).  The stored support lists the
    multi-indices ``k`` (dual point ``k @ dual_generators``) whose value is at
    least ``truncation``, sorted by nonincreasing value.
    """

    lattice: Lattice
    family: str
    scale: float = 1.0
    truncation: float = DEFAULT_TRUNCATION
    custom: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES and self.family != "custom":
            raise InvalidArgumentError(f"unknown spectral family {self.family!r}")
        if self.scale <= 0:
            raise InvalidArgumentError("spectral scale must be positive")
        if not 0 < self.truncation < 1:
            raise InvalidArgumentError("truncation must lie in (0, 1)")
        if self.family == "custom":
            object.__setattr__(self, "custom", _symmetrize(self.custom, self.lattice.dim))

    @property
    def dim(self):
        return self.lattice.dim

    @property
    def separable(self):
        return self.family in FAMILIES and self.lattice.is_rectangular

    @property
    def id(self):
        if self.family == "custom":
            return f"custom[{len(self.custom)}]"
        return f"{self.family}(scale={self.scale:g})"

    def value(self, dual_points):
        """Profile value at dual points (rows), for the product families."""
        A = np.atleast_2d(np.asarray(dual_points, dtype=float))
        if self.family == "custom":
            raise InvalidArgumentError("custom profiles are defined on multi-indices only")
        return np.prod(FAMILIES[self.family](A, self.scale), axis=-1)

    def at_index(self, k):
        k = tuple(int(v) for v in k)
        if self.family == "custom":
            return self.custom.get(k, 0.0)
        return float(self.value(np.asarray(k, float) @ self.lattice.dual_generators)[0])

    # -- per-coordinate data for the separable case ---------------------------

    def factor_values(self, d, kmax):
        """1-D factor ``c_d(k) = c(k / L_d)`` for ``k = 0..kmax``."""
        k = np.arange(kmax + 1, dtype=float)
        return FAMILIES[self.family](k / self.lattice.periods[d], self.scale)

    def factor_total(self, d):
        """``sum_{k in Z} c_d(k)``, exact."""
        L = self.lattice.periods[d]
        if self.family == "constant":
            return 1.0
        if self.family == "matern":
            b = L / (2.0 * self.scale)
            return float(b / np.tanh(b))
        kmax = _gaussian_kmax(L, self.scale)
        c = self.factor_values(d, kmax)
        return float(c[0] + 2.0 * c[1:].sum())

    # -- stored support -------------------------------------------------------

    @property
    def support(self):
        """``(indices, rho)`` sorted by nonincreasing ``rho``; computed lazily."""
        cached = self.__dict__.get("_support")
        if cached is None:
            cached = self._enumerate()
            self.__dict__["_support"] = cached
        return cached

    def _enumerate(self):
        D = self.dim
        eps = self.truncation
        if self.family == "custom":
            items = sorted(self.custom.items(), key=lambda kv: (-kv[1], kv[0]))
            items = [(k, v) for k, v in items if v >= eps or not any(k)]
            idx = np.array([k for k, _ in items], dtype=int).reshape(-1, D)
            return idx, np.array([v for _, v in items])
        if self.separable:
            return _enumerate_separable(self, eps)
        return _enumerate_boxes(self, eps)

    def total(self):
        """``sum rho`` over the whole dual lattice (separable) or stored support."""
        if self.separable:
            return float(np.prod([self.factor_total(d) for d in range(self.dim)]))
        return float(self.support[1].sum())


def _gaussian_kmax(L, scale, floor=1e-18):
    # exp(-(pi s k / L)^2) < floor beyond this index
    return int(np.ceil(L * np.sqrt(-np.log(floor)) / (np.pi * scale))) + 1


def _symmetrize(values, dim):
    if not values:
        raise InvalidArgumentError("custom spectral profile is empty")
    out = {}
    for k, v in values.items():
        k = tuple(int(x) for x in np.atleast_1d(k))
        if len(k) != dim:
            raise InvalidArgumentError(f"multi-index {k} has wrong dimension")
        if v < 0 or not np.isfinite(v):
            raise InvalidArgumentError("spectral values must be finite and nonnegative")
        out[k] = float(v)
    sym = {}
    for k in set(out) | {tuple(-x for x in k) for k in out}:
        neg = tuple(-x for x in k)
        sym[k] = 0.5 * (out.get(k, 0.0) + out.get(neg, 0.0)) if k != neg else out.get(k, 0.0)
    if abs(sym.get((0,) * dim, 0.0) - 1.0) > 1e-12:
        raise InvalidArgumentError("spectral profile must satisfy rho(0) = 1")
    return sym


def _sorted_1d(profile, d, count):
    """Values ``c_d(0), c_d(1), c_d(-1), c_d(2), ...`` with their signed indices."""
    kmax = max(1, (count + 1) // 2)
    c = profile.factor_values(d, kmax)
    keys = [0] + [s * k for k in range(1, kmax + 1) for s in (1, -1)]
    vals = np.array([c[abs(k)] for k in keys])
    order = np.argsort(-vals, kind="stable")
    keep = vals[order] > 0
    return vals[order][keep], np.array(keys)[order][keep]


def _top_values(profile, count):
    """Largest ``count`` profile values, in order, by best-first search.

    Works because the profile is a product of per-coordinate factors that are
    each sorted nonincreasing.
    """
    D = profile.dim
    lists = [_sorted_1d(profile, d, count) for d in range(D)]
    vals = [v for v, _ in lists]
    start = (0,) * D
    heap = [(-math.prod(float(v[0]) for v in vals), start)]
    seen = {start}
    out_vals, out_idx = [], []
    while heap and len(out_vals) < count:
        negv, pos = heapq.heappop(heap)
        out_vals.append(-negv)
        out_idx.append([lists[d][1][p] for d, p in enumerate(pos)])
        for d in range(D):
            if pos[d] + 1 < len(vals[d]):
                nxt = pos[:d] + (pos[d] + 1,) + pos[d + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    v = math.prod(float(vals[e][p]) for e, p in enumerate(nxt))
                    heapq.heappush(heap, (-v, nxt))
    return np.array(out_vals), np.array(out_idx, dtype=int).reshape(-1, D)


def _enumerate_separable(profile, eps):
    D = profile.dim
    if D > 6:
        # per-coordinate cap: largest m with c(m) >= eps^(1/D)
        caps = []
        for d in range(D):
            c = profile.factor_values(d, 4096)
            caps.append(int(np.nonzero(c >= eps ** (1.0 / D))[0].max()))
        ranges = [range(-m, m + 1) for m in caps]
        size = np.prod([2 * m + 1 for m in caps], dtype=float)
        if size > MAX_SUPPORT:
            warnings.warn("spectral support capped at MAX_SUPPORT", TruncationWarning)
            vals, idx = _top_values(profile, MAX_SUPPORT)
            return idx, vals
        idx = np.array(list(itertools.product(*ranges)), dtype=int)
        vals = np.prod([profile.factor_values(d, max(caps) + 1)[np.abs(idx[:, d])]
                        for d in range(D)], axis=0)
        order = np.argsort(-vals, kind="stable")
        return idx[order], vals[order]
    count = 4096
    while True:
        v, i = _top_values(profile, count)
        if len(v) < count or v[-1] < eps:
            keep = v >= eps
            keep[0] = True
            return i[keep], v[keep]
        if count >= MAX_SUPPORT:
            warnings.warn("spectral support capped at MAX_SUPPORT", TruncationWarning)
            return i, v
        count = min(2 * count, MAX_SUPPORT)


def _enumerate_boxes(profile, eps):
    """Expanding hyper-rectangle shells of multi-indices until a shell adds nothing."""
    D = profile.dim
    found_idx, found_val = [np.zeros((1, D), int)], [np.array([profile.at_index((0,) * D)])]
    total = 1
    r = 1
    while True:
        grid = np.array(list(itertools.product(range(-r, r + 1), repeat=D)), dtype=int)
        shell = grid[np.abs(grid).max(axis=1) == r]
        vals = profile.value(shell @ profile.lattice.dual_generators)
        keep = vals >= eps
        if not keep.any():
            break
        found_idx.append(shell[keep])
        found_val.append(vals[keep])
        total += int(keep.sum())
        if total > MAX_SUPPORT:
            warnings.warn("spectral support capped at MAX_SUPPORT", TruncationWarning)
            break
        r += 1
    idx = np.concatenate(found_idx)
    vals = np.concatenate(found_val)
    order = np.argsort(-vals, kind="stable")
    return idx[order], vals[order]


def matern_spectral_profile(lattice, scale=None, truncation=DEFAULT_TRUNCATION):
    """Normalized Fourier transform of ``exp(-|u|_1 / scale)`` on the dual lattice.

    ``rho(a) = prod_d 1 / (1 + (2 pi scale a_d)^2)``.  The default scale is
    :func:`default_matern_scale`.
    """
    if scale is None:
        scale = default_matern_scale(lattice.dim)
    return SpectralProfile(lattice, "matern", float(scale), truncation)


def gaussian_spectral_profile(lattice, scale=1.0, truncation=DEFAULT_TRUNCATION):
    return SpectralProfile(lattice, "gaussian", float(scale), truncation)


def constant_profile(lattice):
    """``rho = 1`` at the origin and zero elsewhere; the kernel is constant."""
    return SpectralProfile(lattice, "constant", 1.0)


def custom_profile(lattice, values, truncation=DEFAULT_TRUNCATION):
    """Profile given as ``{multi_index: value}``; symmetrized under ``k -> -k``."""
    return SpectralProfile(lattice, "custom", 1.0, truncation, custom=dict(values))


def default_matern_scale(dim):
    """``sqrt(D / 12)``: the standard deviation of a sum of D unit uniforms."""
    return float(np.sqrt(dim / 12.0))


class LatticeKernel(Kernel):
    """Periodic translation-invariant kernel of a spectral profile."""

    kind = "lattice-periodic"

    def __init__(self, lattice, profile):
        if profile.lattice is not lattice and not np.array_equal(
                profile.lattice.generators, lattice.generators):
            raise InvalidArgumentError("profile was built for a different lattice")
        super().__init__(lattice.dim)
        self.lattice = lattice
        self.spectral = profile
        if not profile.separable:
            idx, rho = profile.support
            if len(rho) == 0:
                raise InvalidArgumentError("empty truncated spectral support")
            self._dual = idx @ lattice.dual_generators
            self._rho = rho
        else:
            self._periods = lattice.periods
            if profile.family == "gaussian":
                kmax = max(_gaussian_kmax(L, profile.scale) for L in self._periods)
                self._k = np.arange(1, kmax + 1, dtype=float)
                self._gc = np.stack([profile.factor_values(d, kmax)[1:]
                                     for d in range(self.dim)], axis=-1)

    @property
    def id(self):
        G = self.lattice.generators
        tag = "unit" if np.array_equal(G, np.eye(self.dim)) else "custom"
        return f"lattice-periodic(D={self.dim},lattice={tag},profile={self.spectral.id})"

    @property
    def mean_value(self):
        """``int K(x, y) dx`` over the cell with uniform probability: ``rho(0)/|C|``."""
        return 1.0 / self.lattice.cell_volume

    # separable: product of 1-D periodic factors -------------------------------

    def _log_factor(self, Z):
        L = self._periods
        fam = self.spectral.family
        if fam == "constant":
            return np.broadcast_to(-np.log(L), Z.shape)
        W = Z / L
        W = W - np.floor(W)
        if fam == "matern":
            b = L / (2.0 * self.spectral.scale)
            # cosh(b(1-2w))/sinh(b) written without overflow
            num = np.exp(-2.0 * b * W) + np.exp(-2.0 * b * (1.0 - W))
            return np.log(b / L) + np.log(num) - np.log1p(-np.exp(-2.0 * b))
        phase = 2.0 * np.pi * W[..., None] * self._k[:, None]
        s = 1.0 + 2.0 * np.einsum("...kd,kd->...d", np.cos(phase), self._gc)
        return np.log(s / L)

    def _dlog_factor(self, Z):
        L = self._periods
        fam = self.spectral.family
        if fam == "constant":
            return np.zeros_like(Z)
        W = Z / L
        W = W - np.floor(W)
        if fam == "matern":
            b = L / (2.0 * self.spectral.scale)
            g = -(2.0 * b / L) * np.tanh(b * (1.0 - 2.0 * W))
            return np.where(W == 0.0, 0.0, g)
        phase = 2.0 * np.pi * W[..., None] * self._k[:, None]
        s = 1.0 + 2.0 * np.einsum("...kd,kd->...d", np.cos(phase), self._gc)
        ds = -4.0 * np.pi / L * np.einsum("...kd,kd->...d", np.sin(phase),
                                          self._gc * self._k[:, None])
        return ds / s

    # general lattice: truncated Fourier sum ---------------------------------

    def _phases(self, X):
        P = 2.0 * np.pi * X @ self._dual.T
        return np.cos(P), np.sin(P)

    def _matrix(self, X, Y):
        if self.spectral.separable:
            Z = X[:, None, :] - Y[None, :, :]
            return np.exp(self._log_factor(Z).sum(axis=-1))
        cx, sx = self._phases(X)
        cy, sy = self._phases(Y)
        return ((cx * self._rho) @ cy.T + (sx * self._rho) @ sy.T) / self.lattice.cell_volume

    def _paired(self, A, B):
        if self.spectral.separable:
            return np.exp(self._log_factor(A - B).sum(axis=-1))
        P = 2.0 * np.pi * (A - B) @ self._dual.T
        return np.cos(P) @ self._rho / self.lattice.cell_volume

    def _value_and_gradient(self, X, Y):
        if self.spectral.separable:
            Z = X[:, None, :] - Y[None, :, :]
            K = np.exp(self._log_factor(Z).sum(axis=-1))
            return K, K[..., None] * self._dlog_factor(Z)
        return self._matrix(X, Y), self._gradient(X, Y)

    def _gradient(self, X, Y):
        if self.spectral.separable:
            return self._value_and_gradient(X, Y)[1]
        cx, sx = self._phases(X)
        cy, sy = self._phases(Y)
        out = np.empty((len(X), len(Y), self.dim))
        for d in range(self.dim):
            w = -2.0 * np.pi * self._rho * self._dual[:, d]
            out[:, :, d] = (sx * w) @ cy.T - (cx * w) @ sy.T
        return out / self.lattice.cell_volume


def lattice_kernel(lattice, profile):
    return LatticeKernel(lattice, profile)


def sea_bound(profile, N):
    """Spectral error estimate ``sqrt((1/N) sum_{n > N} rho_n)``.

    ``rho_n`` is the profile sorted nonincreasing.  When the support has at
    most ``N`` points the tail is empty: returns 0 and emits a
    :class:`TruncationWarning`.
    """
    if int(N) != N or N < 1:
        raise InvalidArgumentError("N must be a positive integer")
    N = int(N)
    if profile.separable:
        top, _ = _top_values(profile, N)
        if len(top) < N:
            warnings.warn(f"spectral support has only {len(top)} points (N={N})",
                          TruncationWarning)
            return 0.0
        tail = profile.total() - top.sum()
    else:
        rho = profile.support[1]
        if N >= len(rho):
            warnings.warn(f"stored spectral support has only {len(rho)} points (N={N})",
                          TruncationWarning)
            return 0.0
        tail = rho[N:].sum()
    return float(np.sqrt(max(tail, 0.0) / N))
