"""Kernel discrepancy of equal-weight point sets and its minimization.

For a kernel ``K``, a probability measure ``mu`` and points ``y_1..y_N``::

    E^2 = iint K dmu dmu + (1/N^2) sum_nm K(y_n, y_m) - (2/N) sum_n int K(x, y_n) dmu(x)

``E`` bounds the equal-weight quadrature error of every ``phi`` in the native
space by ``E * ||phi||``.  Minimizing it over the points gives sharp
discrepancy sequences.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import InvalidArgumentError, NumericalError
from .kernels import DISTINCT_TOL, as_points, min_separation
from .lattice import Lattice, LatticeKernel

log = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 100_000
DEFAULT_SURROGATE_SAMPLES = 4096
_CHUNK = 1 << 15


# -- measures -----------------------------------------------------------------

class UniformMeasure:
    """Uniform probability on the unit cube, or on the cell of a lattice.

    A lattice-cell measure carries periodic boundary conditions: points are
    wrapped into the cell.
    """

    def __init__(self, dim, lattice=None):
        if lattice is not None and lattice.dim != dim:
            raise InvalidArgumentError("lattice dimension does not match measure dimension")
        self.dim = int(dim)
        self.lattice = lattice

    @classmethod
    def cell(cls, lattice):
        return cls(lattice.dim, lattice)

    @property
    def domain(self):
        return "lattice-cell" if self.lattice is not None else "unit-cube"

    @property
    def id(self):
        if self.lattice is None:
            return f"uniform(unit-cube,D={self.dim})"
        return f"uniform(lattice-cell,D={self.dim},volume={self.lattice.cell_volume:g})"

    def from_unit(self, U):
        return U if self.lattice is None else U @ self.lattice.generators

    def sample(self, n, rng):
        return self.from_unit(rng.random((n, self.dim)))

    def project(self, Y):
        if self.lattice is not None:
            return self.lattice.wrap(Y)
        return np.clip(Y, 0.0, 1.0)


class TransportedMeasure:
    """Image of the uniform measure on the open unit cube under a transport map."""

    def __init__(self, tmap):
        self.map = tmap
        self.dim = tmap.dim
        self.lattice = None

    domain = "real"

    @property
    def id(self):
        return f"pushforward({self.map.id})"

    def from_unit(self, U):
        return self.map.apply(np.clip(U, 1e-12, 1 - 1e-12))

    def sample(self, n, rng):
        return self.from_unit(rng.random((n, self.dim)))

    def project(self, Y):
        return Y


class EmpiricalMeasure:
    """Equal-weight empirical measure of a point cloud; integrals are exact sums."""

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.dim = self.points.shape[1]
        self.lattice = None
        self._double = {}

    domain = "real"

    @property
    def id(self):
        return f"empirical(M={len(self.points)},D={self.dim})"

    def sample(self, n, rng):
        return self.points[rng.integers(0, len(self.points), n)]

    def project(self, Y):
        return Y

    def double_integral(self, kernel):
        key = kernel.id
        if key not in self._double:
            total = 0.0
            for start in range(0, len(self.points), 2048):
                total += kernel(self.points[start:start + 2048], self.points).sum()
            self._double[key] = total / len(self.points) ** 2
        return self._double[key]


# -- data types ---------------------------------------------------------------

@dataclass
class DiscrepancyCertificate:
    """Attained discrepancy ``value`` together with how it was computed.

    ``method`` is ``closed-form`` (exact integrals) or
    ``monte-carlo-estimate`` (``samples`` draws from ``seed``).  ``value_squared``
    keeps the raw ``E^2`` before clamping at zero.
    """

    value: float
    kernel_id: str
    mu_id: str
    method: str
    value_squared: float = None
    samples: int = None
    seed: int = None
    standard_error: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class PointSequence:
    """``N`` distinct points in ``D`` dimensions, optionally certified."""

    points: np.ndarray
    domain: str = "real"
    certificate: DiscrepancyCertificate = None
    lattice: Lattice = field(default=None, repr=False)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.lattice is not None:
            P = self.lattice.wrap(P)
        elif self.domain == "unit-cube" and (P.min() < 0.0 or P.max() > 1.0):
            raise InvalidArgumentError("points lie outside the unit cube")
        if min_separation(P) <= DISTINCT_TOL:
            raise InvalidArgumentError("point sequence has coincident points")
        self.points = P

    @property
    def N(self):
        return self.points.shape[0]

    @property
    def D(self):
        return self.points.shape[1]

    def __len__(self):
        return self.N


def _points_of(Y, dim):
    return as_points(getattr(Y, "points", Y), dim)


# -- objective ----------------------------------------------------------------

def _closed_form(kernel, mu):
    return (isinstance(kernel, LatticeKernel) and isinstance(mu, UniformMeasure)
            and mu.lattice is not None
            and np.allclose(mu.lattice.generators, kernel.lattice.generators))


def _pair_sum(kernel, Y, with_grad):
    if not with_grad:
        return kernel(Y, Y).sum(), None
    s, g = kernel.row_sums(Y, Y)
    return s.sum(), g


def _cross_terms(kernel, Y, Z, with_grad):
    """``mean_i K(y_n, z_i)`` and its gradient in ``y_n``, chunked over ``Z``."""
    s = np.zeros(len(Y))
    g = np.zeros_like(Y) if with_grad else None
    for start in range(0, len(Z), _CHUNK):
        block = Z[start:start + _CHUNK]
        if with_grad:
            ks, kg = kernel.row_sums(Y, block)
            g += kg
        else:
            ks = kernel(Y, block).sum(axis=1)
        s += ks
    s /= len(Z)
    if with_grad:
        g /= len(Z)
    return s, g


class _Objective:
    """``E^2`` and its gradient for a fixed kernel and a measure with exact integrals."""

    def __init__(self, kernel, mu):
        self.kernel = kernel
        self.mu = mu
        if _closed_form(kernel, mu):
            self.double = kernel.mean_value
            self.Z = None
        elif isinstance(mu, EmpiricalMeasure):
            self.double = mu.double_integral(kernel)
            self.Z = mu.points
        else:
            raise InvalidArgumentError(f"no exact integrals for {kernel.id} against {mu.id}")

    def __call__(self, Y, with_grad=True):
        N = len(Y)
        pair, pair_grad = _pair_sum(self.kernel, Y, with_grad)
        if self.Z is None:
            single = np.full(N, self.kernel.mean_value)
            single_grad = np.zeros_like(Y) if with_grad else None
        else:
            single, single_grad = _cross_terms(self.kernel, Y, self.Z, with_grad)
        f = self.double + pair / N ** 2 - 2.0 * single.sum() / N
        if not with_grad:
            return f
        g = 2.0 * pair_grad / N ** 2 - 2.0 * single_grad / N
        return f, g


def discrepancy(kernel, mu, Y, samples=DEFAULT_MC_SAMPLES, seed=0):
    """Discrepancy certificate of the point set ``Y`` against ``mu``.

    Integrals are exact for a lattice kernel against the uniform measure on
    its cell, and for empirical measures.  Otherwise both integral terms are
    Monte Carlo estimates from ``samples`` draws seeded by ``seed``; the
    certificate records their standard errors.
    """
    Yp = _points_of(Y, kernel.dim)
    N = len(Yp)
    if _closed_form(kernel, mu) or isinstance(mu, EmpiricalMeasure):
        e2 = _Objective(kernel, mu)(Yp, with_grad=False)
        if e2 < -1e-12 * max(1.0, abs(kernel.eval(Yp[0], Yp[0]))):
            raise NumericalError(f"negative squared discrepancy {e2:.3e}")
        return DiscrepancyCertificate(
            value=float(np.sqrt(max(e2, 0.0))), kernel_id=kernel.id, mu_id=mu.id,
            method="closed-form", value_squared=float(e2))

    rng = np.random.default_rng(seed)
    X1 = mu.sample(samples, rng)
    X2 = mu.sample(samples, rng)
    pair = kernel(Yp, Yp).sum() / N ** 2
    a = np.concatenate([kernel.paired(X1[i:i + _CHUNK], X2[i:i + _CHUNK])
                        for i in range(0, samples, _CHUNK)])
    s = np.concatenate([kernel(X1[i:i + _CHUNK], Yp).mean(axis=1)
                        for i in range(0, samples, _CHUNK)])
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
        raise NumericalError("non-finite Monte Carlo integrand; is K integrable for mu?")
    t = a - 2.0 * s
    e2 = float(t.mean() + pair)
    se = {
        "double_integral": float(a.std(ddof=1) / np.sqrt(samples)),
        "single_integral": float(s.std(ddof=1) / np.sqrt(samples)),
        "value_squared": float(t.std(ddof=1) / np.sqrt(samples)),
    }
    return DiscrepancyCertificate(
        value=float(np.sqrt(max(e2, 0.0))), kernel_id=kernel.id, mu_id=mu.id,
        method="monte-carlo-estimate", value_squared=e2, samples=int(samples),
        seed=int(seed), standard_error=se)


# -- optimization -------------------------------------------------------------

@dataclass
class OptimizerOptions:
    """Settings for :func:`minimize_discrepancy`.

    ``grad_tol`` defaults to ``1e-7 / N``.  ``init`` is an optional
    ``(N, D)`` starting configuration used for the first restart.
    ``surrogate_samples`` sets the size of the quasi-random empirical
    stand-in for measures without exact integrals.
    """

    restarts: int = 5
    max_iters: int = 10_000
    grad_tol: float = None
    seed: int = 0
    init: np.ndarray = None
    threads: int = 1
    armijo_c: float = 1e-4
    stall_iters: int = 50
    stall_rtol: float = 1e-12
    surrogate_samples: int = DEFAULT_SURROGATE_SAMPLES
    certificate_samples: int = DEFAULT_MC_SAMPLES


def halton_points(N, D, skip=1):
    """First ``N`` unscrambled Halton points (bases = first D primes), from index ``skip``."""
    engine = qmc.Halton(d=D, scramble=False)
    if skip:
        engine.fast_forward(skip)
    return engine.random(N)


def herding(kernel, mu, N):
    """Indices of ``N`` distinct cloud points chosen greedily by kernel herding.

    Point ``t + 1`` maximizes ``m(z) - (1 / (t + 1)) sum_{s <= t} K(z, z_s)``
    over the cloud, where ``m`` is the kernel mean embedding of ``mu``.
    """
    Z = mu.points
    M = len(Z)
    if N > M:
        raise InvalidArgumentError(f"cannot herd {N} points from a cloud of {M}")
    step = max(1, _CHUNK // M)
    embed = np.concatenate([kernel(Z[i:i + step], Z).mean(axis=1) for i in range(0, M, step)])
    acc = np.zeros(M)
    chosen = np.empty(N, dtype=int)
    for t in range(N):
        score = embed - acc / (t + 1)
        score[chosen[:t]] = -np.inf
        k = int(np.argmax(score))
        chosen[t] = k
        acc += kernel(Z, Z[k:k + 1])[:, 0]
    return chosen


def _initial(mu, N, opts, restart, rng, kernel=None):
    """Restart 0 starts from ``opts.init``, a herded subset (empirical measures)
    or the Halton sequence; later restarts are random."""
    if restart == 0 and opts.init is not None:
        return as_points(opts.init, mu.dim).copy()
    if isinstance(mu, EmpiricalMeasure) and restart == 0 and kernel is not None and N <= len(mu.points):
        return mu.points[herding(kernel, mu, N)].copy()
    if isinstance(mu, EmpiricalMeasure):
        M = len(mu.points)
        pick = rng.choice(M, size=N, replace=N > M)
        return mu.points[pick].copy()
    U = halton_points(N, mu.dim) if restart == 0 else rng.random((N, mu.dim))
    return mu.from_unit(np.clip(U, 1e-9, 1 - 1e-9)) if mu.domain == "real" else mu.from_unit(U)


def _untie(Y, rng):
    if len(Y) > 1 and min_separation(Y) <= DISTINCT_TOL:
        Y = Y + 1e-9 * rng.random(Y.shape)
    return Y


def _descend(objective, Y, mu, opts, grad_tol, rng):
    """Projected gradient descent with Armijo backtracking and Barzilai-Borwein steps."""
    periodic = mu.domain == "lattice-cell"
    Y = _untie(mu.project(Y), rng)
    f, g = objective(Y)
    trace = [f]
    if not np.isfinite(f):
        raise NumericalError("non-finite objective at initialization", trace)
    step = None
    status = "max-iters"
    best_f, since_best = f, 0
    it = 0
    for it in range(opts.max_iters):
        gnorm = np.abs(g).max()
        if gnorm <= grad_tol:
            status = "converged"
            break
        if step is None:
            spread = np.ptp(Y, axis=0).max() if len(Y) > 1 else 1.0
            step = 0.1 * max(spread, 1e-12) / (len(Y) * gnorm)
        t = step
        while True:
            Yn = _untie(mu.project(Y - t * g), rng)
            fn, gn = objective(Yn)
            if not np.isfinite(fn):
                raise NumericalError(f"non-finite objective at iteration {it}", trace)
            moved = t * g if periodic else Y - Yn
            if fn <= f - opts.armijo_c * np.sum(g * moved):
                break
            t *= 0.5
            if t < 1e-30:
                status = "stalled"
                break
        if status == "stalled":
            break
        s = moved
        yv = gn - g
        sy = np.sum(s * yv)
        step = np.sum(s * s) / sy if sy > 0 else 2.0 * t
        Y, f, g = Yn, fn, gn
        trace.append(f)
        if f < best_f - opts.stall_rtol * max(abs(best_f), 1e-300):
            best_f, since_best = f, 0
        else:
            since_best += 1
            if since_best >= opts.stall_iters:
                status = "stalled"
                break
    return Y, f, g, {"status": status, "iterations": it, "grad_norm": float(np.abs(g).max())}


def _surrogate(mu, opts, rng):
    """Empirical stand-in for a measure without exact integrals."""
    U = qmc.Halton(d=mu.dim, scramble=True, seed=rng).random(opts.surrogate_samples)
    return EmpiricalMeasure(mu.from_unit(U))


def minimize_discrepancy(kernel, mu, N, opts=None):
    """Approximate sharp discrepancy sequence of ``N`` points.

    Runs ``opts.restarts`` descents and keeps the best.  The first starts
    from ``opts.init`` if given, else from a herded subset for empirical
    measures and from the Halton sequence otherwise; the others start from
    i.i.d. draws of ``mu``.  The certificate's ``meta`` records the stopping status, the iteration count,
    the final gradient norm and the objective at every initialization.
    """
    opts = opts or OptimizerOptions()
    if int(N) != N or N < 1:
        raise InvalidArgumentError("N must be a positive integer")
    N = int(N)
    if kernel.dim != mu.dim:
        raise InvalidArgumentError("kernel and measure dimensions differ")
    grad_tol = opts.grad_tol if opts.grad_tol is not None else 1e-7 / N
    seeds = np.random.SeedSequence(opts.seed).spawn(opts.restarts + 1)
    exact = _closed_form(kernel, mu) or isinstance(mu, EmpiricalMeasure)
    target = mu if exact else _surrogate(mu, opts, np.random.default_rng(seeds[-1]))
    objective = _Objective(kernel, target)

    def run(r):
        rng = np.random.default_rng(seeds[r])
        # the surrogate only replaces the integrals; the domain stays mu's
        Y0 = _untie(mu.project(_initial(mu, N, opts, r, rng, kernel)), rng)
        f0 = objective(Y0, with_grad=False)
        Y, f, g, info = _descend(objective, Y0, mu, opts, grad_tol, rng)
        return Y, f, f0, info

    if opts.threads > 1 and opts.restarts > 1:
        with ThreadPoolExecutor(opts.threads) as pool:
            results = list(pool.map(run, range(opts.restarts)))
    else:
        results = [run(r) for r in range(opts.restarts)]
    best = min(range(len(results)), key=lambda r: results[r][1])
    Y, f, _, info = results[best]
    init_values = [float(np.sqrt(max(r[2], 0.0))) for r in results]
    log.debug("minimize_discrepancy N=%d: restarts %s -> %.3e (%s)",
              N, init_values, np.sqrt(max(f, 0.0)), info["status"])

    if exact:
        cert = discrepancy(kernel, mu, Y)
    else:
        cert = discrepancy(kernel, mu, Y, samples=opts.certificate_samples,
                           seed=int(seeds[-1].generate_state(1)[0]))
        cert.meta["surrogate_value"] = float(np.sqrt(max(f, 0.0)))
    cert.meta.update(info)
    cert.meta["restart"] = best
    cert.meta["initial_values"] = init_values
    cert.meta["seed"] = opts.seed
    cert.seed = opts.seed if cert.seed is None else cert.seed
    return PointSequence(Y, domain=mu.domain, certificate=cert, lattice=mu.lattice)


# -- baselines ----------------------------------------------------------------

def baseline_sequence(kind, N, D, seed=0):
    """Reference point sets on the unit cube.

    ``iid-uniform`` draws from a Mersenne Twister generator seeded by
    ``seed``; ``halton`` is the unscrambled Halton sequence starting at index
    1, so in one dimension it reads 1/2, 1/4, 3/4, 1/8, ...
    """
    if kind == "iid-uniform":
        rng = np.random.Generator(np.random.MT19937(seed))
        P = rng.random((N, D))
    elif kind == "halton":
        P = halton_points(N, D)
    else:
        raise InvalidArgumentError(f"unknown baseline kind {kind!r}")
    return PointSequence(P, domain="unit-cube")
