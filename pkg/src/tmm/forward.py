"""Forward particle solver: equal-weight sharp-discrepancy representation of the law of ``X_t``.

Each step simulates an auxiliary cloud of Euler-Maruyama children from the
current particles and quantizes it back to ``N`` points by minimizing the
discrepancy against the cloud's empirical measure.  The cloud, the parent
of every child and the particle each child is assigned to are recorded, so
the backward solver can build transition matrices from them.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .discrepancy import (EmpiricalMeasure, OptimizerOptions,
                          PointSequence, discrepancy, minimize_discrepancy)
from .errors import DomainError, InvalidArgumentError, NumericalError
from .kernels import RkhsElement, TensorMaternKernel, rkhs_norm, transported_kernel
from .sde import _check_grid
from .transport import erf_map

log = logging.getLogger(__name__)

#: Spread of the Dirac initial particles around ``y0``.
INITIAL_JITTER = 1e-9
#: Relative floor on the width of a fitted kernel.
MIN_KERNEL_WIDTH = 1e-6


def _default_optimizer():
    return OptimizerOptions(restarts=1, max_iters=100)


@dataclass
class ForwardOptions:
    """Settings of :func:`propagate`.

    ``aux_factor`` children are simulated per particle and step; each grid
    step is split into Euler substeps no longer than ``max_dt``.  When no
    kernel is given, a tensor Matérn kernel of scale ``kernel_scale`` is
    transported by an erf map fitted to each cloud's mean and deviation.
    With ``match_moments`` each quantized set is mapped affinely onto the
    cloud's mean and covariance (see :func:`match_moments`).
    """

    aux_factor: int = 20
    max_dt: float = 1.0 / 64
    kernel_scale: float = 1.0
    seed: int = 0
    match_moments: bool = True
    optimizer: OptimizerOptions = field(default_factory=_default_optimizer)


@dataclass
class StepRecord:
    """Data of one step ``t_j -> t_{j+1}``: the cloud, its parents and assignments."""

    cloud: np.ndarray
    parents: np.ndarray
    assignment: np.ndarray
    flagged: bool = False


@dataclass
class ParticleFlow:
    times: np.ndarray
    states: list
    certificates: list
    kernels: list
    steps: list
    y0: np.ndarray = None
    model: object = None
    seed: int = 0

    @property
    def N(self):
        return self.states[0].N

    @property
    def D(self):
        return self.states[0].D

    def points(self, j):
        return self.states[j].points


def fitted_kernel(cloud, scale=1.0):
    """Tensor Matérn kernel transported by ``erf((x - m) / (sqrt(2) s))``.

    ``m`` and ``s`` are the per-coordinate mean and deviation of ``cloud``,
    so the map sends a Gaussian fit of the cloud to the uniform law on
    ``(-1, 1)^D``.
    """
    C = np.asarray(cloud, dtype=float)
    loc = C.mean(axis=0)
    sd = C.std(axis=0)
    # degenerate (frozen) coordinates keep a small positive width
    sd = np.maximum(sd, MIN_KERNEL_WIDTH * np.maximum(np.abs(loc), 1.0))
    D = C.shape[1]
    return transported_kernel(TensorMaternKernel(D, scale), erf_map(D, loc, np.sqrt(2.0) * sd))


def _children(model, t0, t1, Y, n_children, max_dt, rng):
    """Balanced antithetic Euler children: ``n_children`` per particle.

    Children of one parent come in pairs driven by ``Z`` and ``-Z``; an odd
    last child gets its own draw.
    """
    N, D = Y.shape
    parents = np.repeat(np.arange(N), n_children)
    X = Y[parents].copy()
    n_sub = max(1, int(np.ceil((t1 - t0) / max_dt - 1e-12)))
    dt = (t1 - t0) / n_sub
    half = n_children // 2
    for k in range(n_sub):
        Zh = rng.standard_normal((N, half, D))
        parts = [Zh, -Zh]
        if n_children % 2:
            parts.append(rng.standard_normal((N, 1, D)))
        Z = np.concatenate(parts, axis=1).reshape(N * n_children, D)
        X = model.step(t0 + k * dt, X, dt, Z)
    if not np.all(np.isfinite(X)):
        raise NumericalError("non-finite states in the auxiliary cloud")
    return X, parents


def match_moments(Y, cloud):
    """Affine image of ``Y`` with the mean and covariance of ``cloud``.

    Quantization slightly shrinks the tails of the cloud; the correction
    keeps the particle set's first two moments equal to the cloud's.
    Returns ``Y`` shifted only when either covariance is singular.
    """
    my, mc = Y.mean(axis=0), cloud.mean(axis=0)
    try:
        Ly = np.linalg.cholesky(np.atleast_2d(np.cov(Y.T, bias=True)))
        Lc = np.linalg.cholesky(np.atleast_2d(np.cov(cloud.T, bias=True)))
    except np.linalg.LinAlgError:
        return Y + (mc - my)
    A = Lc @ np.linalg.inv(Ly)
    return mc + (Y - my) @ A.T


def _match(A, B):
    """Permutation ``p`` such that ``B[p]`` is closest to ``A`` row by row in total."""
    cost = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return cols[np.argsort(rows)]


def propagate(model, kernel, y0, t_grid, N, opts=None):
    """Particle flow of ``N`` equal-weight points from the Dirac mass at ``y0``.

    Parameters
    ----------
    model : SdeModel
    kernel : Kernel or None
        Certificate and quantization kernel.  ``None`` refits a transported
        kernel to every cloud (see :func:`fitted_kernel`).
    y0 : array_like, shape (D,)
    t_grid : array_like
        Strictly increasing times starting at 0.
    N : int
        Number of particles, at least 2.
    opts : ForwardOptions, optional

    Returns
    -------
    ParticleFlow
    """
    opts = opts or ForwardOptions()
    if int(N) != N or N < 2:
        raise InvalidArgumentError("N must be an integer >= 2")
    N = int(N)
    t = _check_grid(t_grid)
    y0 = np.asarray(y0, dtype=float).ravel()
    if y0.size != model.dim:
        raise InvalidArgumentError(f"y0 must have {model.dim} coordinates")
    if kernel is not None and kernel.dim != model.dim:
        raise InvalidArgumentError("kernel and model dimensions differ")
    if opts.aux_factor < 1:
        raise InvalidArgumentError("aux_factor must be positive")
    model.check_state(y0[None])

    step_seeds = np.random.SeedSequence(opts.seed).spawn(len(t))
    rng0 = np.random.default_rng(step_seeds[0])
    Y = y0 + INITIAL_JITTER * (rng0.random((N, model.dim)) - 0.5)
    states, certs, kernels, steps = [Y], [], [], []

    for j in range(len(t) - 1):
        sim_seed, opt_seed = step_seeds[j + 1].spawn(2)
        rng = np.random.default_rng(sim_seed)
        cloud, parents = _children(model, t[j], t[j + 1], Y, opts.aux_factor, opts.max_dt, rng)
        K = kernel if kernel is not None else fitted_kernel(cloud, opts.kernel_scale)
        mu = EmpiricalMeasure(cloud)
        # restart 0 starts from a herded subset of the cloud
        oopts = replace(opts.optimizer, init=None, seed=int(opt_seed.generate_state(1)[0]))
        flagged = False
        try:
            seq = minimize_discrepancy(K, mu, N, oopts)
            Yn, cert = seq.points, seq.certificate
        except NumericalError as exc:
            warnings.warn(f"quantization failed at step {j} ({exc}); keeping previous particles")
            flagged = True
            Yn = Y
            cert = discrepancy(K, mu, Y)
        if opts.match_moments and not flagged:
            Ym = match_moments(Yn, cloud)
            try:
                model.check_state(Ym)
                meta = cert.meta
                Yn, cert = Ym, discrepancy(K, mu, Ym)
                cert.meta.update(meta, moment_matched=True)
            except DomainError:
                log.debug("moment matching left the state space at step %d; skipped", j)
        cert.meta["flagged"] = flagged
        model.check_state(Yn)
        tmap = getattr(K, "map", None)
        S = tmap.apply if tmap is not None else (lambda X: X)
        # label new particles after their predecessors (minimal total squared move)
        Yn = Yn[_match(S(Y), S(Yn))]
        # nearest particle in the kernel's transported coordinates
        assignment = cKDTree(S(Yn)).query(S(cloud))[1]
        steps.append(StepRecord(cloud, parents, assignment, flagged))
        kernels.append(K)
        certs.append(cert)
        states.append(Yn)
        log.debug("step %d t=%.4g E=%.3e", j, t[j + 1], cert.value)
        Y = Yn

    # the Dirac initial state is certified against delta_{y0} with the first step's kernel
    cert0 = discrepancy(kernels[0], EmpiricalMeasure(y0[None]), states[0])
    certs.insert(0, cert0)
    kernels.insert(0, kernels[0])
    seqs = [PointSequence(P, domain="real", certificate=c) for P, c in zip(states, certs)]
    return ParticleFlow(t, seqs, certs, kernels, steps, y0=y0, model=model, seed=opts.seed)


def moment(flow, t_index, phi):
    """Particle average of ``phi`` at ``t_index`` and its error bound.

    For an :class:`RkhsElement` the bound is ``E_K * ||phi||`` with the
    discrepancy taken in ``phi``'s own kernel (against the auxiliary cloud),
    which is an exact bound on the error relative to the cloud.  For other
    callables the bound is the certificate alone, i.e. per unit norm.
    """
    if not -len(flow.times) <= t_index < len(flow.times):
        raise InvalidArgumentError(f"time index {t_index} out of range")
    j = t_index % len(flow.times)
    Y = flow.points(j)
    values = np.asarray(phi(Y), dtype=float)
    mean = values.mean(axis=0)
    cert = flow.certificates[j]
    if isinstance(phi, RkhsElement):
        if phi.kernel.id != cert.kernel_id:
            ref = EmpiricalMeasure(flow.steps[j - 1].cloud if j > 0 else flow.y0[None])
            cert = discrepancy(phi.kernel, ref, Y)
        return mean, cert.value * rkhs_norm(phi)
    return mean, cert.value
