"""Componentwise transport maps and transported quadrature.

Only product-measure transports are built: each coordinate is carried by a
monotone 1-D map, which is the gradient of a separable convex potential.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, ndtri

from .errors import DomainError, InvalidArgumentError
from .kernels import as_points

KINDS = ("identity", "erf-componentwise", "inverse-cdf-componentwise", "composed")


@dataclass(frozen=True)
class TransportMap:
    """Monotone componentwise map ``S``.

    ``loc`` and ``scale`` are per-coordinate parameters:

    * ``erf-componentwise``: ``S(x)_d = erf((x_d - loc_d) / scale_d)``, defined on R.
    * ``inverse-cdf-componentwise``: ``S(u)_d = loc_d + scale_d * Phi^{-1}(u_d)``,
      defined on the open unit cube; carries uniform measure to a normal law.
    * ``composed``: ``maps[0](maps[1](...maps[-1](x)))``; the input domain is
      checked once, against the first map applied.
    """

    kind: str
    dim: int
    loc: np.ndarray = None
    scale: np.ndarray = None
    maps: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown transport kind {self.kind!r}")
        loc = np.broadcast_to(np.asarray(0.0 if self.loc is None else self.loc, float),
                              (self.dim,)).copy()
        scale = np.broadcast_to(np.asarray(1.0 if self.scale is None else self.scale, float),
                                (self.dim,)).copy()
        if np.any(scale <= 0):
            raise InvalidArgumentError("transport scale must be positive")
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", scale)
        if self.kind == "composed":
            if not self.maps:
                raise InvalidArgumentError("composed map needs at least one map")
            if any(m.dim != self.dim for m in self.maps):
                raise InvalidArgumentError("composed maps must share one dimension")

    @property
    def id(self):
        if self.kind == "identity":
            return "identity"
        if self.kind == "composed":
            return "compose(" + ",".join(m.id for m in self.maps) + ")"
        loc = ",".join(f"{v:.6g}" for v in self.loc)
        scale = ",".join(f"{v:.6g}" for v in self.scale)
        return f"{self.kind}(loc=[{loc}],scale=[{scale}])"

    def check_domain(self, X):
        if self.kind == "inverse-cdf-componentwise":
            if np.any(X <= 0.0) or np.any(X >= 1.0):
                raise DomainError("inverse-cdf map is defined on the open unit cube")
        elif self.kind == "composed":
            self.maps[-1].check_domain(X)
        if not np.all(np.isfinite(X)):
            raise DomainError("non-finite input to transport map")

    def apply(self, X, check=True):
        X = as_points(X, self.dim)
        if check:
            self.check_domain(X)
        if self.kind == "identity":
            return X.copy()
        if self.kind == "erf-componentwise":
            return erf((X - self.loc) / self.scale)
        if self.kind == "inverse-cdf-componentwise":
            return self.loc + self.scale * ndtri(X)
        for m in reversed(self.maps):
            X = m.apply(X, check=False)
        return X

    def jacobian_diag(self, X):
        """Diagonal of ``dS/dx`` at each row of ``X``, shape ``(n, D)``."""
        X = as_points(X, self.dim)
        if self.kind == "identity":
            return np.ones_like(X)
        if self.kind == "erf-componentwise":
            w = (X - self.loc) / self.scale
            return 2.0 / np.sqrt(np.pi) * np.exp(-w * w) / self.scale
        if self.kind == "inverse-cdf-componentwise":
            z = ndtri(X)
            return self.scale * np.sqrt(2.0 * np.pi) * np.exp(0.5 * z * z)
        J = np.ones_like(X)
        for m in reversed(self.maps):
            J = J * m.jacobian_diag(X)
            X = m.apply(X, check=False)
        return J


def identity_map(dim):
    return TransportMap("identity", dim)


def erf_map(dim, loc=0.0, scale=1.0):
    return TransportMap("erf-componentwise", dim, loc, scale)


def inverse_cdf_map(dim, mean=0.0, std=1.0):
    return TransportMap("inverse-cdf-componentwise", dim, mean, std)


def compose(*maps):
    return TransportMap("composed", maps[0].dim, maps=tuple(maps))


def apply(tmap, x):
    """Image of a single point or a point array under ``tmap``."""
    x = np.asarray(x, dtype=float)
    out = tmap.apply(x)
    if x.ndim == 1 and (tmap.dim > 1 or x.size == 1):
        return out[0]
    return out


def pushforward_quadrature(tmap, X, phi):
    """Equal-weight quadrature ``(1/N) sum_n phi(S(x_n))`` of ``int phi dmu``.

    ``phi`` maps an ``(N, D)`` array to ``N`` values.  ``X`` may be a
    :class:`~tmm.discrepancy.PointSequence` or a plain array.
    """
    points = getattr(X, "points", X)
    Y = tmap.apply(points)
    return float(np.mean(np.asarray(phi(Y), dtype=float)))
