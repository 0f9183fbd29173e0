"""Experiment configuration: typed sections read from and written to INI text.

Example::

    [run]
    seed = 7
    out = results

    [kernel]
    family = lattice-matern
    scale =

    [model]
    kind = sabr
    F0 = 0.03

Empty values mean "use the default".  Vectors are comma separated and
matrices separate rows with ``;``.  ``emit`` and ``parse`` are inverse:
``parse(emit(cfg)) == cfg``.
"""

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field

import numpy as np

from .discrepancy import OptimizerOptions, TransportedMeasure, UniformMeasure
from .errors import ConfigError, InvalidArgumentError
from .forward import ForwardOptions
from .kernels import GaussianKernel, TensorMaternKernel, ZonalKernel, transported_kernel
from .lattice import (Lattice, LatticeKernel, gaussian_spectral_profile,
                      matern_spectral_profile)
from .sde import SabrModel, SdeModel, diffusion_preset, drift_preset
from .transport import erf_map, identity_map, inverse_cdf_map

KERNEL_FAMILIES = ("lattice-matern", "lattice-gaussian", "tensor-matern", "gaussian", "zonal")
TRANSPORTS = ("identity", "erf", "inverse-cdf")
MEASURES = ("auto", "uniform", "gaussian")


@dataclass
class RunSection:
    seed: int = 0
    out: str = "out"
    threads: int = 1
    N: int = 16
    D: int = 1


@dataclass
class KernelSection:
    """Kernel family, scale and optional transport.

    ``measure = auto`` pairs lattice families with the uniform law on the
    lattice cell and other families with the uniform law on the unit cube;
    ``gaussian`` uses the normal law ``N(loc, scale^2)`` per coordinate.
    """

    family: str = "lattice-matern"
    scale: typing.Optional[float] = None
    activation: str = "exp"
    transport: str = "identity"
    transport_loc: float = 0.0
    transport_scale: float = 1.0
    measure: str = "auto"
    truncation: float = 1e-8


@dataclass
class LatticeSection:
    """Generator rows; empty means the unit lattice ``Z^D``."""

    generators: typing.Optional[tuple] = None


@dataclass
class ModelSection:
    """``kind = sabr`` or ``custom`` with named drift and diffusion presets."""

    kind: str = "sabr"
    F0: float = 0.03
    alpha0: float = 0.10
    beta: float = 1.0
    nu: float = 0.10
    shift: float = 0.0
    rho12: float = 0.5
    dim: int = 2
    y0: typing.Optional[tuple] = None
    drift: str = "zero"
    drift_value: typing.Optional[tuple] = None
    diffusion: str = "zero"
    diffusion_value: typing.Optional[tuple] = None
    correlation: typing.Optional[tuple] = None


@dataclass
class GridSection:
    """Uniform grid of ``steps`` steps on ``[0, T]`` unless ``times`` is given."""

    T: float = 2.0
    steps: int = 8
    times: typing.Optional[tuple] = None


@dataclass
class OptimizerSection:
    restarts: int = 5
    max_iters: int = 10_000
    grad_tol: typing.Optional[float] = None
    surrogate_samples: int = 4096
    certificate_samples: int = 100_000


@dataclass
class ForwardSection:
    N: int = 200
    aux_factor: int = 20
    max_dt: float = 1.0 / 64
    kernel_scale: float = 1.0
    restarts: int = 1
    max_iters: int = 100
    match_moments: bool = True
    martingale: bool = False


@dataclass
class PricingSection:
    payoff: str = "call(F, strike=0.03, T=2)"
    pay_times: typing.Optional[tuple] = None
    lam: typing.Optional[float] = None


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    kernel: KernelSection = field(default_factory=KernelSection)
    lattice: LatticeSection = field(default_factory=LatticeSection)
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    forward: ForwardSection = field(default_factory=ForwardSection)
    pricing: PricingSection = field(default_factory=PricingSection)


# -- text form -----------------------------------------------------------------

def _hints(cls):
    return typing.get_type_hints(cls)


def _base(tp):
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    return args[0] if args else tp


def _emit_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(", ".join(repr(float(x)) for x in row) for row in v)
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _parse_value(text, tp, where):
    text = text.strip()
    optional = type(None) in typing.get_args(tp)
    base = _base(tp)
    if text == "":
        if optional:
            return None
        if base is str:
            return ""
        raise ConfigError(f"{where}: value required")
    try:
        if base is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        if base is tuple:
            if ";" in text:
                return tuple(tuple(float(x) for x in row.split(",")) for row in text.split(";"))
            return tuple(float(x) for x in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {getattr(base, '__name__', base)}") from None


def emit(cfg):
    """INI text of ``cfg``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec in dataclasses.fields(cfg):
        obj = getattr(cfg, sec.name)
        cp[sec.name] = {f.name: _emit_value(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse(text):
    """Configuration from INI text; missing keys keep their defaults."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    cfg = ExperimentConfig()
    known = {f.name for f in dataclasses.fields(cfg)}
    for name in cp.sections():
        if name not in known:
            raise ConfigError(f"unknown section [{name}]")
        obj = getattr(cfg, name)
        hints = _hints(type(obj))
        for key, value in cp[name].items():
            if key not in hints:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            setattr(obj, key, _parse_value(value, hints[key], f"[{name}] {key}"))
    validate(cfg)
    return cfg


def load(path):
    with open(path) as fh:
        return parse(fh.read())


def validate(cfg):
    k = cfg.kernel
    if k.family not in KERNEL_FAMILIES:
        raise ConfigError(f"kernel family must be one of {KERNEL_FAMILIES}, got {k.family!r}")
    if k.transport not in TRANSPORTS:
        raise ConfigError(f"transport must be one of {TRANSPORTS}, got {k.transport!r}")
    if k.measure not in MEASURES:
        raise ConfigError(f"measure must be one of {MEASURES}, got {k.measure!r}")
    if cfg.model.kind not in ("sabr", "custom"):
        raise ConfigError(f"model kind must be sabr or custom, got {cfg.model.kind!r}")
    if cfg.run.N < 1 or cfg.run.D < 1:
        raise ConfigError("N and D must be positive")
    if cfg.grid.steps < 1 or cfg.grid.T <= 0:
        raise ConfigError("grid needs T > 0 and steps >= 1")


# -- builders ----------------------------------------------------------------

def build_lattice(cfg, D):
    G = cfg.lattice.generators
    if G is None:
        return Lattice.unit(D)
    G = np.atleast_2d(np.array(G, dtype=float))
    if G.shape != (D, D):
        raise ConfigError(f"lattice generators must be {D}x{D}")
    return Lattice(G)


def build_transport(cfg, D):
    k = cfg.kernel
    if k.transport == "identity":
        return identity_map(D)
    if k.transport == "erf":
        return erf_map(D, k.transport_loc, k.transport_scale)
    return inverse_cdf_map(D, k.transport_loc, k.transport_scale)


def build_kernel(cfg, D):
    """Kernel of the ``[kernel]`` section in dimension ``D``."""
    k = cfg.kernel
    try:
        if k.family == "lattice-matern":
            lat = build_lattice(cfg, D)
            return LatticeKernel(lat, matern_spectral_profile(lat, k.scale, k.truncation))
        if k.family == "lattice-gaussian":
            lat = build_lattice(cfg, D)
            return LatticeKernel(lat, gaussian_spectral_profile(
                lat, 1.0 if k.scale is None else k.scale, k.truncation))
        scale = 1.0 if k.scale is None else k.scale
        if k.family == "tensor-matern":
            base = TensorMaternKernel(D, scale)
        elif k.family == "gaussian":
            base = GaussianKernel(D, scale)
        else:
            base = ZonalKernel(D, k.activation, scale)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None
    if k.transport == "identity":
        return base
    return transported_kernel(base, build_transport(cfg, D))


def build_measure(cfg, D):
    k = cfg.kernel
    if k.measure == "gaussian":
        return TransportedMeasure(inverse_cdf_map(D, k.transport_loc, k.transport_scale))
    if k.family.startswith("lattice"):
        return UniformMeasure.cell(build_lattice(cfg, D))
    return UniformMeasure(D)


def build_model(cfg):
    m = cfg.model
    try:
        if m.kind == "sabr":
            return SabrModel(m.F0, m.alpha0, m.beta, m.nu, m.shift, m.rho12)
        drift = drift_preset(m.drift, m.dim, m.drift_value)
        diffusion = diffusion_preset(m.diffusion, m.dim, m.diffusion_value)
        model = SdeModel(m.dim, drift, diffusion, m.correlation, name=f"custom({m.drift},{m.diffusion})")
        model.x0 = np.zeros(m.dim) if m.y0 is None else np.asarray(m.y0, float)
        return model
    except (InvalidArgumentError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid model: {exc}") from None


def build_grid(cfg):
    g = cfg.grid
    if g.times is not None:
        return np.asarray(g.times, dtype=float)
    return np.linspace(0.0, g.T, g.steps + 1)


def optimizer_options(cfg, seed=None, **overrides):
    o = cfg.optimizer
    opts = OptimizerOptions(restarts=o.restarts, max_iters=o.max_iters, grad_tol=o.grad_tol,
                            seed=cfg.run.seed if seed is None else seed, threads=cfg.run.threads,
                            surrogate_samples=o.surrogate_samples,
                            certificate_samples=o.certificate_samples)
    return dataclasses.replace(opts, **overrides)


def forward_options(cfg):
    f = cfg.forward
    opt = OptimizerOptions(restarts=f.restarts, max_iters=f.max_iters, threads=cfg.run.threads)
    return ForwardOptions(aux_factor=f.aux_factor, max_dt=f.max_dt, kernel_scale=f.kernel_scale,
                          seed=cfg.run.seed, match_moments=f.match_moments, optimizer=opt)
