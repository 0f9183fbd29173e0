"""Command-line front end.

Subcommands::

    tmm sequence           optimized point set and certificate sidecar
    tmm discrepancy-table  SEA bound against optimized discrepancy over (N, D)
    tmm simulate           forward particle flow, one CSV per grid time
    tmm price              fair-value surfaces, prices and sensitivities
    tmm figure             plot data: kernels, distributions or sabr
    tmm quadrature         quadrature errors against their bounds on kernel sections

Global flags ``--config``, ``--seed``, ``--threads`` and ``--out`` come
before or after the subcommand.  Exit codes: 0 success, 2 configuration or
argument error, 3 numerical failure.

Seeds: every command draws from the master seed ``s`` (``--seed`` or
``[run] seed``).  Independent components take ``SeedSequence(s).spawn(k)``
children in a fixed order, so results do not depend on ``--threads``.
Floats are written with 17 significant digits, so identical inputs give
byte-identical files.
"""

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from .backward import backward_solve, parse_payoff, sensitivity, transition_matrices
from .discrepancy import (EmpiricalMeasure, OptimizerOptions, TransportedMeasure,
                          UniformMeasure, baseline_sequence, discrepancy,
                          minimize_discrepancy)
from .errors import ConfigError, InvalidArgumentError, NumericalError, TmmError
from .forward import propagate
from .kernels import GaussianKernel, TensorMaternKernel, transported_kernel
from .lattice import Lattice, LatticeKernel, matern_spectral_profile, sea_bound
from .transport import erf_map, inverse_cdf_map

log = logging.getLogger("tmm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
FLOAT_FORMAT = "%.17g"

#: Snapshot times of the SABR figure and the grid that reaches them.
SABR_FIGURE_TIMES = (0.02, 2.0, 12.0)
SABR_FIGURE_GRID = np.concatenate([[0.0, 0.02], np.arange(0.25, 2.0, 0.25),
                                   np.arange(2.0, 12.0 + 1e-9, 1.0)])


# -- output helpers -------------------------------------------------------------

def write_csv(path, array, header):
    A = np.atleast_2d(np.asarray(array, dtype=float))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savetxt(path, A, fmt=FLOAT_FORMAT, delimiter=",", header=",".join(header), comments="")


def write_json(path, obj):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _coords(D, prefix="x"):
    return [f"{prefix}{d + 1}" for d in range(D)]


def _certificate_record(cert, seed):
    return {"value": cert.value, "method": cert.method, "kernel_id": cert.kernel_id,
            "mu_id": cert.mu_id, "seed": seed, "samples": cert.samples,
            "standard_error": cert.standard_error,
            "status": cert.meta.get("status"), "iterations": cert.meta.get("iterations")}


# -- configuration --------------------------------------------------------------

def _load_config(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg.run.threads = args.threads
    if args.out is not None:
        cfg.run.out = args.out
    return cfg


def _apply_kernel_spec(cfg, spec):
    """``family[:scale]``, e.g. ``lattice-matern`` or ``gaussian:0.1``."""
    if not spec:
        return
    family, _, scale = spec.partition(":")
    cfg.kernel.family = family.strip()
    if scale.strip():
        try:
            cfg.kernel.scale = float(scale)
        except ValueError:
            raise ConfigError(f"bad kernel scale in {spec!r}") from None
    cfgmod.validate(cfg)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


# -- subcommands ----------------------------------------------------------------

def cmd_sequence(args, cfg):
    _apply_kernel_spec(cfg, args.kernel)
    N = args.N if args.N is not None else cfg.run.N
    D = args.D if args.D is not None else cfg.run.D
    kernel = cfgmod.build_kernel(cfg, D)
    mu = cfgmod.build_measure(cfg, D)
    overrides = {} if args.restarts is None else {"restarts": args.restarts}
    seq = minimize_discrepancy(kernel, mu, N, cfgmod.optimizer_options(cfg, **overrides))
    out = cfg.run.out if cfg.run.out.endswith(".csv") else os.path.join(cfg.run.out, "points.csv")
    write_csv(out, seq.points, _coords(D))
    write_json(out[:-4] + ".cert.json", _certificate_record(seq.certificate, cfg.run.seed))
    print(f"E = {seq.certificate.value:.6g} ({seq.certificate.method}) -> {out}")


def discrepancy_table(cfg, Ns, Ds):
    """Rows ``(N, D, E_sea, E_optimized)``; failed cells hold NaN."""
    if not cfg.kernel.family.startswith("lattice"):
        raise ConfigError("discrepancy-table needs a lattice kernel family (closed-form discrepancy)")
    seeds = np.random.SeedSequence(cfg.run.seed).spawn(len(Ns) * len(Ds))
    rows = []
    for i, D in enumerate(Ds):
        kernel = cfgmod.build_kernel(cfg, D)
        mu = cfgmod.build_measure(cfg, D)
        for k, N in enumerate(Ns):
            seed = int(seeds[i * len(Ns) + k].generate_state(1)[0])
            try:
                sea = sea_bound(kernel.spectral, N)
            except TmmError as exc:
                log.error("SEA failed for N=%d D=%d: %s", N, D, exc)
                sea = math.nan
            try:
                opt = minimize_discrepancy(kernel, mu, N, cfgmod.optimizer_options(cfg, seed=seed))
                e = opt.certificate.value
            except TmmError as exc:
                log.error("optimizer failed for N=%d D=%d: %s", N, D, exc)
                e = math.nan
            rows.append((N, D, sea, e))
            log.info("N=%d D=%d sea=%.4g opt=%.4g", N, D, sea, e)
    return np.array(rows, dtype=float)


def cmd_discrepancy_table(args, cfg):
    _apply_kernel_spec(cfg, args.kernel)
    table = discrepancy_table(cfg, _int_list(args.Ns), _int_list(args.Ds))
    out = os.path.join(cfg.run.out, "discrepancy_table.csv")
    write_csv(out, table, ["N", "D", "E_sea", "E_optimized"])
    for N, D, s, e in table:
        print(f"N={int(N):5d} D={int(D):4d}  E_sea={s:.4g}  E_optimized={e:.4g}")


def _flow(cfg, t_grid=None, N=None):
    model = cfgmod.build_model(cfg)
    grid = cfgmod.build_grid(cfg) if t_grid is None else t_grid
    return propagate(model, None, model.x0, grid, cfg.forward.N if N is None else N,
                     cfgmod.forward_options(cfg))


def cmd_simulate(args, cfg):
    flow = _flow(cfg)
    out = cfg.run.out
    for j in range(len(flow.times)):
        write_csv(os.path.join(out, f"t_{j}.csv"), flow.points(j), _coords(flow.D))
    _write_certificates(os.path.join(out, "certificates.csv"), flow)
    print(f"{len(flow.times)} snapshots of {flow.N} particles -> {out}")


def _write_certificates(path, flow):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write("t,E,method,seed\n")
        for t, c in zip(flow.times, flow.certificates):
            fh.write(f"{FLOAT_FORMAT % t},{FLOAT_FORMAT % c.value},{c.method},{flow.seed}\n")


def cmd_price(args, cfg):
    payoff = parse_payoff(args.payoff or cfg.pricing.payoff)
    flow = _flow(cfg)
    martingale = bool(args.martingale or cfg.forward.martingale)
    mats = transition_matrices(flow, martingale=martingale)
    pay_times = cfg.pricing.pay_times
    surface = backward_solve(flow, mats, payoff, pay_times, payoff.ids)
    out = cfg.run.out
    M = len(payoff.ids)
    names = [f"v{m + 1}" for m in range(M)]
    for j, V in enumerate(surface.values):
        write_csv(os.path.join(out, f"surface_t{j}.csv"), V, names)
    with open(os.path.join(out, "price.csv"), "w") as fh:
        fh.write("instrument,payoff,price\n")
        for m, (pid, p) in enumerate(zip(payoff.ids, surface.price)):
            fh.write(f"v{m + 1},\"{pid}\",{FLOAT_FORMAT % p}\n")
    cols = [f"d{x}_v{m + 1}" for x in _coords(flow.D) for m in range(M)]
    for j in range(len(flow.times)):
        S = sensitivity(flow, surface, j, lam=cfg.pricing.lam)
        write_csv(os.path.join(out, f"sensitivities_t{j}.csv"), S.reshape(len(S), -1), cols)
    for pid, p in zip(payoff.ids, surface.price):
        print(f"{pid}: {p:.10g}")


def _figure_kernels(cfg, out, n_grid):
    g = (np.arange(n_grid) + 0.5) / n_grid
    X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    lat = Lattice.unit(2)
    periodic = LatticeKernel(lat, matern_spectral_profile(lat))
    # periodic kernel on the centred cell [-1/2, 1/2)^2
    Xc = X - 0.5
    write_csv(os.path.join(out, "kernel_periodic.csv"),
              np.column_stack([Xc, periodic(Xc, np.zeros((1, 2)))[:, 0]]), ["x1", "x2", "K"])
    Xr = 6.0 * X - 3.0
    transported = transported_kernel(TensorMaternKernel(2, 1.0), erf_map(2, 0.0, np.sqrt(2.0)))
    write_csv(os.path.join(out, "kernel_transported.csv"),
              np.column_stack([Xr, transported(Xr, np.zeros((1, 2)))[:, 0]]), ["x1", "x2", "K"])


def _figure_distributions(cfg, out, N):
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.run.seed).spawn(3)]
    iid = baseline_sequence("iid-uniform", N, 2, seed=seeds[0]).points
    write_csv(os.path.join(out, "distribution_random.csv"), iid, ["x1", "x2"])
    lat = Lattice.unit(2)
    matern = minimize_discrepancy(LatticeKernel(lat, matern_spectral_profile(lat)),
                                  UniformMeasure.cell(lat), N,
                                  cfgmod.optimizer_options(cfg, seed=seeds[1], restarts=1))
    write_csv(os.path.join(out, "distribution_matern.csv"), matern.points, ["x1", "x2"])
    kernel = transported_kernel(GaussianKernel(2, 0.1), erf_map(2, 0.0, np.sqrt(2.0)))
    gauss = minimize_discrepancy(kernel, TransportedMeasure(inverse_cdf_map(2)), N,
                                 OptimizerOptions(restarts=1, max_iters=800, seed=seeds[2],
                                                  surrogate_samples=2048,
                                                  certificate_samples=cfg.optimizer.certificate_samples))
    write_csv(os.path.join(out, "distribution_gaussian.csv"), gauss.points, ["x1", "x2"])
    write_json(os.path.join(out, "distributions.cert.json"),
               {"matern": _certificate_record(matern.certificate, seeds[1]),
                "gaussian": _certificate_record(gauss.certificate, seeds[2])})


def _figure_sabr(cfg, out, N):
    flow = _flow(cfg, SABR_FIGURE_GRID, N)
    for t in SABR_FIGURE_TIMES:
        j = int(np.flatnonzero(np.isclose(flow.times, t))[0])
        write_csv(os.path.join(out, f"sabr_t{t:g}.csv"), flow.points(j), ["F", "alpha"])
    _write_certificates(os.path.join(out, "sabr_certificates.csv"), flow)


def cmd_figure(args, cfg):
    out = cfg.run.out
    if args.which == "kernels":
        _figure_kernels(cfg, out, args.grid)
    elif args.which == "distributions":
        _figure_distributions(cfg, out, args.N or 256)
    else:
        _figure_sabr(cfg, out, args.N or cfg.forward.N)
    print(f"{args.which} figure data -> {out}")


def quadrature_check(kernel, mu, Y, cert_value, n_witness, seed):
    """Errors of ``phi = K(., x0)`` for random ``x0 ~ mu`` against ``E * sqrt(K(x0, x0))``.

    Returns rows ``(x0..., exact, estimate, error, bound, ratio)``.  The
    exact integral is closed form for lattice kernels on their cell and an
    empirical average otherwise.
    """
    rng = np.random.default_rng(seed)
    X0 = mu.sample(n_witness, rng)
    est = kernel(X0, Y).mean(axis=1)
    if isinstance(kernel, LatticeKernel):
        exact = np.full(n_witness, kernel.mean_value)
    elif isinstance(mu, EmpiricalMeasure):
        exact = kernel(X0, mu.points).mean(axis=1)
    else:
        raise InvalidArgumentError("quadrature check needs exact integrals of kernel sections")
    err = np.abs(exact - est)
    bound = cert_value * np.sqrt(kernel.paired(X0, X0))
    ratio = np.divide(err, bound, out=np.zeros_like(err), where=bound > 0)
    return np.column_stack([X0, exact, est, err, bound, ratio])


def cmd_quadrature(args, cfg):
    _apply_kernel_spec(cfg, args.kernel)
    N = args.N if args.N is not None else cfg.run.N
    D = args.D if args.D is not None else cfg.run.D
    kernel = cfgmod.build_kernel(cfg, D)
    mu = cfgmod.build_measure(cfg, D)
    s_opt, s_wit = [int(s.generate_state(1)[0])
                    for s in np.random.SeedSequence(cfg.run.seed).spawn(2)]
    if args.points:
        Y = np.loadtxt(args.points, delimiter=",", skiprows=1, ndmin=2)
        cert = discrepancy(kernel, mu, Y)
    else:
        seq = minimize_discrepancy(kernel, mu, N, cfgmod.optimizer_options(cfg, seed=s_opt))
        Y, cert = seq.points, seq.certificate
    if cert.method != "closed-form":
        raise ConfigError("quadrature check needs a closed-form discrepancy (lattice kernel)")
    rows = quadrature_check(kernel, mu, Y, cert.value, args.witnesses, s_wit)
    out = os.path.join(cfg.run.out, "quadrature.csv")
    write_csv(out, rows, _coords(D, "x0_") + ["exact", "estimate", "error", "bound", "ratio"])
    print(f"E = {cert.value:.6g}; max error/bound = {rows[:, -1].max():.6g} -> {out}")


# -- entry point ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="tmm", parents=[common], description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sequence", parents=[common], help="optimized point set")
    s.add_argument("--kernel", help="family[:scale], e.g. lattice-matern or gaussian:0.1")
    s.add_argument("-N", type=int)
    s.add_argument("-D", type=int)
    s.add_argument("--restarts", type=int)
    s.set_defaults(func=cmd_sequence)

    s = sub.add_parser("discrepancy-table", parents=[common], help="SEA vs optimized table")
    s.add_argument("--kernel")
    s.add_argument("--Ns", default="16,128,512")
    s.add_argument("--Ds", default="1,16")
    s.set_defaults(func=cmd_discrepancy_table)

    s = sub.add_parser("simulate", parents=[common], help="forward particle flow")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("price", parents=[common], help="backward pricing")
    s.add_argument("--payoff", help="payoff specification; instruments separated by ';'")
    s.add_argument("--martingale", action="store_true",
                   help="Sinkhorn-scale transition matrices to bi-stochastic")
    s.set_defaults(func=cmd_price)

    s = sub.add_parser("figure", parents=[common], help="plot data")
    s.add_argument("which", choices=("kernels", "distributions", "sabr"))
    s.add_argument("-N", type=int, help="points per set (default 256) or particles (sabr)")
    s.add_argument("--grid", type=int, default=64, help="grid points per axis (kernels)")
    s.set_defaults(func=cmd_figure)

    s = sub.add_parser("quadrature", parents=[common], help="quadrature bound check")
    s.add_argument("--kernel")
    s.add_argument("-N", type=int)
    s.add_argument("-D", type=int)
    s.add_argument("--points", help="CSV of points to check instead of optimizing")
    s.add_argument("--witnesses", type=int, default=100)
    s.set_defaults(func=cmd_quadrature)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "threads", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except (ConfigError, InvalidArgumentError, OSError) as exc:
        print(f"tmm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, TmmError, FloatingPointError) as exc:
        print(f"tmm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
