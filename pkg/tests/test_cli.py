import json
import os

import numpy as np
import pytest

from tmm.cli import main

SMALL = """
[run]
N = 8
D = 1
[optimizer]
restarts = 2
max_iters = 300
[forward]
N = 12
aux_factor = 6
max_iters = 30
[grid]
T = 0.5
steps = 2
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return str(p)


def read(path):
    with open(path) as fh:
        return fh.read().splitlines()


def test_sequence(cfg, tmp_path):
    out = str(tmp_path / "pts.csv")
    assert main(["sequence", "--config", cfg, "--out", out, "-N", "16", "--restarts", "1"]) == 0
    lines = read(out)
    assert lines[0] == "x1" and len(lines) == 17
    cert = json.load(open(str(tmp_path / "pts.cert.json")))
    assert {"value", "method", "kernel_id", "seed"} <= set(cert)
    assert cert["value"] == pytest.approx(0.062, rel=0.1)


def test_discrepancy_table(cfg, tmp_path):
    assert main(["discrepancy-table", "--config", cfg, "--Ns", "8,16", "--Ds", "1", "--out", str(tmp_path)]) == 0
    T = np.loadtxt(tmp_path / "discrepancy_table.csv", delimiter=",", skiprows=1)
    assert read(tmp_path / "discrepancy_table.csv")[0] == "N,D,E_sea,E_optimized"
    assert T.shape == (2, 4)


def test_discrepancy_table_needs_lattice_kernel(cfg, tmp_path):
    assert main(["discrepancy-table", "--config", cfg, "--kernel", "gaussian", "--out", str(tmp_path)]) == 2


def test_simulate(cfg, tmp_path):
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert read(tmp_path / "t_0.csv")[0] == "x1,x2"
    assert len(read(tmp_path / "t_2.csv")) == 13
    assert read(tmp_path / "certificates.csv")[0] == "t,E,method,seed"


def test_price(cfg, tmp_path):
    assert main(["price", "--config", cfg, "--payoff", "call(F, strike=0.03); const(1)",
                 "--out", str(tmp_path)]) == 0
    for j in range(3):
        S = np.loadtxt(tmp_path / f"surface_t{j}.csv", delimiter=",", skiprows=1)
        assert S.shape == (12, 2)
        assert os.path.exists(tmp_path / f"sensitivities_t{j}.csv")
    lines = read(tmp_path / "price.csv")
    assert lines[0] == "instrument,payoff,price"
    assert float(lines[2].rsplit(",", 1)[1]) == pytest.approx(1.0)


def test_price_martingale(cfg, tmp_path):
    assert main(["price", "--config", cfg, "--martingale", "--out", str(tmp_path)]) == 0


def test_figure_kernels(tmp_path):
    assert main(["figure", "kernels", "--out", str(tmp_path)]) == 0
    for name in ("kernel_periodic.csv", "kernel_transported.csv"):
        lines = read(tmp_path / name)
        assert lines[0] == "x1,x2,K" and len(lines) == 4097


def test_figure_sabr_small(cfg, tmp_path):
    assert main(["figure", "sabr", "--config", cfg, "-N", "10", "--out", str(tmp_path)]) == 0
    for t in ("0.02", "2", "12"):
        assert len(read(tmp_path / f"sabr_t{t}.csv")) == 11


def test_quadrature(cfg, tmp_path):
    assert main(["quadrature", "--config", cfg, "--witnesses", "20", "--out", str(tmp_path)]) == 0
    Q = np.loadtxt(tmp_path / "quadrature.csv", delimiter=",", skiprows=1)
    assert Q.shape == (20, 6)
    assert Q[:, -1].max() <= 1 + 1e-9


def test_exit_codes(cfg, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nseed = x\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["price", "--config", cfg, "--payoff", "nonsense"]) == 2
    assert main(["sequence", "--kernel", "lattice-matern:abc"]) == 2


def test_numerical_failure_exit_code(cfg, tmp_path, monkeypatch):
    import tmm.cli as cli
    from tmm.errors import NumericalError

    def boom(*a, **k):
        raise NumericalError("forced")
    monkeypatch.setattr(cli, "propagate", boom)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_seed_flag_changes_output(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", cfg, "--seed", "1", "--out", str(a)])
    main(["simulate", "--config", cfg, "--seed", "2", "--out", str(b)])
    assert read(a / "t_1.csv") != read(b / "t_1.csv")
