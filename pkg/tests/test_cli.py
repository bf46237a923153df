"""End-to-end tests for the command-line harness."""

import numpy as np
import pytest

from holmes_colloc import cli
from holmes_colloc.analysis import load_report


def write_config(path, **keys):
    lines = [f"{k}={v}" for k, v in keys.items()]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def run_cli(sub, cfg_path, out_dir, extra=()):
    return cli.main([sub, "--config", cfg_path, "--out", str(out_dir), *extra])


def test_nodes_disk_count(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm2d-circle", grids=229)
    assert run_cli("nodes", cfg, tmp_path) == 0
    rows = (tmp_path / "nodes-000.csv").read_text().strip().splitlines()
    m = len(rows) - 1
    assert abs(m - 229) <= 0.15 * 229


def test_nodes_perturbed_rerun_is_identical(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm2d-circle",
                       grids=229, perturbation=0.2, seed=3)
    assert run_cli("nodes", cfg, tmp_path) == 0
    first = (tmp_path / "nodes-000.csv").read_bytes()
    assert run_cli("nodes", cfg, tmp_path) == 0
    assert (tmp_path / "nodes-000.csv").read_bytes() == first


def test_nodes_lshape_inside_polygon(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="l-shape", grids=300)
    assert run_cli("nodes", cfg, tmp_path) == 0
    rows = (tmp_path / "nodes-000.csv").read_text().strip().splitlines()[1:]
    pts = np.array([[float(t) for t in r.split(",")[:2]] for r in rows])
    x, y = pts[:, 0], pts[:, 1]
    tol = 1e-9
    assert np.all((x >= -1 - tol) & (x <= 1 + tol)
                  & (y >= -1 - tol) & (y <= 1 + tol))
    # quadrant III is outside the L
    assert not np.any((x < -tol) & (y < -tol))


def test_basis_partition_of_unity_and_gamma(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                       grids=21, n=2, p=2, R_hat=4.0, samples=101)
    assert run_cli("basis", cfg, tmp_path) == 0
    rows = (tmp_path / "basis.csv").read_text().strip().splitlines()
    header = rows[0].split(",")
    i_sum = header.index("sum_phi")
    sums = {float(r.split(",")[i_sum]) for r in rows[1:]}
    assert max(abs(s - 1.0) for s in sums) <= 1e-9
    meta = dict(line.split("=", 1)
                for line in (tmp_path / "basis.meta").read_text().splitlines())
    assert float(meta["gamma"]) == pytest.approx(1.521, abs=5e-4)


def test_basis_rows_respect_truncation(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                       grids=21, n=2, p=2, R_hat=4.0, samples=41)
    assert run_cli("basis", cfg, tmp_path) == 0
    meta = dict(line.split("=", 1)
                for line in (tmp_path / "basis.meta").read_text().splitlines())
    r_p = float(meta["r_p"])
    nodes = np.linspace(-1.0, 1.0, 21)
    rows = (tmp_path / "basis.csv").read_text().strip().splitlines()[1:]
    listed = set()
    for r in rows:
        fields = r.split(",")
        x, a = float(fields[0]), int(fields[1])
        assert abs(x - nodes[a]) <= r_p * (1.0 + 1e-6)
        listed.add((round(x, 12), a))
    # far pairs must be absent: the left endpoint vs the last node
    assert (-1.0, 20) not in listed


def test_solve_star_error_is_small(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="star-poisson-u1",
                       grids=300, n=2, R_hat=4.0)
    assert run_cli("solve", cfg, tmp_path) == 0
    meta = dict(line.split("=", 1)
                for line in (tmp_path / "solve.meta").read_text().splitlines())
    e = float(meta["E_L2"])
    assert np.isfinite(e) and 0 < e < 1.0


def test_solve_reports_tiny_residual(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm2d-circle", grids=229)
    assert run_cli("solve", cfg, tmp_path) == 0
    meta = dict(line.split("=", 1)
                for line in (tmp_path / "solve.meta").read_text().splitlines())
    assert float(meta["residual"]) <= 1e-10


def test_unknown_benchmark_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.cfg", benchmark="no-such-benchmark",
                       grids=100)
    assert run_cli("solve", cfg, tmp_path) == 2
    assert "no-such-benchmark" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                       grids=21, wavelength=2.5)
    assert run_cli("solve", cfg, tmp_path) == 2
    assert "wavelength" in capsys.readouterr().err


def test_duplicate_key_exits_2(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("benchmark=helm1d-essential\ngrids=21\ngrids=41\n")
    assert run_cli("solve", str(path), tmp_path) == 2


def test_converge_grid_minimum_enforced(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                       grids="21,41")
    assert run_cli("converge", cfg, tmp_path) == 2


def test_converge_helm1d_rate(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                       grids="21,41,81", n=2, R_hat=4.0)
    assert run_cli("converge", cfg, tmp_path) == 0
    rep = load_report(str(tmp_path / "report.csv"))
    assert rep.fitted_rate_L2 >= 1.7


def test_converge_rerun_identical(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                       grids="21,41,81", perturbation=0.2, seed=11)
    assert run_cli("converge", cfg, tmp_path) == 0
    first = (tmp_path / "report.csv").read_bytes()
    meta_first = (tmp_path / "run.meta").read_bytes()
    assert run_cli("converge", cfg, tmp_path) == 0
    assert (tmp_path / "report.csv").read_bytes() == first
    assert (tmp_path / "run.meta").read_bytes() == meta_first


def test_converge_lshape_stress_rate(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="l-shape",
                       grids="200,400,800", n=2, R_hat=6.0)
    assert run_cli("converge", cfg, tmp_path) == 0
    rep = load_report(str(tmp_path / "report.csv"))
    assert 0.39 <= rep.fitted_rate_H1 <= 0.69


def test_converge_all_grids_failing_exits_1(tmp_path, capsys):
    # fewer nodes than quartic moment constraints on every grid
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                       grids="2,3,4", n=4, R_hat=6.0)
    assert run_cli("converge", cfg, tmp_path) == 1
    assert "failed" in capsys.readouterr().err


def test_run_meta_round_trip(tmp_path):
    cfg_path = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                            grids="21,41,81", n=3, p=2, R_hat=5.0,
                            perturbation=0.1, seed=7, tol="1e-9")
    assert run_cli("converge", cfg_path, tmp_path) == 0
    cfg = cli.parse_config(cfg_path, "converge")
    echoed = cli.parse_config(str(tmp_path / "run.meta"), "converge")
    import dataclasses
    want = dataclasses.replace(cfg, out=str(tmp_path))
    assert echoed == want


def test_bad_threads_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm1d-essential",
                       grids=21)
    assert run_cli("solve", cfg, tmp_path, extra=("--threads", "0")) == 2
    assert "threads" in capsys.readouterr().err


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", benchmark="helm2d-circle",
                       grids=229, perturbation=0.2, seed=1)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run_cli("nodes", cfg, out_a) == 0
    assert run_cli("nodes", cfg, out_b, extra=("--seed", "2")) == 0
    a = (out_a / "nodes-000.csv").read_bytes()
    b = (out_b / "nodes-000.csv").read_bytes()
    assert a != b
