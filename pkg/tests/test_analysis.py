"""Tests for error norms, rate fitting, and the convergence harness."""

import math

import numpy as np
import pytest

from holmes_colloc.analysis import (
    ConvergenceReport,
    ConvergenceRow,
    fit_rate,
    load_report,
    relative_error,
    run_convergence,
    save_report,
    solve_single,
)
from holmes_colloc.problems import make_patch_problem


def test_relative_error_exact_match_is_zero():
    v = np.array([1.0, -2.0, 3.0])
    assert relative_error(v, v) == 0.0


def test_relative_error_double_field_is_one():
    v = np.array([1.0, -2.0, 3.0])
    assert relative_error(2.0 * v, v) == pytest.approx(1.0, rel=1e-15)


def test_relative_error_two_node_example():
    # sqrt(((1-1)^2 + (0-1)^2) / (1^2 + 0^2)) = 1
    assert relative_error(np.array([1.0, 1.0]),
                          np.array([1.0, 0.0])) == pytest.approx(1.0)


def test_relative_error_vector_fields_componentwise():
    exact = np.array([[1.0, 0.0], [0.0, 2.0]])
    approx = np.array([[1.0, 1.0], [0.0, 2.0]])
    want = math.sqrt(1.0 / 5.0)
    assert relative_error(approx, exact) == pytest.approx(want, rel=1e-15)


def test_relative_error_rejects_zero_reference():
    with pytest.raises(ValueError):
        relative_error(np.ones(3), np.zeros(3))


def test_relative_error_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        relative_error(np.ones(3), np.ones(4))


def test_relative_error_scale_invariance():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(20)
    vh = v + 0.01 * rng.standard_normal(20)
    base = relative_error(vh, v)
    for c in (2.0, -3.5, 1e-6):
        assert relative_error(c * vh, c * v) == pytest.approx(base, rel=1e-12)


def rows_with_rate(rate, dim, C=3.7, ms=(100, 200, 400, 800)):
    return [ConvergenceRow(m=m, E_L2=C * (m ** (1.0 / dim)) ** -rate,
                           E_H1=C * (m ** (1.0 / dim)) ** -(rate - 1))
            for m in ms]


def test_fit_rate_recovers_exact_slope():
    rows = rows_with_rate(2.0, 1)
    assert fit_rate(rows, 1) == pytest.approx(2.0, abs=1e-10)


def test_fit_rate_recovers_singular_exponent():
    lam1 = 0.544483737
    rows = rows_with_rate(lam1, 2)
    assert fit_rate(rows, 2) == pytest.approx(lam1, abs=1e-9)


def test_fit_rate_h1_field_and_tail():
    rows = rows_with_rate(3.0, 2)
    assert fit_rate(rows, 2, "E_H1") == pytest.approx(2.0, abs=1e-10)
    assert fit_rate(rows, 2, tail=3) == pytest.approx(3.0, abs=1e-10)


def test_fit_rate_constant_multiple_invariance():
    rows = rows_with_rate(1.7, 2)
    scaled = [ConvergenceRow(m=r.m, E_L2=37.0 * r.E_L2, E_H1=r.E_H1)
              for r in rows]
    assert fit_rate(scaled, 2) == pytest.approx(fit_rate(rows, 2), abs=1e-12)


def test_fit_rate_needs_three_rows():
    rows = rows_with_rate(2.0, 1)[:2]
    with pytest.raises(ValueError):
        fit_rate(rows, 1)


def test_fit_rate_rejects_nonpositive_errors():
    rows = rows_with_rate(2.0, 1)
    rows[1] = ConvergenceRow(m=rows[1].m, E_L2=0.0, E_H1=1.0)
    with pytest.raises(ValueError):
        fit_rate(rows, 1)


def test_report_requires_sorted_rows():
    rows = tuple(reversed(rows_with_rate(2.0, 1)))
    with pytest.raises(ValueError):
        ConvergenceReport(benchmark="x", dim=1, n=2, p=2, R_hat=4.0, eps=1e-11,
                          perturbation=0.0, seed=0, rows=rows,
                          fitted_rate_L2=2.0, fitted_rate_H1=1.0)


def test_patch_convergence_hits_solver_floor():
    prob = make_patch_problem("poisson", 1, 2, seed=1)
    rep = run_convergence(prob, [21, 31, 41], n=2, p=2, R_hat=4.0)
    for row in rep.rows:
        assert row.E_L2 <= 1e-8
        assert row.note == ""


def test_helm1d_errors_decrease():
    rep = run_convergence("helm1d-essential", [21, 41, 81], n=2, p=2, R_hat=4.0)
    errs = [r.E_L2 for r in rep.rows]
    assert errs[0] > errs[1] > errs[2]
    assert rep.fitted_rate_L2 > 1.5


def test_run_convergence_is_deterministic():
    kw = dict(n=2, p=2, R_hat=4.0, perturbation=0.2, seed=5)
    rep1 = run_convergence("helm1d-essential", [21, 41, 81], **kw)
    rep2 = run_convergence("helm1d-essential", [21, 41, 81], **kw)
    for a, b in zip(rep1.rows, rep2.rows):
        assert a.m == b.m
        assert a.E_L2 == b.E_L2
        assert a.E_H1 == b.E_H1
    assert rep1.fitted_rate_L2 == rep2.fitted_rate_L2


def test_failed_grid_is_recorded_not_fatal():
    # 4 nodes cannot support a quartic basis (5 constraints); the row is
    # marked and the fit proceeds on the remaining grids
    rep = run_convergence("helm1d-essential", [4, 21, 41, 81], n=4, p=2,
                          R_hat=6.0)
    bad = rep.rows[0]
    assert math.isnan(bad.E_L2)
    assert bad.note != ""
    assert np.isfinite(rep.fitted_rate_L2)


def test_run_convergence_needs_three_grids():
    with pytest.raises(ValueError):
        run_convergence("helm1d-essential", [21, 41], n=2)


def test_zero_perturbation_matches_unperturbed():
    rep0 = run_convergence("helm1d-essential", [21, 41, 81], n=2, p=2,
                           R_hat=4.0, perturbation=0.0, seed=9)
    rep1 = run_convergence("helm1d-essential", [21, 41, 81], n=2, p=2,
                           R_hat=4.0, perturbation=0.0, seed=4)
    for a, b in zip(rep0.rows, rep1.rows):
        assert a.E_L2 == b.E_L2


def test_solve_single_accepts_spacing_and_count():
    by_count = solve_single("helm1d-essential", 21, n=2, p=2, R_hat=4.0)
    by_h = solve_single("helm1d-essential", 0.1, n=2, p=2, R_hat=4.0)
    assert by_count.nodes.m == 21
    assert by_h.nodes.m == 21
    assert by_count.E_L2 == by_h.E_L2


def test_solve_single_stress_error_skips_singular_node():
    # the corner stress is infinite; the H1 figure must still be finite
    run = solve_single("l-shape", 150, n=2, p=2, R_hat=6.0)
    assert np.isfinite(run.E_H1)
    assert 0 < run.E_H1 < 1.0
    assert 0 < run.E_L2 < 0.1


def test_report_round_trip(tmp_path):
    rows = tuple(rows_with_rate(2.37, 2, C=1.234567890123))
    rep = ConvergenceReport(benchmark="helm2d-circle", dim=2, n=2, p=2,
                            R_hat=6.0, eps=1e-11, perturbation=0.2, seed=3,
                            rows=rows, fitted_rate_L2=2.37,
                            fitted_rate_H1=1.37)
    path = tmp_path / "report.csv"
    save_report(rep, str(path))
    back = load_report(str(path))
    assert back.benchmark == rep.benchmark
    assert back.dim == rep.dim and back.n == rep.n and back.p == rep.p
    assert back.R_hat == rep.R_hat and back.eps == rep.eps
    assert back.perturbation == rep.perturbation and back.seed == rep.seed
    assert back.fitted_rate_L2 == rep.fitted_rate_L2
    assert back.fitted_rate_H1 == rep.fitted_rate_H1
    for a, b in zip(back.rows, rep.rows):
        assert a.m == b.m and a.E_L2 == b.E_L2 and a.E_H1 == b.E_H1


def test_report_notes_survive_round_trip(tmp_path):
    rows = (ConvergenceRow(m=4, E_L2=math.nan, E_H1=math.nan,
                           note="InfeasibleSupportError: too few neighbors"),
            ConvergenceRow(m=21, E_L2=1e-2, E_H1=1e-1),
            ConvergenceRow(m=41, E_L2=2.5e-3, E_H1=5e-2),
            ConvergenceRow(m=81, E_L2=6e-4, E_H1=2.4e-2))
    rep = ConvergenceReport(benchmark="helm1d-essential", dim=1, n=4, p=2,
                            R_hat=6.0, eps=1e-11, perturbation=0.0, seed=0,
                            rows=rows, fitted_rate_L2=2.07,
                            fitted_rate_H1=1.05)
    path = tmp_path / "report.csv"
    save_report(rep, str(path))
    back = load_report(str(path))
    assert back.rows[0].note == rows[0].note
    assert math.isnan(back.rows[0].E_L2)
    assert back.rows[1].note == ""


def test_load_report_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        load_report(str(path))
