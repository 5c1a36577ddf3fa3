"""Acceptance criteria, each run at its stated tolerance.

Every test appends one PASS/FAIL line that the conftest hook prints in the
terminal summary.
"""

import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from delaylearn.adjoint import (
    loss_gradient_discrete,
    loss_gradient_per_datum,
    loss_gradient_shifted,
    sensitivity_x0,
    solve_adjoint,
)
from delaylearn.cli import main
from delaylearn.dde import TimeGrid, solve_forward, solve_forward_reference
from delaylearn.errors import BlowUpError, OracleError
from delaylearn.loss import sample_dataset
from delaylearn.models import linear_model, logistic_model
from delaylearn.oracle import fd_loss_gradient, fd_terminal_sensitivity, relative_errors

pytestmark = pytest.mark.slow


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def run_fit(tmp_path, name, *extra):
    out = tmp_path / f"{name}.json"
    start = time.perf_counter()
    code = main(["fit", "--config", name, "--out", str(out), *extra])
    elapsed = time.perf_counter() - start
    return code, json.loads(out.read_text()), elapsed, out


def test_criterion_1_table1(tmp_path):
    code, doc, elapsed, _ = run_fit(tmp_path, "table1")
    found = doc["theta"] + [doc["tau"]]
    ok = (code == 0 and doc["converged"] and doc["final_loss"] < 0.01
          and all(abs(v - 1.0) <= 0.1 for v in found)
          and doc["epochs_used"] <= 500 and elapsed < 60)
    record(1, ok, f"theta={doc['theta']} tau={doc['tau']:.4f} loss={doc['final_loss']:.4g} "
                  f"epochs={doc['epochs_used']} time={elapsed:.1f}s")
    assert ok


def test_criterion_2_table2(tmp_path):
    code, doc, elapsed, _ = run_fit(tmp_path, "table2")
    found = np.array(doc["theta"] + [doc["tau"]])
    ok = (bool(np.all(np.abs(found - [-2.0, -2.0, 1.0]) <= 0.1))
          and doc["epochs_used"] <= 500 and elapsed < 60)
    record(2, ok, f"theta={doc['theta']} tau={doc['tau']:.4f} loss={doc['final_loss']:.4g} "
                  f"epochs={doc['epochs_used']} time={elapsed:.1f}s")
    assert ok


# Probe design: T = 5, data every 0.1 generated at the benchmark truth from a
# random initial state, adjoint vs FD of the discrete loss at a random (theta, tau).
PROBES = 20
PROBE_T = 5.0
BENCHMARKS = {
    "logistic": (logistic_model, [1.0, 1.0], 1.0, (0.5, 2.5)),
    "linear": (linear_model, [-2.0, -2.0], 1.0, (-2.0, 2.0)),
}


def probe_error(model, truth, true_tau, x0, theta, tau, dt):
    grid = TimeGrid(PROBE_T, dt)
    data = sample_dataset(model, truth, true_tau, [x0], grid, int(round(0.1 / dt)))
    with np.errstate(over="ignore", invalid="ignore"):
        fw = solve_forward(model, theta, tau, data.x0, grid)
        ana = loss_gradient_discrete(model, theta, tau, fw, data).as_vector()
        fd = fd_loss_gradient(model, theta, tau, data, grid, fd_step=1e-5).as_vector()
    if not (np.isfinite(ana).all() and np.isfinite(fd).all()):
        raise BlowUpError("non-finite gradient")
    return relative_errors(ana, fd).max()


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_criterion_3_gradient_probes(name):
    make, truth, true_tau, (lo, hi) = BENCHMARKS[name]
    model = make()
    rng = np.random.default_rng(0)
    coarse, fine, draws = [], [], 0
    while len(coarse) < PROBES:
        draws += 1
        theta = rng.uniform(-3.0, 3.0, model.dim_theta)
        tau = rng.uniform(0.5, 2.0)
        x0 = rng.uniform(lo, hi)
        try:
            e1 = probe_error(model, truth, true_tau, x0, theta, tau, 1e-3)
            e2 = probe_error(model, truth, true_tau, x0, theta, tau, 5e-4)
        except (BlowUpError, OracleError):
            continue
        coarse.append(e1)
        fine.append(e2)
    coarse, fine = np.array(coarse), np.array(fine)
    ok = coarse.max() < 1e-2 and fine.max() < coarse.max()
    record(3, ok, f"[{name}] {PROBES} probes ({draws} draws): max rel err {coarse.max():.3g} "
                  f"at dt=1e-3, {fine.max():.3g} at dt=5e-4; "
                  f"{int(np.sum(coarse >= 1e-2))} probes above 1e-2")
    assert ok


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_criterion_4_x0_sensitivity(name):
    make, theta, tau, _ = BENCHMARKS[name]
    model = make()
    x0 = [2.0] if name == "logistic" else [-1.0]
    grid = TimeGrid(10.0, 1e-3)
    fw = solve_forward(model, theta, tau, x0, grid)
    p0 = sensitivity_x0(solve_adjoint(model, theta, tau, fw, [1.0]))
    fd = fd_terminal_sensitivity(model, theta, tau, x0, grid, hold_history=True).d_x0
    err = relative_errors(p0, fd).max()
    ok = err < 1e-3
    record(4, ok, f"[{name}] p(0)={p0[0]:.6g} fd={fd[0]:.6g} rel err {err:.3g}")
    assert ok


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_criterion_5_single_solve_equivalence(name):
    make, truth, true_tau, _ = BENCHMARKS[name]
    model = make()
    x0 = [2.0] if name == "logistic" else [-1.0]
    grid = TimeGrid(9.0, 0.01)
    data = sample_dataset(model, truth, true_tau, x0, grid, 100)
    assert data.count == 10
    theta, tau = np.asarray(truth) * 1.3, 1.4
    fw = solve_forward(model, theta, tau, data.x0, grid)
    reference = loss_gradient_per_datum(model, theta, tau, fw, data).as_vector()
    single = loss_gradient_discrete(model, theta, tau, fw, data).as_vector()
    shifted = loss_gradient_shifted(model, theta, tau, fw, data).as_vector()
    err = relative_errors(single, reference, 1e-14).max()
    shift_err = relative_errors(shifted, reference, 1e-14).max()
    ok = err < 1e-10
    if name == "linear":
        ok = ok and shift_err < 1e-10
    record(5, ok, f"[{name}] single pass vs per-datum {err:.3g}; "
                  f"literal time shift vs per-datum {shift_err:.3g}"
                  + (" (informational: shift is exact only for constant Jacobians)"
                     if name == "logistic" else ""))
    assert ok


def test_criterion_6_solver_order():
    errs = []
    for dt in (0.02, 0.01, 0.005):
        grid = TimeGrid(10.0, dt)
        coarse = solve_forward(logistic_model(), [1.0, 1.0], 1.0, [2.0], grid)
        ref = solve_forward_reference(logistic_model(), [1.0, 1.0], 1.0, [2.0], grid, 16)
        errs.append(np.abs(coarse.states - ref.states).max())
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(1.7 <= r <= 2.3 for r in ratios)
    record(6, ok, "error ratios under dt halving " + ", ".join(f"{r:.3f}" for r in ratios))
    assert ok


def scan_rows(tmp_path, name):
    out = tmp_path / f"{name}.csv"
    assert main(["landscape", "--config", name, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    return lines[0].split(","), np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])


def test_criterion_7_landscape_sink(tmp_path):
    header, rows = scan_rows(tmp_path, "fig4")
    taus = np.unique(rows[:, 0])
    tau_min = rows[np.argmin(rows[:, -1]), 0]
    ok1 = abs(tau_min - 1.0) <= taus[1] - taus[0]

    header2, rows2 = scan_rows(tmp_path, "fig3")
    th_cell = np.diff(np.unique(rows2[:, 0]))[0]
    tau_cell = np.diff(np.unique(rows2[:, 1]))[0]
    best = rows2[np.argmin(rows2[:, -1])]
    ok2 = abs(best[0] - 1.0) <= th_cell and abs(best[1] - 1.0) <= tau_cell
    ok = ok1 and ok2 and header == ["tau", "loss"] and header2 == ["theta1", "tau", "loss"]
    record(7, ok, f"tau scan argmin {tau_min:.4g}; (theta1, tau) scan argmin "
                  f"({best[0]:.4g}, {best[1]:.4g})")
    assert ok


def test_criterion_8_determinism(tmp_path):
    a = run_fit(tmp_path, "table1")[3].read_bytes()
    b = run_fit(tmp_path, "table1", "--seed", "0")[3].read_bytes()
    out1, out2 = tmp_path / "u1.json", tmp_path / "u2.json"
    args = ["fit", "--config", "table1", "--theta", "uniform", "--tau", "uniform",
            "--max-epochs", "40", "--seed", "1"]
    main([*args, "--out", str(out1)])
    main([*args, "--out", str(out2)])
    ok = a == b and out1.read_bytes() == out2.read_bytes()
    record(8, ok, "repeated fit runs byte-identical (table1 config; uniform init with seed 1)")
    assert ok
