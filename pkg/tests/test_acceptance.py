"""Acceptance criteria, one test each.

The two end-to-end criteria share a session fixture that runs the default
pipeline stage by stage and records wall-clock time per stage; the
determinism check reruns the whole pipeline in a fresh process.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import adaptive_fd, max_rel_err
from rnnhvac import cli
from rnnhvac.barrier import ControlPlan, OptConfig, barrier_grad, barrier_loss, optimize_inputs
from rnnhvac.control import EpisodeMetrics, FitReport, compare, reduction_pct
from rnnhvac.dataset import fit_scaler, make_windows
from rnnhvac.rc import fit_rc, rc_predict
from rnnhvac.rnn import forward, grad_inputs, grad_weights, loss_mse
from test_barrier import bisect_stationary, bounded_toy, grid_argmin, random_problem, tracking_problem
from test_rc import pure_rc_log
from test_rnn import random_case

PARAM_ORDER = ("Wx", "Wh", "b", "W1", "b1", "W2", "b2", "W3", "b3")


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance") / "ws"
    timings = {}
    for stage in ("simulate", "train", "fit-rc", "control", "report"):
        start = time.perf_counter()
        code = cli.main(["--workspace", str(root), stage])
        timings[stage] = time.perf_counter() - start
        assert code == 0, f"{stage} exited with {code}"
    return root, timings


def test_criterion_1_gradient_oracles():
    start = time.perf_counter()
    worst = {"weights": 0.0, "inputs": 0.0, "barrier": 0.0}
    for seed in range(20):
        model, x, y = random_case(seed)
        assert model.hidden_dim <= 4 and x.shape[1] - 1 <= 6
        g = grad_weights(model, (x, y))
        analytic = np.concatenate([g[k].ravel() for k in PARAM_ORDER])

        def loss(vec):
            m = model.copy()
            m.set_flat(vec)
            return loss_mse(forward(m, x)[0], y)

        worst["weights"] = max(worst["weights"], max_rel_err(analytic, adaptive_fd(loss, model.flat())))
        fd = adaptive_fd(lambda w: forward(model, w)[0], x[0])
        worst["inputs"] = max(worst["inputs"], max_rel_err(grad_inputs(model, x[0]), fd))

        problem, controls = random_problem(seed)
        assert problem.T <= 6
        fd = adaptive_fd(lambda c: barrier_loss(problem, c), controls, steps=(1e-3, 3e-4, 1e-4, 3e-5))
        worst["barrier"] = max(worst["barrier"], max_rel_err(barrier_grad(problem, controls), fd))
    assert max(worst.values()) < 1e-5, worst
    assert time.perf_counter() - start < 60


def test_criterion_2_zero_momentum_is_gradient_descent():
    problem, controls = random_problem(5)
    cfg = OptConfig(learning_rate=0.05, momentum=0.0, n_iter=50, stall_patience=1000)
    seen = []
    optimize_inputs(problem, ControlPlan(controls), cfg, callback=lambda k, c, loss: seen.append(c.copy()))
    assert len(seen) == 51
    x = controls.copy()
    for k in range(1, 51):
        x = x - cfg.learning_rate * barrier_grad(problem, x)
        assert np.max(np.abs(seen[k] - x)) <= 1e-12


def test_criterion_3_convex_oracles():
    start = time.perf_counter()
    targets, lo, hi, lam = [0.3, -0.4], -2.0, 2.0, 1e-2
    plan = optimize_inputs(tracking_problem(targets, lo, hi, lam), ControlPlan(np.array([[1.5], [1.5]])),
                           OptConfig(learning_rate=0.05, n_iter=2000, stall_patience=2000))
    expected = [bisect_stationary(c, lo, hi, lam) for c in targets]
    assert np.max(np.abs(plan.controls[:, 0] - expected)) < 1e-3

    toy = bounded_toy()
    plan = optimize_inputs(toy, ControlPlan(np.array([[0.9, 0.9]])),
                           OptConfig(learning_rate=0.05, n_iter=3000, stall_patience=3000))
    assert np.max(np.abs(plan.controls[0] - grid_argmin(toy, 1e-3))) <= 1e-3
    assert time.perf_counter() - start < 60


def test_criterion_4_rc_identifiability():
    cfg, log = pure_rc_log()
    scaler = fit_scaler(log)
    windows = make_windows(log, 3, scaler)
    params = fit_rc(windows, log.schema, scaler, cfg.dt, adjacency=np.isfinite(cfg.R_adj))
    np.testing.assert_allclose(params.inv_rc_out, 1.0 / (cfg.R_out * cfg.C), rtol=1e-2)
    true_adj = np.where(np.isfinite(cfg.R_adj), 1.0 / (cfg.R_adj * cfg.C[:, None]), 0.0)
    np.testing.assert_allclose(params.inv_rc_adj, true_adj, rtol=1e-2)
    x = scaler.inverse(np.stack([w.inputs for w in windows]))
    y = np.array([w.target for w in windows])
    assert np.sqrt(np.mean((rc_predict(params, x) - y) ** 2)) < 1e-3


def test_criterion_5_rnn_fit_beats_rc(pipeline):
    root, timings = pipeline
    fit = json.loads((root / "report" / "fit_report.json").read_text())
    assert fit["rmse_rnn"] < fit["rmse_rc"]
    assert fit["improvement_pct"] >= 40.0, fit
    assert timings["train"] < 300, timings


def test_criterion_6_closed_loop_energy(pipeline):
    root, timings = pipeline
    comparison = json.loads((root / "report" / "comparison.json").read_text())
    rnn = comparison["rnn_vs_fixed"]["energy_reduction_pct"]
    rc = comparison["rc_vs_fixed"]["energy_reduction_pct"]
    assert rnn > rc and rnn >= 10.0, comparison
    episode = EpisodeMetrics.load(root / "control" / "rnn-barrier_18_26")
    assert len(episode) == 5 * 144
    assert np.all(episode.interior)
    assert np.all((episode.setpoints > 18.0) & (episode.setpoints < 26.0))
    # the comparison episodes; the sweep's extra bound sets belong to the next criterion
    seconds = json.loads((root / cli.MANIFEST).read_text())["commands"]["control"]["episode_seconds"]
    compared = [cli._episode_stem(kind, (18.0, 26.0)) for kind in ("fixed-schedule", "rc-mpc", "rnn-barrier")]
    assert sum(seconds[s] for s in compared) < 300, seconds


def test_criterion_7_wider_bounds_use_less_energy(pipeline):
    root, _ = pipeline
    energy = {tuple(s["bounds"]): s["total_energy"] for s in json.loads((root / "report" / "sweep.json").read_text())}
    wide, mid, point = energy[(18.0, 26.0)], energy[(19.0, 24.0)], energy[(21.95, 22.05)]
    assert wide <= 0.99 * mid, energy
    assert mid <= 0.99 * point, energy


def test_criterion_8_headline_arithmetic_fixtures():
    ref = EpisodeMetrics(np.zeros((1, 1)), np.zeros((1, 1)), [100.0], (18, 26))
    for candidate, expected in ((69.26, 30.74), (95.93, 4.07)):
        cand = EpisodeMetrics(np.zeros((1, 1)), np.zeros((1, 1)), [candidate], (18, 26))
        assert abs(compare(ref, cand)["energy_reduction_pct"] - expected) <= 1e-10
    assert abs(reduction_pct(0.240, 0.076) - 205 / 3) <= 1e-10
    improvement = FitReport(rmse_rnn=0.076, rmse_rc=0.240).improvement_pct
    assert round(improvement, 2) == 68.33
    assert abs(improvement - 205 / 3) <= 1e-10


def artifact_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != cli.MANIFEST}


def test_criterion_9_pipeline_is_deterministic(pipeline, tmp_path):
    root, timings = pipeline
    assert sum(timings.values()) < 600, timings
    second = tmp_path / "ws"
    start = time.perf_counter()
    subprocess.run([sys.executable, "-m", "rnnhvac", "--workspace", str(second), "all"], check=True,
                   capture_output=True)
    assert time.perf_counter() - start < 600
    a, b = artifact_bytes(root), artifact_bytes(second)
    assert sorted(a) == sorted(b)
    assert any(name.endswith(".csv") for name in a) and any(name.endswith(".json") for name in a)
    differing = [name for name in a if a[name] != b[name]]
    assert not differing, differing
