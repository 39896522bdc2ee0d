"""Command-line pipeline: simulate, train, fit-rc, control, report.

Every artifact lands under one workspace directory. ``manifest.json`` records,
per command, the config hash, seeds, and content hashes of inputs and outputs;
timestamps and wall-clock timings live only there so all other files are
byte-reproducible.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .control import (
    ControllerSpec,
    EpisodeMetrics,
    ScenarioMismatch,
    compare,
    model_fit_report,
    run_episode,
)
from .dataset import DataError, ProfileLog, prepare_dataset, stack_samples, write_split_manifest
from .plant import ConfigError, constant_policy, excitation_policy, generate_schedules, simulate
from .rc import RcFitError, RcParams, fit_rc
from .rnn import NumericError, ScaledRnn, init_model, load_checkpoint, save_checkpoint, train
from .svg import write_line_chart

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

PROFILE = "data/profile.csv"
SPLIT = "data/split.json"
CHECKPOINT = "models/rnn.json"
HISTORY = "models/history.json"
RC_PARAMS = "models/rc.json"
MANIFEST = "manifest.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def require(self, rel: str) -> Path:
        p = self.root / rel
        if not p.exists():
            raise FileNotFoundError(f"missing input {p}; run the producing command first")
        return p

    def manifest(self) -> dict:
        p = self.root / MANIFEST
        return json.loads(p.read_text()) if p.exists() else {"commands": {}}

    def record(self, command: str, cfg: ExperimentConfig, inputs, outputs, seeds: dict, **extra) -> None:
        doc = self.manifest()
        doc["commands"][command] = {
            **extra,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "config_sha256": cfg.section_hash("seed", "plant", "data", "rnn", "opt", "control"),
            "seeds": seeds,
            "inputs": {rel: _sha256(self.root / rel) for rel in inputs},
            "outputs": {rel: _sha256(self.root / rel) for rel in outputs},
        }
        _write_json(self.path(MANIFEST), doc)

    def verify(self, rels) -> None:
        """Check each file still matches the hash recorded by the command that wrote it."""
        produced = {}
        for entry in self.manifest()["commands"].values():
            produced.update(entry["outputs"])
        for rel in rels:
            if rel not in produced:
                raise DataError(f"{rel} is not listed in the workspace manifest")
            if _sha256(self.require(rel)) != produced[rel]:
                raise DataError(f"{rel} changed after it was written; rerun the producing command")


def _episode_stem(kind: str, bounds) -> str:
    return f"control/{kind}_{bounds[0]:g}_{bounds[1]:g}"


def _episode_files(stem: str) -> list[str]:
    return [stem + ".json", stem + ".csv"]


def _bounds_list(cfg: ExperimentConfig) -> list[tuple]:
    sweep = [tuple(float(v) for v in b) for b in cfg.opt.sweep_bounds]
    main = tuple(cfg.opt.bounds)
    return [main] + [b for b in sweep if b != main]


def _load_dataset(cfg: ExperimentConfig, ws: Workspace):
    bounds = tuple(cfg.opt.bounds)
    zones = range(cfg.plant.n_zones)
    named = {f"{kind}_z{z}": bounds for kind in ("setpoint", "temp") for z in zones}
    log = ProfileLog.from_csv(ws.require(PROFILE), named)
    data = prepare_dataset(log, cfg.T, cfg.data.test_fraction, cfg.split_seed)
    return log, data


def cmd_simulate(cfg: ExperimentConfig, ws: Workspace) -> int:
    p = cfg.plant
    schedules = generate_schedules(cfg.data.days, cfg.data_seed, cfg.data.profile, p.n_zones, p.dt,
                                   cfg.data.start_day)
    policy = excitation_policy(len(schedules), p.n_zones, cfg.policy_seed, cfg.data.policy_low,
                               cfg.data.policy_high)
    log = simulate(p, schedules, policy, cfg.plant_seed)
    log.to_csv(ws.path(PROFILE))
    ws.record("simulate", cfg, [], [PROFILE],
              {"data": cfg.data_seed, "policy": cfg.policy_seed, "plant": cfg.plant_seed})
    print(f"simulate: wrote {len(log)} rows to {ws.root / PROFILE} (mean power {np.mean(log.power):.1f} W)")
    return 0


def cmd_train(cfg: ExperimentConfig, ws: Workspace) -> int:
    log, data = _load_dataset(cfg, ws)
    write_split_manifest(ws.path(SPLIT), data.train, data.test)
    tc = cfg.rnn.train
    model = init_model(len(log.schema), cfg.rnn.hidden_dim, tc.seed, tc.dropout_rate)
    best, history = train(model, stack_samples(data.train), stack_samples(data.test), tc)
    save_checkpoint(ws.path(CHECKPOINT), best, data.scaler)
    _write_json(ws.path(HISTORY), history)
    ws.record("train", cfg, [PROFILE], [SPLIT, CHECKPOINT, HISTORY],
              {"split": cfg.split_seed, "train": tc.seed})
    if history:
        first, last = history[0], history[-1]
        best_rmse = min(h["val_rmse"] for h in history)
        print(f"train: {len(history)} epochs, train mse {first['train_loss']:.5f} -> {last['train_loss']:.5f}, "
              f"best val RMSE {best_rmse:.5f}")
    else:
        print("train: 0 epochs, wrote the seeded initial model")
    return 0


def cmd_fit_rc(cfg: ExperimentConfig, ws: Workspace) -> int:
    log, data = _load_dataset(cfg, ws)
    params = fit_rc(stack_samples(data.train), log.schema, data.scaler, cfg.plant.dt,
                    np.isfinite(cfg.plant.R_adj))
    params.save(ws.path(RC_PARAMS))
    ws.record("fit-rc", cfg, [PROFILE], [RC_PARAMS], {"split": cfg.split_seed})
    print(f"fit-rc: R_out {np.round(params.R_out, 4).tolist()} (gain units), wrote {ws.root / RC_PARAMS}")
    return 0


def _control_inputs(cfg: ExperimentConfig):
    p = cfg.plant
    schedules = generate_schedules(cfg.control.days + 1, cfg.control_seed, cfg.data.profile, p.n_zones,
                                   p.dt, cfg.control.start_day)
    reference = constant_policy(len(schedules), p.n_zones, cfg.control.reference_setpoint)
    return schedules, reference, cfg.control.days * p.steps_per_day


def cmd_control(cfg: ExperimentConfig, ws: Workspace) -> int:
    model, scaler = load_checkpoint(ws.require(CHECKPOINT))
    rc = RcParams.load(ws.require(RC_PARAMS))
    schedules, reference, n_steps = _control_inputs(cfg)
    seed = cfg.control_seed + 1
    opt, warm = cfg.opt.solver, cfg.opt.warm_start
    main = tuple(cfg.opt.bounds)
    runs = [(ControllerSpec("fixed-schedule"), main), (ControllerSpec("rc-mpc", rc, opt, warm), main)]
    runs += [(ControllerSpec("rnn-barrier", ScaledRnn(model, scaler), opt, warm), b) for b in _bounds_list(cfg)]
    outputs, seconds = [], {}
    for spec, bounds in runs:
        start = time.perf_counter()
        metrics = run_episode(cfg.plant, schedules, spec, bounds, cfg.T, reference, seed, n_steps=n_steps)
        stem = _episode_stem(spec.kind, bounds)
        seconds[stem] = round(time.perf_counter() - start, 3)
        metrics.save(ws.path(stem))
        outputs += _episode_files(stem)
        print(f"control: {spec.kind} {list(bounds)} energy {metrics.total_energy:.1f} "
              f"fallbacks {len(metrics.fallback_steps)}")
    ws.record("control", cfg, [CHECKPOINT, RC_PARAMS], outputs,
              {"schedules": cfg.control_seed, "plant": seed}, episode_seconds=seconds)
    return 0


def _write_long_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_report(cfg: ExperimentConfig, ws: Workspace) -> int:
    main = tuple(cfg.opt.bounds)
    sweep = _bounds_list(cfg)
    stems = {"fixed": _episode_stem("fixed-schedule", main), "rc": _episode_stem("rc-mpc", main)}
    stems.update({b: _episode_stem("rnn-barrier", b) for b in sweep})
    ws.verify([CHECKPOINT, RC_PARAMS, *[f for s in stems.values() for f in _episode_files(s)]])
    episodes = {k: EpisodeMetrics.load(ws.require(s + ".json").parent / Path(s).name) for k, s in stems.items()}
    fixed, rc_run, rnn_run = episodes["fixed"], episodes["rc"], episodes[main]

    # model fit on the shared test windows
    model, scaler = load_checkpoint(ws.require(CHECKPOINT))
    rc = RcParams.load(ws.require(RC_PARAMS))
    log, data = _load_dataset(cfg, ws)
    x_test, y_test = stack_samples(data.test)
    fit = model_fit_report(ScaledRnn(model, scaler), rc, x_test, y_test, data.scaler,
                           [s.origin_index for s in data.test])
    _write_json(ws.path("report/fit_report.json"), fit.summary())
    fig4 = []
    for origin, target, p_rnn, p_rc in fit.residuals:
        k = origin + cfg.T
        fig4 += [[k, "measured", repr(target)], [k, "rnn", repr(p_rnn)], [k, "rc", repr(p_rc)]]
    _write_long_csv(ws.path("report/fig4_fit.csv"), ["row", "series", "normalized_power"], fig4)

    comparison = {
        "rnn_vs_fixed": compare(fixed, rnn_run, "fixed-schedule", "rnn-barrier"),
        "rc_vs_fixed": compare(fixed, rc_run, "fixed-schedule", "rc-mpc"),
    }
    _write_json(ws.path("report/comparison.json"), comparison)

    sweep_rows, sweep_summary = [], []
    for b in sweep:
        ep = episodes[b]
        label = f"[{b[0]:g},{b[1]:g}]"
        sweep_rows += [[label, k, repr(float(v))] for k, v in enumerate(ep.power)]
        sweep_summary.append({"bounds": list(b), "total_energy": ep.total_energy,
                              "sum_squared_power": ep.sum_squared_power,
                              "comfort_violations": ep.comfort_violations})
    _write_long_csv(ws.path("report/fig5_sweep.csv"), ["bounds", "step", "power"], sweep_rows)
    _write_json(ws.path("report/sweep.json"), sweep_summary)

    fig6 = []
    for name, ep in (("fixed-schedule", fixed), ("rnn-barrier", rnn_run), ("rc-mpc", rc_run)):
        fig6 += [[name, k, repr(float(v))] for k, v in enumerate(ep.power)]
    _write_long_csv(ws.path("report/fig6_energy.csv"), ["controller", "step", "power"], fig6)

    fig7 = []
    for name, ep in (("fixed-schedule", fixed), ("rnn-barrier", rnn_run)):
        for z in range(ep.setpoints.shape[1]):
            fig7 += [[name, z, k, repr(float(v))] for k, v in enumerate(ep.setpoints[:, z])]
    _write_long_csv(ws.path("report/fig7_setpoints.csv"), ["controller", "zone", "step", "setpoint"], fig7)

    # rendered conveniences; the CSVs above are the contract
    order = np.argsort([r[0] for r in fit.residuals])
    rows = np.array([[r[0] + cfg.T, r[1], r[2], r[3]] for r in fit.residuals])[order]
    write_line_chart(ws.path("report/fig4_fit.svg"),
                     {"measured": (rows[:, 0], rows[:, 1]), "rnn": (rows[:, 0], rows[:, 2]),
                      "rc": (rows[:, 0], rows[:, 3])} if len(rows) else {},
                     "Model fit on test windows", "log row", "normalized power")
    write_line_chart(ws.path("report/fig5_sweep.svg"),
                     {f"[{b[0]:g},{b[1]:g}]": (np.arange(len(episodes[b])), episodes[b].power) for b in sweep},
                     "Constraint interval sweep", "step", "power (W)")
    write_line_chart(ws.path("report/fig6_energy.svg"),
                     {n: (np.arange(len(e)), e.power) for n, e in
                      (("fixed-schedule", fixed), ("rnn-barrier", rnn_run), ("rc-mpc", rc_run))},
                     "Closed-loop power", "step", "power (W)")
    write_line_chart(ws.path("report/fig7_setpoints.svg"),
                     {f"zone {z}": (np.arange(len(rnn_run)), rnn_run.setpoints[:, z])
                      for z in range(rnn_run.setpoints.shape[1])},
                     "RNN-barrier setpoints per zone", "step", "setpoint (C)")

    outputs = ["report/fit_report.json", "report/comparison.json", "report/sweep.json",
               "report/fig4_fit.csv", "report/fig5_sweep.csv", "report/fig6_energy.csv",
               "report/fig7_setpoints.csv", "report/fig4_fit.svg", "report/fig5_sweep.svg",
               "report/fig6_energy.svg", "report/fig7_setpoints.svg"]
    inputs = [PROFILE, CHECKPOINT, RC_PARAMS, *[f for s in stems.values() for f in _episode_files(s)]]
    ws.record("report", cfg, inputs, outputs, {"split": cfg.split_seed})
    e, r = comparison["rnn_vs_fixed"], comparison["rc_vs_fixed"]
    print(f"report: RMSE rnn {fit.rmse_rnn:.4f} rc {fit.rmse_rc:.4f} ({fit.improvement_pct:.2f}% better); "
          f"energy reduction rnn {e['energy_reduction_pct']:.2f}% rc {r['energy_reduction_pct']:.2f}%")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "fit-rc": cmd_fit_rc,
    "control": cmd_control,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnnhvac", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="override the experiment seed")
    parser.add_argument("--workspace", help="override the workspace directory")
    parser.add_argument("command", choices=[*COMMANDS, "all"], help="pipeline stage, or 'all' in order")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workspace is not None:
            cfg.workspace = args.workspace
        ws = Workspace(cfg.workspace)
        names = list(COMMANDS) if args.command == "all" else [args.command]
        for name in names:
            COMMANDS[name](cfg, ws)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, RcFitError, ScenarioMismatch, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
