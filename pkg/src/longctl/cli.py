"""``longctl`` command line: training, grid evaluation, scripted scenarios, calibration and reports.

Exit codes: 0 success, 1 other package error, 2 configuration, 3 checkpoint, 4 domain, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError

from . import __version__
from .agent import DdpgAgent, default_checkpoint_path, load_checkpoint, reward_curves, train
from .config import RunConfig, dump_defaults, load_config, parse_seed_range
from .env import PolicyController
from .errors import CheckpointError, ConfigError, DomainError, LongCtlError
from .evaluation import (
    EDGE_CASES,
    make_controller,
    multi_agent_rollout,
    policy_evaluator,
    run_edge_case,
    run_grid,
)
from .perception import (
    CalibDataset,
    CalibModel,
    calibration_report,
    fit_calibrator,
    generate_dataset,
)
from .report import curves_svg, heatmap_svg, summarize_run, summary_table, trajectory_svg

EXIT_IO = 5
DATASET = "calib_data.csv"
MODEL = "calib_model.npz"

log = logging.getLogger("longctl")


# --------------------------------------------------------------------------
# helpers


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _sidecar(path: Path, started: float, **extra) -> None:
    """Wall-clock metadata kept apart from the reproducible artifact."""
    meta = {
        "written_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "elapsed_s": round(time.perf_counter() - started, 3),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        **extra,
    }
    _write_json(path.with_name(path.stem + ".meta.json"), meta)


def parse_controller(text: str) -> tuple[str, Optional[Path]]:
    """``baseline``, ``untrained``, ``rl`` (packaged policy) or ``rl:<checkpoint path>``."""
    if text in ("baseline", "untrained"):
        return text, None
    if text == "rl":
        return "rl", default_checkpoint_path()
    if text.startswith("rl:") and len(text) > 3:
        return "rl", Path(text[3:])
    raise ConfigError(f"unknown controller {text!r}; use baseline, untrained, rl or rl:<path>")


def _agent_for(kind: str, path: Optional[Path], cfg: RunConfig) -> Optional[DdpgAgent]:
    if kind == "baseline":
        return None
    if kind == "untrained":
        return DdpgAgent(seed=cfg.grid.untrained_seed)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# --------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig, args) -> int:
    started = time.perf_counter()
    out = _out_dir(cfg, args)
    agent_cfg = cfg.agent
    updates = {}
    if args.seeds:
        updates["seeds"] = parse_seed_range(args.seeds)
    elif args.seed is not None:
        updates["seeds"] = [args.seed]
    if args.episodes is not None:
        updates["max_episodes"] = args.episodes
    if updates:
        agent_cfg = agent_cfg.model_validate({**agent_cfg.model_dump(), **updates})
    evaluator = None if args.no_eval else policy_evaluator(log=log)
    best, runs = train(agent_cfg, out, evaluator)
    curves = reward_curves(runs)
    svg = curves_svg(
        curves["episode"], {"mean return": curves["mean"]}, {"mean return": curves["std"]},
        title="Training reward", xlabel="episode", ylabel="episode return",
    )
    (out / "reward_curve.svg").write_text(svg)
    summary = json.loads((out / "train_summary.json").read_text())
    _write_json(out / "train_summary.json", {**summary, "artifact": "training", "schema_version": 1})
    _sidecar(out / "train_summary.json", started)
    print(f"trained seeds {summary['seeds']}; best checkpoint {out / 'best.npz'}")
    return 0


def cmd_eval_grid(cfg: RunConfig, args) -> int:
    started = time.perf_counter()
    out = _out_dir(cfg, args)
    kind, path = parse_controller(args.controller or cfg.grid.controller)
    if kind == "rl" and args.controller is None and cfg.grid.checkpoint:
        path = Path(cfg.grid.checkpoint)
    agent = _agent_for(kind, path, cfg)
    gcfg = cfg.grid.model_copy(update={"controller": kind, "checkpoint": str(path) if path else None})
    if args.runs is not None:
        gcfg = gcfg.model_copy(update={"runs_per_cell": args.runs})
    seed = cfg.seed if args.seed is None else args.seed
    g = run_grid(gcfg, seed, workers=args.workers, agent=agent)
    stem = out / f"grid_{kind}"
    g.to_json(stem.with_suffix(".json"))
    g.to_csv(stem.with_suffix(".csv"))
    svg = heatmap_svg(
        g.cell_collision_fraction(), g.feasible, g.lead_decels, g.follow_decels,
        title=f"Collision fraction per cell ({kind})",
    )
    stem.with_suffix(".svg").write_text(svg)
    _sidecar(stem.with_suffix(".json"), started, workers=args.workers, grid_elapsed_s=g.elapsed_s)
    line = f"{kind}: collision rate {g.collision_rate():.4f}"
    if g.feasible.any():
        line += f", success over feasible {g.success_over_feasible():.2f}%, P_collision {g.p_collision():.4f}"
    print(line)
    return 0


def cmd_scenario(cfg: RunConfig, args) -> int:
    started = time.perf_counter()
    out = _out_dir(cfg, args)
    if args.id not in EDGE_CASES:
        raise DomainError(f"scenario id must be one of {sorted(EDGE_CASES)}")
    kind, path = parse_controller(args.controller)
    agent = _agent_for(kind, path, cfg)
    seed = cfg.seed if args.seed is None else args.seed
    if args.id == 5 and kind != "baseline":
        traj, verdict = multi_agent_rollout(args.n_rl, agent, seed=seed)
    else:
        ctrl = make_controller("baseline", baseline=cfg.baseline) if kind == "baseline" else PolicyController(agent)
        traj, verdict = run_edge_case(args.id, ctrl, narrow=args.narrow, seed=seed, n_rl=args.n_rl)
    stem = out / f"scenario{args.id}{'_narrow' if args.narrow else ''}_{kind}"
    traj.to_csv(stem.with_suffix(".csv"))
    stem.with_suffix(".svg").write_text(trajectory_svg(traj, title=f"Scenario {args.id} ({kind})"))
    _write_json(stem.with_suffix(".json"), {
        "artifact": "scenario", "schema_version": 1, "controller": kind, "narrow": args.narrow,
        "seed": seed, **verdict.as_dict(), "case": args.id,
    })
    _sidecar(stem.with_suffix(".json"), started)
    state = "collision" if verdict.collided else ("clean" if verdict.clean else "no collision, gap under 2 m")
    gaps = ", ".join(f"{g:.2f}" for g in verdict.final_gaps)
    print(f"scenario {args.id} {kind}: {state}; final gaps [{gaps}] m")
    return 0


def cmd_calibrate(cfg: RunConfig, args) -> int:
    started = time.perf_counter()
    out = _out_dir(cfg, args)
    seed = cfg.seed if args.seed is None else args.seed
    data_path = Path(args.data) if args.data else out / DATASET
    gen = cfg.calibration.gen
    if args.stage == "gen":
        ds = generate_dataset(gen, seed)
        ds.to_csv(data_path)
        _sidecar(data_path, started)
        print(f"wrote {len(ds.raw)} samples to {data_path}")
        return 0
    if not data_path.exists():
        raise FileNotFoundError(f"dataset not found: {data_path} (run 'calibrate gen' first)")
    ds = CalibDataset.from_csv(data_path, gen.test_fraction, seed)
    model_path = out / MODEL
    if args.stage == "fit":
        model, curve = fit_calibrator(ds, cfg.calibration.fit, seed)
        model.save(model_path)
        with open(out / "loss_curve.csv", "w") as fh:
            fh.write("epoch,train_mse,test_mse\n")
            for k, (a, b) in enumerate(zip(curve.train, curve.test), start=1):
                fh.write(f"{k},{a!r},{b!r}\n")
        ep = np.arange(1, len(curve.train) + 1)
        (out / "loss_curve.svg").write_text(curves_svg(
            ep, {"train": curve.train, "test": curve.test},
            title="Calibration loss", xlabel="epoch", ylabel="mean squared error (m²)",
        ))
        _sidecar(model_path, started)
        print(f"final train/test MSE {curve.train[-1]:.4f} / {curve.test[-1]:.4f}; model {model_path}")
        return 0
    model = CalibModel.load(model_path) if model_path.exists() else None
    if model is None:
        raise CheckpointError(f"calibration model not found: {model_path} (run 'calibrate fit' first)")
    rep = calibration_report(model, ds)
    path = out / "calibration.json"
    _write_json(path, {"artifact": "calibration", "schema_version": 1, **rep})
    _sidecar(path, started)
    red = 100 * (1 - rep["calibrated_rmse"] / rep["raw_rmse"])
    print(f"RMSE raw {rep['raw_rmse']:.3f} m -> calibrated {rep['calibrated_rmse']:.3f} m ({red:.1f}% reduction)")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    run_dir = Path(args.run_dir or args.out or cfg.out)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    summary = summarize_run(run_dir)
    _write_json(run_dir / "summary.json", summary)
    table = summary_table(summary)
    (run_dir / "summary.txt").write_text(table)
    print(table, end="")
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (supports 'include')")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="longctl", description=__doc__.splitlines()[0])
    p.add_argument("--dump-defaults", action="store_true", help="print the full default configuration and exit")
    p.add_argument("--version", action="version", version=f"longctl {__version__}")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", parents=[common], help="train DDPG policies")
    t.add_argument("--seeds", help="seed range A..B (inclusive) or list A,B,C")
    t.add_argument("--episodes", type=int, help="episodes per seed")
    t.add_argument("--no-eval", action="store_true", help="skip periodic checkpoint evaluation")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("eval-grid", parents=[common], help="deceleration-grid collision sweep")
    g.add_argument("--controller", help="baseline | untrained | rl | rl:<checkpoint>")
    g.add_argument("--runs", type=int, help="runs per cell")
    g.add_argument("--workers", type=int, default=1, help="worker processes")
    g.set_defaults(func=cmd_eval_grid)

    s = sub.add_parser("scenario", parents=[common], help="scripted edge-case scenario")
    s.add_argument("--id", type=int, required=True, help="scenario 1..5")
    s.add_argument("--controller", default="baseline", help="baseline | untrained | rl | rl:<checkpoint>")
    s.add_argument("--narrow", action="store_true", help="narrow-squeeze variant of scenario 3")
    s.add_argument("--n-rl", type=int, default=3, help="RL vehicles in scenario 5")
    s.set_defaults(func=cmd_scenario)

    c = sub.add_parser("calibrate", parents=[common], help="trajectory calibration pipeline")
    c.add_argument("stage", choices=["gen", "fit", "eval"])
    c.add_argument("--data", help=f"dataset CSV (default <out>/{DATASET})")
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("report", parents=[common], help="aggregate a run directory")
    r.add_argument("run_dir", nargs="?", help="directory holding JSON artifacts (default --out)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_defaults:
        sys.stdout.write(dump_defaults())
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return ConfigError.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except LongCtlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
