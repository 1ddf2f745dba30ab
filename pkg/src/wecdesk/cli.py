"""Command-line front end for the wecdesk lab.

Subcommands: waves, tune-sd, train, eval, report, selftest. All artifacts
land under ``--out`` next to a deterministic ``manifest.json`` naming the
inputs, seeds, and tool version. Exit codes are a stable contract:
0 success, 1 check failure, 2 usage error, 3 I/O or configuration error.

Configuration values from ``--config`` can be overridden per key through
environment variables named ``WECDESK_<SECTION>_<KEY>``.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .checks import run_selftest
from .config import build_components, load_run_config, write_run_config
from .env import EnvConfig, RewardConfig
from .errors import CheckpointError, ConfigError, WecdeskError
from .evaluation import (
    EvalCell,
    evaluate_cell,
    load_policy_bundle,
    run_sd_episode,
)
from .fa import no_grad
from .plant import load_plant_params
from .ppo.trainer import Trainer, _dict_diff
from .reporting import (
    align_series,
    read_metrics_csv,
    steps_to_threshold,
    team_gain_series,
    write_cells_csv,
    write_convergence_csv,
    write_convergence_svg,
    write_gain_table_csv,
    write_threshold_csv,
    write_variance_table_csv,
)
from .spring_damper import lookup_or_tune
from .waves import make_wave_set, synthesize_trace, write_components_csv, write_trace_csv

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

DEFAULT_TP_GRID = (6.0, 8.0, 10.0, 12.0, 14.0, 16.0)


def _parse_grid(text):
    try:
        grid = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad Tp grid {text!r}: {exc}") from exc
    if not grid:
        raise ConfigError("Tp grid is empty")
    return grid


def _write_manifest(out_dir, command, inputs, seeds, outputs, parameters):
    manifest = {
        "tool": "wecdesk",
        "version": __version__,
        "command": command,
        "inputs": inputs,
        "seeds": seeds,
        "outputs": sorted(outputs),
        "parameters": parameters,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def cmd_waves(args):
    cfg = load_run_config(args.config)
    w = cfg["waves"]
    wave = make_wave_set(
        tp=w["tp"],
        hs=w["hs"],
        mode=w["mode"],
        angle_deg=w["angle_deg"],
        seed=args.seed,
        n_components=w["n_components"],
    )
    t, eta = synthesize_trace(wave, args.duration, args.dt)
    trace_path = os.path.join(args.out, "trace.csv")
    comp_path = os.path.join(args.out, "components.csv")
    write_trace_csv(trace_path, t, eta)
    write_components_csv(comp_path, wave)
    hs_rec = 4.0 * float(np.std(eta))
    print(f"synthesized {len(t)} samples: Tp={w['tp']} Hs={w['hs']} "
          f"mode={w['mode']} recovered Hs={hs_rec:.3f}")
    _write_manifest(
        args.out, "waves",
        inputs={"config": args.config},
        seeds=[args.seed],
        outputs=["trace.csv", "components.csv", "components.csv.meta.json"],
        parameters={"tp": w["tp"], "hs": w["hs"], "mode": w["mode"],
                    "angle_deg": w["angle_deg"], "duration": args.duration,
                    "dt": args.dt, "n_components": w["n_components"]},
    )
    return EXIT_OK


def cmd_tune_sd(args):
    cfg = load_run_config(args.config)
    w = cfg["waves"]
    plant = load_plant_params(cfg["plant"]["name"])
    cache = args.cache or os.path.join(args.out, "sd_cache.csv")
    grid = _parse_grid(args.tp_grid)
    for tp in grid:
        params, power = lookup_or_tune(
            cache, plant, tp, w["hs"],
            mode=w["mode"], angle_deg=w["angle_deg"], seed=args.seed,
            duration=args.duration, settle=args.settle, refine=args.refine,
        )
        print(f"Tp={tp:5.2f}  k={np.array2string(params.spring_k, precision=1)}  "
              f"c={np.array2string(params.damping_c, precision=1)}  "
              f"power={power:.1f} W")
    _write_manifest(
        args.out, "tune-sd",
        inputs={"config": args.config, "plant": cfg["plant"]["name"]},
        seeds=[args.seed],
        outputs=[os.path.relpath(cache, args.out)] if cache.startswith(args.out)
        else [cache],
        parameters={"tp_grid": list(grid), "hs": w["hs"], "mode": w["mode"],
                    "angle_deg": w["angle_deg"], "duration": args.duration,
                    "refine": args.refine},
    )
    return EXIT_OK


def cmd_train(args):
    cfg = load_run_config(args.config)
    plant, env_cfg, reward_cfg, model_cfg, ppo_cfg = build_components(cfg)
    cache = args.sd_cache or os.path.join(args.out, "sd_cache.csv")
    sd_params, sd_power = lookup_or_tune(
        cache, plant, env_cfg.tp, env_cfg.hs,
        mode=env_cfg.mode, angle_deg=env_cfg.angle_deg, seed=args.seed,
        duration=args.sd_duration, settle=args.sd_settle, refine=args.sd_refine,
    )
    print(f"SD baseline tuned: {sd_power:.1f} W")
    trainer = Trainer(
        plant, env_cfg, reward_cfg, model_cfg, ppo_cfg, sd_params,
        seed=args.seed, out_dir=args.out,
    )
    write_run_config(os.path.join(args.out, "run_config.ini"), cfg)
    rows = trainer.train(resume_from=args.resume, max_rounds=args.max_rounds)
    if rows:
        last_step = rows[-1]["step"]
        rl = sum(r["mean_power"] for r in rows if r["step"] == last_step)
        sd = sum(r["sd_power"] for r in rows if r["step"] == last_step)
        gain = 100.0 * (rl - sd) / abs(sd) if sd else 0.0
        print(f"final eval at {last_step} steps: RL {rl:.1f} W vs SD {sd:.1f} W "
              f"({gain:+.1f}%)")
    _write_manifest(
        args.out, "train",
        inputs={"config": args.config, "plant": plant.name,
                "resume": args.resume},
        seeds=[args.seed],
        outputs=["checkpoint.bin", "metrics.csv", "run_config.ini"],
        parameters={"model": model_cfg.to_dict(), "ppo": ppo_cfg.to_dict()},
    )
    return EXIT_OK


def _echo_from_run_config(cfg):
    """Sections of a run config in checkpoint-echo layout, for comparison."""
    plant, env_cfg, reward_cfg, model_cfg, ppo_cfg = build_components(cfg)
    return {
        "plant": plant.name,
        "env": {
            "tp": env_cfg.tp,
            "hs": env_cfg.hs,
            "mode": env_cfg.mode,
            "angle_deg": env_cfg.angle_deg,
            "control_dt": env_cfg.control_dt,
            "substeps": env_cfg.substeps,
            "episode_duration": env_cfg.episode_duration,
            "preview_horizon": env_cfg.preview_horizon,
            "preview_samples": env_cfg.preview_samples,
            "n_components": env_cfg.n_components,
        },
        "reward": {
            "eta_per_agent": list(map(float, reward_cfg.eta_per_agent)),
            "alpha": reward_cfg.alpha,
            "yaw_scale": reward_cfg.yaw_scale,
            "power_scale": reward_cfg.power_scale,
        },
        "model": model_cfg.to_dict(),
        "ppo": ppo_cfg.to_dict(),
    }


def cmd_eval(args):
    bundle = load_policy_bundle(args.checkpoint)
    echo = bundle.config
    if args.config is not None:
        want = _echo_from_run_config(load_run_config(args.config))
        have = {k: echo.get(k) for k in want}
        diffs = _dict_diff(want, have)
        if diffs:
            print("checkpoint/config mismatch, refusing to evaluate:",
                  file=sys.stderr)
            for line in diffs:
                print(f"  {line}", file=sys.stderr)
            return EXIT_IO
    plant = load_plant_params(echo["plant"])
    env_echo = dict(echo["env"])
    hs = args.hs if args.hs is not None else env_echo["hs"]
    angle = args.angle if args.angle is not None else env_echo["angle_deg"]
    mode = args.mode if args.mode is not None else env_echo["mode"]
    env_echo["episode_duration"] = args.duration
    base_env = EnvConfig(**env_echo)
    reward_cfg = RewardConfig(
        eta_per_agent=np.array(echo["reward"]["eta_per_agent"]),
        alpha=echo["reward"]["alpha"],
        yaw_scale=echo["reward"]["yaw_scale"],
        power_scale=echo["reward"]["power_scale"],
    )
    grid = _parse_grid(args.tp_grid)
    cache = args.sd_cache or os.path.join(args.out, "sd_cache.csv")
    cells, sd_by_cell = [], []
    for i, tp in enumerate(sorted(grid)):
        cell = EvalCell(tp=tp, hs=hs, angle_deg=angle, mode=mode,
                        episodes=args.episodes,
                        seed_base=args.seed + 1000 * i)
        # single-writer cache: tune sequentially before the concurrent phase
        sd_params, _ = lookup_or_tune(
            cache, plant, tp, hs, mode=mode, angle_deg=angle, seed=args.seed,
            duration=args.sd_duration, settle=args.sd_settle,
            refine=args.sd_refine,
        )
        cells.append(cell)
        sd_by_cell.append(sd_params)

    def run_one(i):
        ctrl = None
        if args.control == "sd":
            def ctrl(env, seed, _i=i):
                return run_sd_episode(env, sd_by_cell[_i], plant.force_limit, seed)
        return evaluate_cell(
            plant, cells[i], base_env, reward_cfg, bundle, sd_by_cell[i],
            args.duration, rl_controller=ctrl,
        )

    # one outer no_grad so worker threads all see autograd disabled
    with no_grad():
        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                results = list(pool.map(run_one, range(len(cells))))
        else:
            results = [run_one(i) for i in range(len(cells))]

    write_cells_csv(os.path.join(args.out, "cells.csv"), results)
    write_gain_table_csv(os.path.join(args.out, "gain_table.csv"), results)
    write_variance_table_csv(os.path.join(args.out, "variance_table.csv"), results)
    for r in results:
        print(f"Tp={r.tp:5.2f}  SD={r.sd_mean_power:10.1f} W  "
              f"RL={r.rl_mean_power:10.1f} W  gain={r.gain_pct:+7.2f}%  "
              f"yaw -{r.yaw_reduction_pct:.1f}%")
    avg = float(np.mean([r.gain_pct for r in results]))
    print(f"average gain over grid: {avg:+.2f}%")
    _write_manifest(
        args.out, "eval",
        inputs={"checkpoint": args.checkpoint, "config": args.config,
                "plant": echo["plant"], "sd_cache": cache},
        seeds=[c.seed_base for c in cells],
        outputs=["cells.csv", "gain_table.csv", "variance_table.csv"],
        parameters={"tp_grid": sorted(grid), "hs": hs, "angle_deg": angle,
                    "mode": mode, "episodes": args.episodes,
                    "duration": args.duration, "control": args.control},
    )
    return EXIT_OK


def cmd_report(args):
    labels = args.labels.split(",") if args.labels else None
    if labels is not None and len(labels) != len(args.logs):
        raise ConfigError(
            f"{len(labels)} labels for {len(args.logs)} metrics logs"
        )
    series = {}
    for i, path in enumerate(args.logs):
        label = labels[i] if labels else os.path.splitext(os.path.basename(path))[0]
        if label in series:
            raise ConfigError(f"duplicate variant label {label!r}")
        series[label] = team_gain_series(read_metrics_csv(path))
    axis, aligned = align_series(series)
    reached = {
        name: steps_to_threshold(axis, gains, args.threshold)
        for name, gains in aligned.items()
    }
    write_convergence_csv(os.path.join(args.out, "convergence.csv"), axis, aligned)
    write_convergence_svg(
        os.path.join(args.out, "convergence.svg"), axis, aligned,
        threshold=args.threshold,
    )
    write_threshold_csv(
        os.path.join(args.out, "steps_to_threshold.csv"), args.threshold, reached
    )
    for name, steps in reached.items():
        state = "not reached" if steps is None else f"reached at {steps} env steps"
        print(f"{name}: gain {args.threshold:g}% {state}")
    _write_manifest(
        args.out, "report",
        inputs={"logs": list(args.logs)},
        seeds=[],
        outputs=["convergence.csv", "convergence.svg", "steps_to_threshold.csv"],
        parameters={"threshold": args.threshold,
                    "labels": list(aligned)},
    )
    return EXIT_OK


def cmd_selftest(args):
    results, ok = run_selftest(plant_file=args.plant)
    summary = {
        "passed": ok,
        "checks": [
            {"name": r.name, "passed": r.passed, "detail": r.detail,
             "seconds": round(r.seconds, 3)}
            for r in results
        ],
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    with open(os.path.join(args.out, "selftest.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        args.out, "selftest",
        inputs={"plant": args.plant},
        seeds=[],
        outputs=["selftest.json"],
        parameters={},
    )
    if not ok:
        failing = [r.name for r in results if not r.passed]
        print(f"failing checks: {', '.join(failing)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wecdesk",
        description="Desk-scale three-tether wave energy converter control lab.",
        epilog="Config keys may be overridden with WECDESK_<SECTION>_<KEY> "
               "environment variables.",
    )
    parser.add_argument("--config", default=None,
                        help="run configuration file (INI sections: waves, "
                             "plant, reward, model, ppo)")
    parser.add_argument("--seed", type=int, default=0, help="base seed")
    parser.add_argument("--out", default="wecdesk-out",
                        help="output directory for all artifacts")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for grid evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("waves", help="synthesize a wave trace to CSV")
    p.add_argument("--duration", type=float, default=2000.0, help="seconds")
    p.add_argument("--dt", type=float, default=0.1, help="sample spacing, s")
    p.set_defaults(func=cmd_waves)

    p = sub.add_parser("tune-sd", help="grid-tune the spring-damper baseline")
    p.add_argument("--tp-grid", default=",".join(str(t) for t in DEFAULT_TP_GRID))
    p.add_argument("--duration", type=float, default=2000.0,
                   help="tuning episode length, s")
    p.add_argument("--settle", type=float, default=200.0,
                   help="transient to discard before scoring, s")
    p.add_argument("--refine", type=int, default=1, help="grid refinement passes")
    p.add_argument("--cache", default=None,
                   help="SD cache CSV (default <out>/sd_cache.csv)")
    p.set_defaults(func=cmd_tune_sd)

    p = sub.add_parser("train", help="train the multi-agent PPO controller")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--max-rounds", type=int, default=None,
                   help="stop after this many episode rounds")
    p.add_argument("--sd-cache", default=None)
    p.add_argument("--sd-duration", type=float, default=2000.0)
    p.add_argument("--sd-settle", type=float, default=200.0)
    p.add_argument("--sd-refine", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="paired SD/RL evaluation over a Tp grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tp-grid", default=",".join(str(t) for t in DEFAULT_TP_GRID))
    p.add_argument("--episodes", type=int, default=10, help="episodes per cell")
    p.add_argument("--duration", type=float, default=200.0,
                   help="evaluation episode length, s (2000 for full runs)")
    p.add_argument("--hs", type=float, default=None,
                   help="wave height override (default: training value)")
    p.add_argument("--angle", type=float, default=None)
    p.add_argument("--mode", choices=("regular", "irregular", "spread"),
                   default=None)
    p.add_argument("--control", choices=("policy", "sd"), default="policy",
                   help="'sd' replays the baseline as the candidate "
                        "(self-check: gains must vanish)")
    p.add_argument("--sd-cache", default=None)
    p.add_argument("--sd-duration", type=float, default=2000.0)
    p.add_argument("--sd-settle", type=float, default=200.0)
    p.add_argument("--sd-refine", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="convergence report from metrics logs")
    p.add_argument("logs", nargs="+", help="metrics.csv files, one per variant")
    p.add_argument("--labels", default=None,
                   help="comma-separated variant names (default: file stems)")
    p.add_argument("--threshold", type=float, default=5.0,
                   help="gain threshold (%%) for steps-to-threshold")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run the invariant check battery")
    p.add_argument("--plant", default="desk6dof-v1")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except (ConfigError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except WecdeskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
