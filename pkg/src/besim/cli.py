"""Command-line entry point: ``besim <command> [--key value ...]``.

Every command reads an optional key=value file (``--config``) and then
command-line flags, which win. Unknown keys are rejected and the resolved
settings are printed to stderr before anything runs. Exit status is 0 on
success, 1 for usage or configuration errors, 2 for data errors and 3 for
numeric failures. ``BESIM_THREADS`` caps BLAS threads (default 1).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .codec import encode_motion
from .data import AgentTrack, TrialData, all_tracks, load_trial, read_config, save_trial, subsample_labels
from .estimator import BehaviorModel
from .exceptions import ConfigError, ContractError, DataError
from .flyworld import Chamber, FlyPose, synthfly_chamber, synthfly_generate
from .metrics import BaselinePolicy
from .render import render_strokes, render_trajectories, write_svg
from .simulate import (SimConfig, export_hidden_states, initial_poses_from_track, label_overrides,
                       simulate_flies, simulate_handwriting, trajectories_to_trial)

log = logging.getLogger("besim")

BASELINES = ("uniform", "prior", "constant", "smooth_constant")

COMMANDS = {
    "gensynth": {"out": "synth", "trials": 5, "frames": 50000, "seed": 0},
    "train": {"data": "synth", "out": "model", "variant": "besnet", "levels": 2, "units": 64, "bins": 21,
              "lam": 0.5, "label_mode": "multitask", "window": 50, "batch": 20, "epochs": 10,
              "max_time": 0.0, "lr": 1e-3, "clip": 5.0, "labels": 1.0, "seed": 0, "verbose": False},
    "eval": {"model": "model", "data": "synth", "out": "eval.csv", "smooth": True, "seed": 0},
    "loglik": {"model": "model", "data": "synth", "train_data": "", "out": "loglik.csv", "seed": 0},
    "simulate": {"model": "model", "out": "sim", "kind": "fly", "agents": 20, "steps": 1000, "warmup": 50,
                 "mode": "sample", "force": "", "overrides": "", "primers": "", "seed": 0},
    "export-states": {"model": "model", "data": "synth", "out": "states.csv", "seed": 0},
    "render": {"data": "sim", "out": "render.svg", "kind": "fly", "width": 600, "seed": 0},
}

HELP = {
    "gensynth": "generate SynthFly trials",
    "train": "train a model (checkpoint + loss curve)",
    "eval": "F1 report of a model on labeled trials",
    "loglik": "motion log-likelihood of a model and the four baselines",
    "simulate": "closed-loop simulation (fly or handwriting)",
    "export-states": "per-frame hidden states as CSV",
    "render": "SVG of trajectories or pen strokes",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(key, value, default):
    try:
        if isinstance(default, bool):
            return _parse_bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return str(value)


def resolve_config(command, file_values, cli_values):
    """Defaults, then the config file, then command-line flags."""
    defaults = COMMANDS[command]
    cfg = dict(defaults)
    for source in (file_values, cli_values):
        for key, value in source.items():
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} for command {command!r}")
            if value is not None:
                cfg[key] = _coerce(key, value, defaults[key])
    return cfg


def build_parser():
    parser = _Parser(prog="besim", description="Behavior modeling and simulation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, defaults in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="key=value settings file")
        for key, default in defaults.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar=type(default).__name__.upper(),
                           help=f"(default: {default})")
    return parser


def load_trials(path):
    """A trial directory, or a directory whose subdirectories are trials."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path}: no such directory")
    if any(path.glob("agent_*.csv")):
        return [load_trial(path)]
    subs = sorted(p for p in path.iterdir() if p.is_dir() and any(p.glob("agent_*.csv")))
    if not subs:
        raise DataError(f"{path}: contains no trials")
    return [load_trial(p) for p in subs]


# --- commands ------------------------------------------------------------------

def cmd_gensynth(cfg):
    out = Path(cfg["out"])
    for k in range(cfg["trials"]):
        trial = synthfly_generate(cfg["frames"], seed=cfg["seed"] * 1000 + k, trial_id=f"synthfly_{k:02d}")
        save_trial(trial, out / trial.trial_id)
    print(f"wrote {cfg['trials']} trials to {out}")


def cmd_train(cfg):
    trials = load_trials(cfg["data"])
    tracks = all_tracks(trials)
    if cfg["labels"] < 1.0:
        tracks = subsample_labels(tracks, cfg["labels"], seed=cfg["seed"])
    model = BehaviorModel(variant=cfg["variant"], n_levels=cfg["levels"], n_units=cfg["units"], n_bins=cfg["bins"],
                          lam=cfg["lam"], label_mode=cfg["label_mode"], window=cfg["window"],
                          batch_size=cfg["batch"], n_epochs=cfg["epochs"],
                          max_time=cfg["max_time"] or None, learning_rate=cfg["lr"], clip_norm=cfg["clip"],
                          random_state=cfg["seed"], verbose=cfg["verbose"])
    model.fit(tracks, class_names=trials[0].class_names)
    out = Path(cfg["out"])
    model.save(out)
    with open(out / "loss_curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "C", "C_x", "C_y", "labeled_frames", "motion_frames"])
        for e, r in enumerate(model.loss_curve_):
            w.writerow([e, repr(r.C), repr(r.C_x), repr(r.C_y), r.labeled_frames, r.motion_frames])
    print(f"trained {model.n_epochs_} epochs; model written to {out}")


def cmd_eval(cfg):
    model = BehaviorModel.load(cfg["model"])
    report = model.evaluate(load_trials(cfg["data"]), smooth=cfg["smooth"])
    report.to_csv(cfg["out"])
    print(report.table())


def loglik_table(model, test_tracks, train_tracks):
    """Rows ``(policy, per_frame, total, frames)`` for the model and each baseline."""
    spec = model.binner_.spec_
    rows = []
    if model.config_.has_motion_output:
        total, frames = model.motion_loglik(test_tracks)
        rows.append(("model", total / max(frames, 1), total, frames))
    else:
        rows.append(("model", float("nan"), float("nan"), 0))
    train_bins = [encode_motion(t.x, spec) for t in train_tracks]
    test_bins = [encode_motion(t.x, spec) for t in test_tracks]
    for kind in BASELINES:
        total, frames = BaselinePolicy(kind).fit(train_bins, spec.bin_counts).loglik(test_bins)
        rows.append((kind, total / max(frames, 1), total, frames))
    return rows


def cmd_loglik(cfg):
    model = BehaviorModel.load(cfg["model"])
    test = all_tracks(load_trials(cfg["data"]))
    if cfg["train_data"]:
        train = all_tracks(load_trials(cfg["train_data"]))
    else:
        log.warning("no train_data given; baselines are fitted on the evaluation data")
        train = test
    rows = loglik_table(model, test, train)
    with open(cfg["out"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "loglik_per_frame", "loglik_total", "frames"])
        for name, per, total, frames in rows:
            w.writerow([name, f"{per:.6f}", f"{total:.6f}", frames])
    for name, per, _, frames in rows:
        print(f"{name:<16} {per:12.4f}  ({frames} frames)")


def parse_overrides(text):
    """``"level:unit:value;..."`` into override triples."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(f"override {part!r} must be level:unit:value")
        try:
            out.append((int(bits[0]), int(bits[1]), float(bits[2])))
        except ValueError:
            raise ConfigError(f"override {part!r} must be level:unit:value") from None
    return tuple(out)


def random_poses(chamber, n, rng, margin=5.0):
    poses = []
    x0, y0, x1, y1 = chamber.bounds()
    while len(poses) < n:
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        if chamber.wall_distance(x, y) < margin:
            continue
        if any(np.hypot(x - cx, y - cy) < r + margin for cx, cy, r in chamber.objects):
            continue
        poses.append(FlyPose(x, y, rng.uniform(-np.pi, np.pi)))
    return poses


def fly_primers(tracks, n_agents, warmup, rng):
    """Warmup windows drawn from real tracks, and the poses they end in."""
    usable = [t for t in tracks if len(t) > warmup and "pos_x" in t.extra]
    if not usable:
        raise DataError(f"no primer track has pose columns and more than {warmup} frames")
    primers, poses = [], []
    for k in range(n_agents):
        t = usable[k % len(usable)]
        s = int(rng.integers(0, len(t) - warmup))
        primers.append(AgentTrack(t.x[s:s + warmup], t.v[s:s + warmup], agent_id=str(k)))
        poses.append(initial_poses_from_track(t, s + warmup - 1))
    return primers, poses


def cmd_simulate(cfg):
    model = BehaviorModel.load(cfg["model"])
    overrides = parse_overrides(cfg["overrides"])
    if cfg["force"]:
        overrides = overrides + label_overrides(model, cfg["force"])
    sim = SimConfig(cfg["steps"], cfg["seed"], overrides, cfg["warmup"], cfg["mode"])
    out = Path(cfg["out"])
    if cfg["kind"] == "handwriting":
        primer = None
        if cfg["primers"] and sim.warmup:
            primer = all_tracks(load_trials(cfg["primers"]))[0]
        res = simulate_handwriting(model, sim, primer=primer)
        track = AgentTrack(res.strokes, None, agent_id="0", extra={"_x_names": ["x_dx", "x_dy", "x_z"]})
        save_trial(TrialData("handwriting", [track], list(model.classes_), {"seed": cfg["seed"]}), out)
    elif cfg["kind"] == "fly":
        rng = np.random.default_rng([cfg["seed"], 0, 1])
        if cfg["primers"] and sim.warmup:
            trials = load_trials(cfg["primers"])
            chamber = Chamber.from_meta(trials[0].meta) if "chamber_shape" in trials[0].meta else synthfly_chamber()
            primers, poses = fly_primers(all_tracks(trials), cfg["agents"], sim.warmup, rng)
        else:
            chamber = synthfly_chamber()
            primers, poses = None, random_poses(chamber, cfg["agents"], rng)
        trajs = simulate_flies(model, chamber, poses, sim, primers=primers)
        trial = trajectories_to_trial(trajs, model.classes_, chamber, meta={"seed": cfg["seed"]})
        save_trial(trial, out)
    else:
        raise ConfigError(f"kind must be 'fly' or 'handwriting', got {cfg['kind']!r}")
    print(f"simulation written to {out}")


def cmd_export_states(cfg):
    model = BehaviorModel.load(cfg["model"])
    n = export_hidden_states(model, load_trials(cfg["data"]), cfg["out"])
    print(f"wrote {n} rows to {cfg['out']}")


def cmd_render(cfg):
    trials = load_trials(cfg["data"])
    if cfg["kind"] == "fly":
        paths = [np.column_stack([a.extra["pos_x"], a.extra["pos_y"]])
                 for t in trials for a in t.agents if "pos_x" in a.extra and "pos_y" in a.extra]
        meta = trials[0].meta
        chamber = Chamber.from_meta(meta) if "chamber_shape" in meta else None
        svg = render_trajectories(paths, chamber, cfg["width"])
    elif cfg["kind"] == "handwriting":
        strokes = [a.x[:, :3] for t in trials for a in t.agents if a.x.shape[1] >= 3]
        svg = render_strokes(np.concatenate(strokes) if strokes else np.zeros((0, 3)), cfg["width"])
    else:
        raise ConfigError(f"kind must be 'fly' or 'handwriting', got {cfg['kind']!r}")
    write_svg(cfg["out"], svg)
    print(f"wrote {cfg['out']}")


RUNNERS = {"gensynth": cmd_gensynth, "train": cmd_train, "eval": cmd_eval, "loglik": cmd_loglik,
           "simulate": cmd_simulate, "export-states": cmd_export_states, "render": cmd_render}


def run(command, cfg):
    threads = os.environ.get("BESIM_THREADS", "1")
    try:
        threads = int(threads)
    except ValueError:
        raise ConfigError(f"BESIM_THREADS must be an integer, got {threads!r}") from None
    with threadpool_limits(limits=max(threads, 1)):
        RUNNERS[command](cfg)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        file_values = read_config(args.config) if args.config else {}
        cli_values = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        cfg = resolve_config(command, file_values, cli_values)
        for key, value in cfg.items():
            print(f"# {key} = {value}", file=sys.stderr)
        run(command, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"besim: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ContractError, FileNotFoundError, OSError) as exc:
        print(f"besim: data error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"besim: numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
