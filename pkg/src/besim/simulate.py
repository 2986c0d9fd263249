"""Closed-loop simulation and hidden-state export.

A simulation step feeds each agent's sampled motion back in as its next
motion input. Fly simulations move every agent first and only then
recompute all retinas, so the update order of agents is irrelevant.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .codec import sample_motion
from .data import AgentTrack, TrialData, denormalize_strokes
from .exceptions import ContractError, SimulationError
from .flyworld import MOTION_DIM, MOTION_NAMES, FlyPose, RetinaConfig, apply_motion, compute_retina

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    """Closed-loop settings.

    ``unit_overrides`` holds ``(level, unit, value)`` triples with 1-based
    discriminative levels; the forced value replaces the unit's state after
    every step at that level, before higher cells read it.
    """

    steps: int = 1000
    seed: int = 0
    unit_overrides: tuple = ()
    warmup: int = 50
    mode: str = "sample"

    def __post_init__(self):
        if self.steps < 0 or self.warmup < 0:
            raise ContractError("steps and warmup must be non-negative")
        if self.mode not in ("sample", "argmax"):
            raise ContractError(f"unknown sampling mode {self.mode!r}")
        object.__setattr__(self, "unit_overrides", tuple(tuple(o) for o in self.unit_overrides))

    def overrides_for(self, config):
        """Map to the network's ``{level_index: (units, values)}`` form."""
        out = {}
        for level, unit, value in self.unit_overrides:
            level, unit, value = int(level), int(unit), float(value)
            if not 1 <= level <= config.n_levels:
                raise ContractError(f"override level {level} outside 1..{config.n_levels}")
            if not 0 <= unit < config.units[level - 1]:
                raise ContractError(f"override unit {unit} outside level {level} width {config.units[level - 1]}")
            if not -1.0 <= value <= 1.0:
                raise ContractError(f"override value {value} outside [-1, 1]")
            out.setdefault(level - 1, {})[unit] = value
        return {l: (np.array(sorted(u)), np.array([u[k] for k in sorted(u)])) for l, u in out.items()}


def label_overrides(model, class_name, level=None):
    """Overrides that force ``class_name`` on and every other label unit off."""
    if class_name not in model.classes_:
        raise ContractError(f"unknown class {class_name!r}")
    level = model.config_.n_levels if level is None else level
    return tuple((level, k, 1.0 if c == class_name else -1.0) for k, c in enumerate(model.classes_))


def agent_rng(seed, agent_id):
    """Independent stream per ``(seed, agent_id)``."""
    return np.random.default_rng([int(seed), int(agent_id)])


@dataclass
class SimTrajectory:
    """One simulated agent. Row ``j`` of ``x``/``v``/``y_hat``/``hidden`` belongs
    to ``poses[j + 1]``; ``x[j]`` is the motion that produced that pose."""

    agent_id: int
    poses: np.ndarray
    x: np.ndarray
    v: np.ndarray
    y_hat: np.ndarray
    hidden: np.ndarray = field(repr=False)


def _step_batch(network, x, v, state, overrides):
    res = network.forward(x[None], v[None], state, overrides, keep_cache=False)
    hidden = np.concatenate([h[0] for h in res.H] + [g[0] for g in res.G if g is not None], axis=1)
    return [p[0] for p in res.probs], res.y_hat[0], hidden, res.state


def _prime(network, primers, warmup, x0, v0, overrides):
    """State after the warmup frames plus the motion distributions they predict."""
    B = x0.shape[0]
    if primers is not None and warmup > 0:
        if len(primers) != B:
            raise ContractError(f"{len(primers)} primer tracks for {B} agents")
        if any(len(t) < warmup for t in primers):
            raise ContractError(f"primer tracks must have at least {warmup} frames")
        X = np.stack([t.x[:warmup] for t in primers], axis=1)
        V = np.stack([t.v[:warmup] for t in primers], axis=1)
    else:
        X, V = x0[None], v0[None]
    res = network.forward(X, V, None, overrides, keep_cache=False)
    return [p[-1] for p in res.probs], res.state


def initial_poses_from_track(track, frame):
    """Pose of a SynthFly-style track (``pos_x``, ``pos_y``, ``heading`` extras)."""
    ex = track.extra
    for key in ("pos_x", "pos_y", "heading"):
        if key not in ex:
            raise ContractError(f"track {track.agent_id} lacks the {key!r} column")
    return FlyPose(float(ex["pos_x"][frame]), float(ex["pos_y"][frame]), float(ex["heading"][frame]),
                   float(track.x[frame, 3]), float(track.x[frame, 4]))


def simulate_flies(model, chamber, initial_poses, cfg, retina=RetinaConfig(), primers=None,
                   agent_ids=None, motion_hook=None):
    """Run agents in closed loop inside ``chamber``.

    ``primers`` optionally gives one real track per agent whose first
    ``cfg.warmup`` frames set the starting state; without them the network
    starts from rest at ``initial_poses``. ``motion_hook(step, probs)`` may
    replace the batch of predicted distributions before sampling (testing).
    """
    net = model.network_
    spec = model.binner_.spec_
    mcfg = model.config_
    if mcfg.motion_dim != MOTION_DIM or not mcfg.has_motion_output:
        raise ContractError("fly simulation needs a motion model with 8 motion dimensions")
    if mcfg.sensory_dim != retina.size:
        raise ContractError(f"model expects {mcfg.sensory_dim} sensory inputs, retina gives {retina.size}")
    poses = list(initial_poses)
    B = len(poses)
    agent_ids = list(range(B)) if agent_ids is None else [int(a) for a in agent_ids]
    if len(agent_ids) != B:
        raise ContractError("one agent id per initial pose required")
    overrides = cfg.overrides_for(mcfg)
    rngs = [agent_rng(cfg.seed, a) for a in agent_ids]

    x0 = np.zeros((B, MOTION_DIM))
    x0[:, 3] = [p.wing_angle_l for p in poses]
    x0[:, 4] = [p.wing_angle_r for p in poses]
    v0 = np.stack([compute_retina(p, poses[:k] + poses[k + 1:], chamber, retina) for k, p in enumerate(poses)])
    probs, state = _prime(net, primers, cfg.warmup, x0, v0, overrides)

    n_hidden = 2 * sum(mcfg.units)
    P = np.empty((cfg.steps + 1, B, 8))
    P[0] = [p.as_array() for p in poses]
    Xs = np.empty((cfg.steps, B, MOTION_DIM))
    Vs = np.empty((cfg.steps, B, mcfg.sensory_dim))
    Ys = np.empty((cfg.steps, B, mcfg.n_actions))
    Hs = np.empty((cfg.steps, B, n_hidden))
    for step in range(cfg.steps):
        if motion_hook is not None:
            probs = motion_hook(step, probs)
        x = np.stack([sample_motion([p[b] for p in probs], spec, rngs[b], cfg.mode) for b in range(B)])
        poses = [apply_motion(p, xb) for p, xb in zip(poses, x)]
        arr = np.array([p.as_array() for p in poses])
        if not np.all(np.isfinite(arr)):
            raise SimulationError("non-finite pose", step=step)
        v = np.stack([compute_retina(p, poses[:k] + poses[k + 1:], chamber, retina) for k, p in enumerate(poses)])
        probs, y_hat, hidden, state = _step_batch(net, x, v, state, overrides)
        if not np.all(np.isfinite(hidden)):
            raise SimulationError("non-finite hidden state", step=step)
        P[step + 1], Xs[step], Vs[step], Ys[step], Hs[step] = arr, x, v, y_hat, hidden
    return [SimTrajectory(agent_ids[b], P[:, b].copy(), Xs[:, b].copy(), Vs[:, b].copy(), Ys[:, b].copy(),
                          Hs[:, b].copy()) for b in range(B)]


def trajectories_to_trial(trajs, class_names, chamber=None, trial_id="simulation", meta=None):
    """Pack simulated agents as a trial (poses and scores kept as extra columns)."""
    agents = []
    for t in trajs:
        extra = {"pos_x": t.poses[1:, 0], "pos_y": t.poses[1:, 1], "heading": t.poses[1:, 2],
                 "_x_names": [f"x_{n}" for n in MOTION_NAMES]}
        for k, c in enumerate(class_names):
            extra[f"score_{c}"] = t.y_hat[:, k]
        agents.append(AgentTrack(t.x, t.v, np.zeros((len(t.x), len(class_names)), bool), None,
                                 agent_id=str(t.agent_id), extra=extra))
    m = dict(chamber.to_meta()) if chamber is not None else {}
    m.update(meta or {})
    return TrialData(trial_id, agents, list(class_names), m)


def containment_fraction(trajs, chamber, margin=0.05):
    """Fraction of simulated agent-frames inside the chamber grown by ``margin``."""
    inside = total = 0
    for t in trajs:
        ok = chamber.contains(t.poses[1:, 0], t.poses[1:, 1], margin)
        inside += int(np.count_nonzero(ok))
        total += ok.size
    return inside / max(total, 1)


# --- handwriting ---------------------------------------------------------------

@dataclass
class StrokeSimulation:
    """``strokes`` are de-normalised ``(dx, dy, z)``; ``normalized`` is what the model saw."""

    strokes: np.ndarray
    normalized: np.ndarray
    y_hat: np.ndarray


def simulate_handwriting(model, cfg, stats=None, primer=None):
    """Generate ``cfg.steps`` pen moves from a stroke model without sensory input.

    The pen-visibility dimension (index 2) must have two bins; its sampled
    bin index is the emitted ``z``.
    """
    net = model.network_
    spec = model.binner_.spec_
    mcfg = model.config_
    if mcfg.sensory_dim != 0 or mcfg.motion_dim != 3 or not mcfg.has_motion_output:
        raise ContractError("handwriting simulation needs a motion model over (dx, dy, z) without sensory input")
    if spec.bin_counts[2] != 2:
        raise ContractError("the pen dimension must have exactly 2 bins")
    overrides = cfg.overrides_for(mcfg)
    rng = agent_rng(cfg.seed, 0)
    x0 = np.array([[0.0, 0.0, 1.0]])
    probs, state = _prime(net, None if primer is None else [primer], cfg.warmup, x0, np.zeros((1, 0)), overrides)
    out = np.empty((cfg.steps, 3))
    ys = np.empty((cfg.steps, mcfg.n_actions))
    empty_v = np.zeros((1, 0))
    for step in range(cfg.steps):
        x, bins = sample_motion([p[0] for p in probs], spec, rng, cfg.mode, return_bins=True)
        x[2] = float(bins[2])
        out[step] = x
        probs, y_hat, _, state = _step_batch(net, x[None], empty_v, state, overrides)
        ys[step] = y_hat[0]
    strokes = out if stats is None else denormalize_strokes([out], stats)[0]
    return StrokeSimulation(strokes, out, ys)


# --- hidden-state export ----------------------------------------------------------

def hidden_state_columns(config):
    cols = [f"h{l + 1}_{u}" for l in range(config.n_levels) for u in range(config.units[l])]
    if config.has_motion_output:
        cols += [f"g{l + 1}_{u}" for l in range(config.n_levels) for u in range(config.units[l])]
    return cols


def export_hidden_states(model, trials, path):
    """Write one CSV row per agent-frame with its states and metadata.

    Metadata columns are trial, agent, frame, one 0/1/blank column per class
    (blank where unannotated), then any extra per-frame attributes the first
    trial carries. State values are written with full float64 precision.
    Returns the number of rows written.
    """
    if isinstance(trials, TrialData):
        trials = [trials]
    if not trials:
        raise ContractError("no trials to export")
    extras = [k for k in trials[0].agents[0].extra if not k.startswith("_")]
    classes = list(model.classes_)
    state_cols = hidden_state_columns(model.config_)
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "agent", "frame", *(f"label_{c}" for c in classes), *extras, *state_cols])
        for trial in trials:
            states = model.transform(trial.agents)
            for agent, S in zip(trial.agents, states):
                ex = [np.asarray(agent.extra.get(k, np.full(len(agent), np.nan)), dtype=np.float64) for k in extras]
                for i in range(len(agent)):
                    lab = [str(int(agent.labels[i, k])) if agent.label_mask[i] else "" for k in range(len(classes))]
                    w.writerow([trial.trial_id, agent.agent_id, i, *lab, *(repr(float(e[i])) for e in ex),
                                *map(repr, S[i].tolist())])
                n += len(agent)
    return n
