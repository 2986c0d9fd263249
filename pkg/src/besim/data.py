"""Trial containers, file formats, stroke normalisation, label subsampling and
window batching.

On disk a trial is a directory::

    meta.cfg            key=value lines (trial_id, classes, free-form extras)
    agent_<id>.csv      frame, x_* motion columns, v_* sensory columns, extras
    labels.csv          agent_id, class_name, start, end   (end exclusive)

``labels.csv`` rows with the reserved class name ``@labeled`` mark which frame
ranges carry annotations. An agent with bouts but no ``@labeled`` rows is
treated as fully annotated; an agent with no rows at all is unlabeled.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ContractError, DataError

log = logging.getLogger(__name__)

LABELED = "@labeled"


@dataclass
class Bout:
    cls: int
    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ContractError(f"bout start {self.start} must precede end {self.end}")

    def __len__(self):
        return self.end - self.start


def _rows(a):
    if a.ndim < 2:
        return a.reshape(-1, 1)
    return a.reshape(a.shape[0], int(np.prod(a.shape[1:])))


@dataclass
class AgentTrack:
    x: np.ndarray
    v: np.ndarray
    labels: np.ndarray = None
    label_mask: np.ndarray = None
    agent_id: str = "0"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = _rows(np.asarray(self.x, dtype=np.float64))
        T = self.x.shape[0]
        self.v = np.zeros((T, 0)) if self.v is None else _rows(np.asarray(self.v, dtype=np.float64))
        if self.labels is None:
            self.labels = np.zeros((T, 0), dtype=bool)
        self.labels = _rows(np.asarray(self.labels, dtype=bool))
        if self.label_mask is None:
            self.label_mask = np.zeros(T, dtype=bool)
        self.label_mask = np.asarray(self.label_mask, dtype=bool)
        if self.v.shape[0] != T or self.labels.shape[0] != T or self.label_mask.shape != (T,):
            raise ContractError("x, v, labels and label_mask must have equal row counts")
        if np.any(self.labels[~self.label_mask]):
            raise ContractError("labels must be false wherever the label mask is false")

    def __len__(self):
        return self.x.shape[0]

    @property
    def n_classes(self):
        return self.labels.shape[1]


@dataclass
class TrialData:
    trial_id: str
    agents: list
    class_names: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(a) for a in self.agents}
        if len(lengths) > 1:
            raise ContractError(f"trial {self.trial_id}: agents have differing frame counts {sorted(lengths)}")


def frames_to_bouts(frames):
    """Maximal runs of True per class. ``frames`` is ``(T,)`` or ``(T, N)``."""
    frames = np.asarray(frames, dtype=bool)
    if frames.ndim == 1:
        frames = frames[:, None]
    bouts = []
    for c in range(frames.shape[1]):
        col = np.concatenate([[False], frames[:, c], [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(col))
        bouts.extend(Bout(c, int(s), int(e)) for s, e in zip(edges[::2], edges[1::2]))
    return bouts


def bouts_to_frames(bouts, n_frames, n_classes):
    out = np.zeros((n_frames, n_classes), dtype=bool)
    for b in bouts:
        if b.end > n_frames or b.start < 0:
            raise ContractError(f"bout {b} exceeds {n_frames} frames")
        out[b.start:b.end, b.cls] = True
    return out


# --- key=value config files -------------------------------------------------

def read_config(path):
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            cfg[key.strip()] = value.strip()
    return cfg


def write_config(path, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in cfg.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key}={value}\n")


# --- trial directories -------------------------------------------------------

def _fmt(val):
    return format(float(val), ".9g")


def save_trial(trial, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"trial_id": trial.trial_id, "classes": ",".join(trial.class_names)}
    meta.update({k: v for k, v in trial.meta.items() if k not in meta})
    write_config(path / "meta.cfg", meta)
    for agent in trial.agents:
        x_names = agent.extra.get("_x_names") or [f"x_{d}" for d in range(agent.x.shape[1])]
        v_names = [f"v_{d}" for d in range(agent.v.shape[1])]
        extras = [k for k in agent.extra if not k.startswith("_")]
        with open(path / f"agent_{agent.agent_id}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", *x_names, *v_names, *extras])
            cols = [agent.x, agent.v] + [np.asarray(agent.extra[k], dtype=np.float64).reshape(-1, 1) for k in extras]
            block = np.concatenate(cols, axis=1) if cols else np.zeros((len(agent), 0))
            for i, row in enumerate(block):
                w.writerow([i, *(_fmt(v) for v in row)])
    with open(path / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "class_name", "start", "end"])
        for agent in trial.agents:
            if not agent.label_mask.any():
                continue
            if not agent.label_mask.all():
                for b in frames_to_bouts(agent.label_mask):
                    w.writerow([agent.agent_id, LABELED, b.start, b.end])
            for b in frames_to_bouts(agent.labels):
                w.writerow([agent.agent_id, trial.class_names[b.cls], b.start, b.end])
            if agent.label_mask.all() and not agent.labels.any():
                w.writerow([agent.agent_id, LABELED, 0, len(agent)])


def _read_agent_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "frame":
            raise DataError(f"{path}: header must start with 'frame'", line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                frame = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}: {exc}", line=lineno) from None
            if frame != len(rows):
                raise DataError(f"{path}: frame {frame} out of sequence", line=lineno)
            rows.append(vals)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    return header[1:], data


def load_trial(path, class_names=None):
    """Load a trial directory written by :func:`save_trial` (or by a converter)."""
    path = Path(path)
    meta = read_config(path / "meta.cfg") if (path / "meta.cfg").exists() else {}
    trial_id = meta.pop("trial_id", path.name)
    if class_names is None:
        class_names = [c for c in meta.pop("classes", "").split(",") if c]
    else:
        meta.pop("classes", None)
    class_index = {c: k for k, c in enumerate(class_names)}
    files = sorted(path.glob("agent_*.csv"), key=lambda p: _agent_sort_key(p.stem[len("agent_"):]))
    if not files:
        raise DataError(f"{path}: no agent_*.csv files")
    agents = {}
    for f in files:
        names, data = _read_agent_csv(f)
        xi = [k for k, n in enumerate(names) if n.startswith("x_")]
        vi = [k for k, n in enumerate(names) if n.startswith("v_")]
        extra = {n: data[:, k] for k, n in enumerate(names) if not n.startswith(("x_", "v_"))}
        aid = f.stem[len("agent_"):]
        if any(n != f"x_{d}" for d, n in enumerate(names[k] for k in xi)):
            extra["_x_names"] = [names[k] for k in xi]
        T = data.shape[0]
        agents[aid] = AgentTrack(data[:, xi], data[:, vi], np.zeros((T, len(class_names)), bool),
                                 np.zeros(T, bool), agent_id=aid, extra=extra)
    labels_path = path / "labels.csv"
    if labels_path.exists():
        _apply_labels(labels_path, agents, class_index)
    return TrialData(trial_id, list(agents.values()), list(class_names), meta)


def _agent_sort_key(aid):
    return (0, int(aid), "") if aid.isdigit() else (1, 0, aid)


def _apply_labels(path, agents, class_index):
    explicit = {aid: np.zeros(len(a), bool) for aid, a in agents.items()}
    has_explicit = set()
    has_bouts = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        if header != ["agent_id", "class_name", "start", "end"]:
            raise DataError(f"{path}: unexpected header {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError(f"{path}: expected 4 fields, got {len(row)}", line=lineno)
            aid, name = row[0], row[1]
            try:
                start, end = int(row[2]), int(row[3])
            except ValueError as exc:
                raise DataError(f"{path}: {exc}", line=lineno) from None
            if aid not in agents:
                raise DataError(f"{path}: unknown agent {aid!r}", line=lineno)
            T = len(agents[aid])
            if not 0 <= start < end <= T:
                raise DataError(f"{path}: bout [{start}, {end}) outside 0..{T}", line=lineno)
            if name == LABELED:
                explicit[aid][start:end] = True
                has_explicit.add(aid)
                continue
            if name not in class_index:
                raise DataError(f"{path}: unknown class name {name!r}", line=lineno)
            agents[aid].labels[start:end, class_index[name]] = True
            has_bouts.add(aid)
    for aid, agent in agents.items():
        if aid in has_explicit:
            agent.label_mask[:] = explicit[aid]
        elif aid in has_bouts:
            agent.label_mask[:] = True
        if np.any(agent.labels[~agent.label_mask]):
            raise DataError(f"{path}: agent {aid} has bouts outside its labeled ranges")


def all_tracks(trials):
    return [a for t in trials for a in t.agents]


# --- handwriting normalisation ---------------------------------------------

@dataclass(frozen=True)
class StrokeStats:
    mean: tuple
    std: tuple


def normalize_strokes(writer_tracks):
    """Z-score dx, dy per writer, using visible (z=1) points for the statistics.

    ``writer_tracks`` maps writer id to a list of ``(T, 3)`` arrays of
    ``(dx, dy, z)``. Returns ``(normalised, stats)`` with the same keys.
    """
    normalised, stats = {}, {}
    for writer, tracks in writer_tracks.items():
        arrs = [np.asarray(t, dtype=np.float64) for t in tracks]
        pts = np.concatenate(arrs)
        visible = pts[pts[:, 2] > 0.5, :2]
        if visible.shape[0] < 2:
            raise ContractError(f"writer {writer}: need at least 2 visible points")
        mean = visible.mean(axis=0)
        std = visible.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        stats[writer] = StrokeStats(tuple(mean), tuple(std))
        out = []
        for a in arrs:
            b = a.copy()
            b[:, :2] = (a[:, :2] - mean) / std
            out.append(b)
        normalised[writer] = out
    return normalised, stats


def denormalize_strokes(tracks, stats):
    out = []
    for a in tracks:
        b = np.array(a, dtype=np.float64, copy=True)
        b[:, :2] = b[:, :2] * np.asarray(stats.std) + np.asarray(stats.mean)
        out.append(b)
    return out


# --- label subsampling -----------------------------------------------------

def subsample_labels(tracks, fraction, seed=0, segment_len=500):
    """Keep annotations on a seeded random subset of contiguous labeled segments.

    Labeled runs are cut into segments of at most ``segment_len`` frames and
    segments are kept in shuffled order until ``fraction`` of the labeled
    frames is reached. Motion and sensory data are untouched.
    """
    if not 0 < fraction <= 1:
        raise ContractError("fraction must lie in (0, 1]")
    if fraction == 1:
        return [replace(t, labels=t.labels.copy(), label_mask=t.label_mask.copy()) for t in tracks]
    segments = []
    for ti, t in enumerate(tracks):
        for run in frames_to_bouts(t.label_mask):
            for s in range(run.start, run.end, segment_len):
                segments.append((ti, s, min(s + segment_len, run.end)))
    total = sum(e - s for _, s, e in segments)
    target = fraction * total
    order = np.random.default_rng(seed).permutation(len(segments))
    masks = [np.zeros(len(t), bool) for t in tracks]
    kept = 0
    for k in order:
        if kept >= target:
            break
        ti, s, e = segments[k]
        masks[ti][s:e] = True
        kept += e - s
    return [replace(t, labels=t.labels & m[:, None], label_mask=m) for t, m in zip(tracks, masks)]


# --- batching --------------------------------------------------------------

@dataclass
class Batch:
    """One training step: ``window`` frames for each of ``batch_size`` slots.

    ``reset[b]`` is True when slot ``b`` starts a new piece (zero initial
    state); otherwise its state carries over from the previous batch.
    ``target_mask`` flags frames whose next frame exists, so a motion target
    is defined; ``valid`` flags real (non-padding) frames.
    """

    x: np.ndarray
    v: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray
    target_mask: np.ndarray
    valid: np.ndarray
    reset: np.ndarray
    source: list

    @property
    def n_frames(self):
        return int(self.valid.sum())


def plan_pieces(tracks, chunk_frames=None):
    """Split tracks into contiguous ``(track, start, end)`` pieces."""
    pieces = []
    for ti, t in enumerate(tracks):
        T = len(t)
        if T < 2:
            log.warning("track %s has %d frame(s); skipped", t.agent_id, T)
            continue
        step = T if not chunk_frames else int(chunk_frames)
        for s in range(0, T, step):
            pieces.append((ti, s, min(s + step, T)))
    return pieces


def auto_chunk_frames(tracks, window, batch_size):
    """Piece length that spreads few long tracks over all batch slots.

    Returns None when there are at least as many tracks as slots.
    """
    usable = [len(t) for t in tracks if len(t) >= 2]
    if len(usable) >= batch_size or not usable:
        return None
    per_slot = math.ceil(sum(usable) / batch_size)
    return max(window, math.ceil(per_slot / window) * window)


def make_batches(tracks, targets=None, window=50, batch_size=20, seed=0, chunk_frames=None):
    """Stream track pieces through ``batch_size`` slots in ``window``-frame steps.

    ``targets`` is an optional list of per-track ``(T, D)`` bin-index arrays;
    the target stored at frame ``i`` is the encoded motion of frame ``i + 1``.
    Pieces are shuffled with ``seed`` and assigned to the least-loaded slot.
    """
    if window < 1 or batch_size < 1:
        raise ContractError("window and batch_size must be positive")
    pieces = plan_pieces(tracks, chunk_frames)
    order = np.random.default_rng(seed).permutation(len(pieces))
    slots = [[] for _ in range(batch_size)]
    load = np.zeros(batch_size, dtype=np.int64)
    for k in order:
        ti, s, e = pieces[k]
        b = int(np.argmin(load))
        slots[b].append((ti, s, e))
        load[b] += math.ceil((e - s) / window)
    n_batches = int(load.max()) if pieces else 0
    if not tracks:
        return []
    Dx = tracks[0].x.shape[1]
    Dv = tracks[0].v.shape[1]
    N = tracks[0].labels.shape[1]
    # per-slot schedule of (track, frame_start, frame_end, is_first_window)
    schedules = []
    for pcs in slots:
        sched = []
        for ti, s, e in pcs:
            for w0 in range(s, e, window):
                sched.append((ti, w0, min(w0 + window, e), w0 == s))
        schedules.append(sched)
    batches = []
    for j in range(n_batches):
        X = np.zeros((window, batch_size, Dx))
        V = np.zeros((window, batch_size, Dv))
        Y = np.zeros((window, batch_size, N))
        tgt = np.zeros((window, batch_size, Dx), dtype=np.int64)
        lmask = np.zeros((window, batch_size), bool)
        tmask = np.zeros((window, batch_size), bool)
        valid = np.zeros((window, batch_size), bool)
        reset = np.ones(batch_size, bool)
        source = []
        for b, sched in enumerate(schedules):
            if j >= len(sched):
                source.append(None)
                continue
            ti, s, e, first = sched[j]
            t = tracks[ti]
            n = e - s
            X[:n, b] = t.x[s:e]
            V[:n, b] = t.v[s:e]
            Y[:n, b] = t.labels[s:e]
            lmask[:n, b] = t.label_mask[s:e]
            valid[:n, b] = True
            has_next = np.arange(s, e) + 1 < len(t)
            tmask[:n, b] = has_next
            if targets is not None:
                nxt = np.minimum(np.arange(s, e) + 1, len(t) - 1)
                tgt[:n, b] = targets[ti][nxt]
            reset[b] = first
            source.append((ti, s, e))
        batches.append(Batch(X, V, tgt, Y, lmask, tmask, valid, reset, source))
    return batches
