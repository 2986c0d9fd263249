"""scikit-learn style front end for the behavior network.

``BehaviorModel`` consumes lists of :class:`~besim.data.AgentTrack` (or
:class:`~besim.data.TrialData`, whose agents are flattened) and exposes
``fit`` / ``predict`` / ``predict_proba`` / ``transform`` / ``score`` plus
``predict_motion`` for the per-frame motion distributions.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .codec import BinSpec, MotionBinner, encode_motion
from .data import (AgentTrack, TrialData, auto_chunk_frames, frames_to_bouts, make_batches,
                   read_config, write_config)
from .exceptions import ConfigError, ContractError, DataError
from .metrics import f1_scores, motion_loglik, smooth_scores
from .model import AdamSettings, BehaviorNetwork, LossReport, ModelConfig, train_epoch
from .numerics import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


def as_tracks(data):
    """Flatten trials / a single track into a list of tracks."""
    if isinstance(data, (AgentTrack, TrialData)):
        data = [data]
    tracks = []
    for item in data:
        if isinstance(item, TrialData):
            tracks.extend(item.agents)
        elif isinstance(item, AgentTrack):
            tracks.append(item)
        else:
            raise ContractError(f"expected AgentTrack or TrialData, got {type(item).__name__}")
    return tracks


class BehaviorModel(ClassifierMixin, BaseEstimator):
    """Joint action classifier and next-frame motion predictor.

    Parameters
    ----------
    variant : {"besnet", "benet", "stacked_rnn"}
    n_levels, n_units : int
        Depth of each stack and units per level.
    n_bins : int or list of int
        Motion bins per dimension (one count for all, or one per dimension).
    lam : float
        Weight of the classification cost; ``1 - lam`` weights motion.
    label_mode : {"multitask", "multiclass"}
    window, batch_size : int
        Unrolled sequence length and number of parallel streams.
    n_epochs : int
        Maximum passes over the data.
    max_time : float or None
        Wall-clock budget in seconds for ``fit``; checked between batches.
    learning_rate, clip_norm : float
        Adam step size and global gradient-norm cap.
    random_state : int
        Seeds weight init and batch order.
    """

    def __init__(self, variant="besnet", n_levels=2, n_units=100, n_bins=51, lam=0.5,
                 label_mode="multitask", window=50, batch_size=20, n_epochs=10, max_time=None,
                 learning_rate=1e-3, clip_norm=5.0, random_state=0, verbose=False):
        self.variant = variant
        self.n_levels = n_levels
        self.n_units = n_units
        self.n_bins = n_bins
        self.lam = lam
        self.label_mode = label_mode
        self.window = window
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.max_time = max_time
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.verbose = verbose

    # -- fitting -----------------------------------------------------------

    def _validate(self, tracks):
        if not tracks:
            raise ContractError("no tracks given")
        Dx, Dv, N = tracks[0].x.shape[1], tracks[0].v.shape[1], tracks[0].n_classes
        for t in tracks:
            if t.x.shape[1] != Dx or t.v.shape[1] != Dv or t.n_classes != N:
                raise ContractError("all tracks must share motion, sensory and label dimensions")
            if not (np.all(np.isfinite(t.x)) and np.all(np.isfinite(t.v))):
                raise DataError(f"track {t.agent_id} contains non-finite values")
        return Dx, Dv, N

    def fit(self, X, y=None, class_names=None, bin_spec=None):
        """Train on tracks; labels come from each track's ``labels`` / ``label_mask``.

        ``y`` is ignored (present for API compatibility). ``bin_spec`` fixes
        the motion bins instead of fitting them.
        """
        tracks = as_tracks(X)
        Dx, Dv, N = self._validate(tracks)
        if class_names is None and isinstance(X, (list, tuple)) and X and isinstance(X[0], TrialData):
            class_names = X[0].class_names
        self.classes_ = list(class_names) if class_names else [f"class_{k}" for k in range(N)]
        if len(self.classes_) != N:
            raise ContractError(f"{len(self.classes_)} class names for {N} label columns")
        if bin_spec is None:
            self.binner_ = MotionBinner(self.n_bins).fit([t.x for t in tracks])
        else:
            self.binner_ = MotionBinner(self.n_bins)
            self.binner_.spec_ = bin_spec
            self.binner_.n_features_in_ = bin_spec.n_dims
        self.config_ = ModelConfig(
            motion_dim=Dx, sensory_dim=Dv, bin_counts=tuple(self.binner_.spec_.bin_counts),
            units=(int(self.n_units),) * int(self.n_levels), n_actions=N, lam=float(self.lam),
            variant=self.variant, label_mode=self.label_mode)
        rng = np.random.default_rng(self.random_state)
        self.network_ = BehaviorNetwork(self.config_, rng)
        self.bout_durations_ = _mean_bout_durations(tracks, N)
        self.n_features_in_ = Dx + Dv

        targets = [encode_motion(t.x, self.binner_.spec_) for t in tracks]
        chunk = auto_chunk_frames(tracks, self.window, self.batch_size)
        settings = AdamSettings(self.learning_rate, clip_norm=self.clip_norm)
        deadline = None if self.max_time is None else time.monotonic() + float(self.max_time)
        self.loss_curve_ = []
        for epoch in range(int(self.n_epochs)):
            if deadline is not None and time.monotonic() > deadline:
                break
            batches = make_batches(tracks, targets, self.window, self.batch_size,
                                   seed=int(self.random_state) * 1000 + epoch, chunk_frames=chunk)
            report = train_epoch(self.network_, batches, settings, deadline=deadline)
            self.loss_curve_.append(report)
            if self.verbose:
                log.info("epoch %d  C=%.4f  C_x=%.4f  C_y=%.4f", epoch, report.C, report.C_x, report.C_y)
        self.n_epochs_ = len(self.loss_curve_)
        return self

    # -- inference ---------------------------------------------------------

    def _run(self, tracks, overrides=None):
        """Forward every track from a zero state; yields ForwardResult per group."""
        check_is_fitted(self, "network_")
        out = [None] * len(tracks)
        # batch tracks of equal length together
        by_len = {}
        for i, t in enumerate(tracks):
            by_len.setdefault(len(t), []).append(i)
        for T, idx in by_len.items():
            X = np.stack([tracks[i].x for i in idx], axis=1)
            V = np.stack([tracks[i].v for i in idx], axis=1)
            res = self.network_.forward(X, V, overrides=overrides, keep_cache=False)
            for b, i in enumerate(idx):
                out[i] = (res, b)
        return out

    def predict_proba(self, X):
        """Per-track ``(T, N)`` action scores in [0, 1] (unsmoothed)."""
        tracks = as_tracks(X)
        return [res.y_hat[:, b].copy() for res, b in self._run(tracks)]

    def decision_scores(self, X, smooth=True):
        scores = self.predict_proba(X)
        if smooth:
            scores = [smooth_scores(s, self.bout_durations_) if s.shape[1] else s for s in scores]
        return scores

    def predict(self, X, smooth=True):
        """Per-track ``(T, N)`` boolean detections.

        Scores are smoothed with a flat filter sized from each class's mean
        training bout duration, then thresholded at 0.5 (multitask) or
        reduced to the arg-max class (multiclass).
        """
        out = []
        for s in self.decision_scores(X, smooth):
            if self.config_.label_mode == "multiclass" and s.shape[1]:
                p = np.zeros_like(s, dtype=bool)
                p[np.arange(len(s)), s.argmax(axis=1)] = True
                out.append(p)
            else:
                out.append(s >= 0.5)
        return out

    def predict_motion(self, X):
        """Per-track list of ``(T, n_d)`` arrays; row ``i`` predicts frame ``i + 1``."""
        if not self.config_.has_motion_output:
            raise ContractError("the benet variant has no motion output")
        return [[p[:, b].copy() for p in res.probs] for res, b in self._run(as_tracks(X))]

    def transform(self, X):
        """Hidden states per track: ``(T, sum(units) * 2)`` ordered h1..hL, g1..gL."""
        out = []
        for res, b in self._run(as_tracks(X)):
            parts = [h[:, b] for h in res.H] + [g[:, b] for g in res.G if g is not None]
            out.append(np.concatenate(parts, axis=1))
        return out

    def motion_loglik(self, X):
        """Total motion log-likelihood and number of scored frames."""
        tracks = as_tracks(X)
        total, frames = 0.0, 0
        for t, probs in zip(tracks, self.predict_motion(tracks)):
            if len(t) < 2:
                continue
            bins = encode_motion(t.x, self.binner_.spec_)
            total += motion_loglik([p[:-1] for p in probs], bins[1:])
            frames += len(t) - 1
        return total, frames

    def score(self, X, y=None):
        """Mean per-frame motion log-likelihood (class-mean F1-frame for benet)."""
        if not self.config_.has_motion_output:
            tracks = as_tracks(X)
            rep = f1_scores(self.predict(tracks), [t.labels for t in tracks], self.classes_,
                            masks=[t.label_mask for t in tracks])
            return rep.mean.f1_frame
        total, frames = self.motion_loglik(X)
        return total / max(frames, 1)

    def evaluate(self, X, smooth=True):
        """F1 report against the tracks' own labels (annotated frames only)."""
        tracks = as_tracks(X)
        return f1_scores(self.predict(tracks, smooth), [t.labels for t in tracks], self.classes_,
                         masks=[t.label_mask for t in tracks])

    # -- persistence -------------------------------------------------------

    def save(self, directory):
        """Write ``model.ckpt``, ``model.cfg`` and ``bins.csv`` into ``directory``."""
        check_is_fitted(self, "network_")
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_checkpoint(d / "model.ckpt", self.network_.state_dict())
        cfg = dict(self.config_.to_dict())
        cfg["classes"] = ",".join(self.classes_)
        cfg["bout_durations"] = ",".join(repr(float(v)) for v in self.bout_durations_)
        for key, value in self.get_params().items():
            cfg[f"param.{key}"] = value
        write_config(d / "model.cfg", cfg)
        self.binner_.spec_.to_csv(d / "bins.csv")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        cfg = read_config(d / "model.cfg")
        params = {k[len("param."):]: v for k, v in cfg.items() if k.startswith("param.")}
        model = cls(**_parse_params(params))
        model.config_ = ModelConfig.from_dict(cfg)
        model.classes_ = [c for c in cfg.get("classes", "").split(",") if c]
        durs = [float(v) for v in cfg.get("bout_durations", "").split(",") if v]
        model.bout_durations_ = np.array(durs)
        model.network_ = BehaviorNetwork(model.config_)
        model.network_.load_state_dict(load_checkpoint(d / "model.ckpt"))
        model.binner_ = MotionBinner(model.n_bins)
        model.binner_.spec_ = BinSpec.from_csv(d / "bins.csv")
        model.binner_.n_features_in_ = model.binner_.spec_.n_dims
        model.n_features_in_ = model.config_.motion_dim + model.config_.sensory_dim
        return model


def _mean_bout_durations(tracks, N):
    total = np.zeros(N)
    count = np.zeros(N)
    for t in tracks:
        for run in frames_to_bouts(t.label_mask):
            for b in frames_to_bouts(t.labels[run.start:run.end]):
                total[b.cls] += len(b)
                count[b.cls] += 1
    # classes never seen labeled get no smoothing
    return np.where(count > 0, total / np.maximum(count, 1), 1.0)


_PARAM_TYPES = {"n_levels": int, "n_units": int, "lam": float, "window": int, "batch_size": int,
                "n_epochs": int, "learning_rate": float, "clip_norm": float, "random_state": int}


def _parse_params(raw):
    out = {}
    for key, value in raw.items():
        if key in _PARAM_TYPES:
            out[key] = _PARAM_TYPES[key](value)
        elif key == "n_bins":
            parts = [int(v) for v in value.strip("[]()").split(",") if v.strip()]
            out[key] = parts[0] if len(parts) == 1 else parts
        elif key == "max_time":
            out[key] = None if value in ("None", "") else float(value)
        elif key == "verbose":
            out[key] = value == "True"
        elif key in ("variant", "label_mode"):
            out[key] = value
        else:
            raise ConfigError(f"unknown saved parameter {key!r}")
    return out
