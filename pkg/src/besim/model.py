"""Dual-stack recurrent behavior network.

A discriminative GRU stack reads motion and sensory input and carries action
labels in the first units of its top state. A generative stack runs top-down,
each level receiving the level above (already advanced one step) together with
the discriminative state of its own level from the previous frame, and the
bottom generative state is projected to per-dimension bin logits for the next
frame's motion.

Three variants share the code path:

``besnet``
    both stacks with the diagonal discriminative-to-generative links.
``stacked_rnn``
    the same cells chained as one 2L-level stack (no diagonal links).
``benet``
    discriminative stack only; no motion output.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractError, DataError, TrainingError
from .gru import GruCell, gru_sequence_backward, gru_sequence_forward
from .numerics import (PROB_FLOOR, AdamSettings, Parameter, adam_update, clip_global_norm,
                       init_uniform)

VARIANTS = ("besnet", "benet", "stacked_rnn")
LABEL_MODES = ("multitask", "multiclass")
Y_CLAMP = 1e-6


@dataclass
class ModelConfig:
    motion_dim: int
    sensory_dim: int
    bin_counts: tuple
    units: tuple = (100, 100)
    n_actions: int = 0
    lam: float = 0.5
    variant: str = "besnet"
    label_mode: str = "multitask"

    def __post_init__(self):
        self.units = tuple(int(u) for u in self.units)
        self.bin_counts = tuple(int(n) for n in self.bin_counts)
        self.variant = self.variant.lower()
        self.label_mode = self.label_mode.lower()
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"unknown label_mode {self.label_mode!r}; expected one of {LABEL_MODES}")
        if not self.units or min(self.units) < 1:
            raise ConfigError("need at least one level with a positive unit count")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.n_actions > self.units[-1]:
            raise ConfigError(f"{self.n_actions} actions do not fit in {self.units[-1]} top units")
        if self.variant != "benet":
            if len(self.bin_counts) != self.motion_dim:
                raise ConfigError(f"need one bin count per motion dim ({self.motion_dim}), got {len(self.bin_counts)}")
            if min(self.bin_counts) < 2:
                raise ConfigError("every motion dimension needs at least 2 bins")

    @property
    def n_levels(self):
        return len(self.units)

    @property
    def has_motion_output(self):
        return self.variant != "benet"

    def to_dict(self):
        return {
            "motion_dim": self.motion_dim,
            "sensory_dim": self.sensory_dim,
            "bin_counts": ",".join(map(str, self.bin_counts)),
            "units": ",".join(map(str, self.units)),
            "n_actions": self.n_actions,
            "lam": repr(self.lam),
            "variant": self.variant,
            "label_mode": self.label_mode,
        }

    @classmethod
    def from_dict(cls, d):
        ints = lambda s: tuple(int(v) for v in str(s).split(",") if v != "")  # noqa: E731
        return cls(
            motion_dim=int(d["motion_dim"]),
            sensory_dim=int(d["sensory_dim"]),
            bin_counts=ints(d["bin_counts"]),
            units=ints(d["units"]),
            n_actions=int(d.get("n_actions", 0)),
            lam=float(d.get("lam", 0.5)),
            variant=d.get("variant", "besnet"),
            label_mode=d.get("label_mode", "multitask"),
        )


@dataclass
class ModelState:
    """Per-level discriminative states ``h`` and generative states ``g``.

    Arrays are ``(B, units)``; ``g`` is empty for the ``benet`` variant.
    """

    h: list
    g: list

    def copy(self):
        return ModelState([a.copy() for a in self.h], [a.copy() for a in self.g])

    def reset_rows(self, rows):
        for a in self.h + self.g:
            a[rows] = 0.0


@dataclass
class StepOutput:
    y_hat: np.ndarray
    x_hat: list
    state: ModelState


@dataclass
class LossReport:
    C_y: float
    C_x: float
    C: float
    labeled_frames: int
    motion_frames: int = 0

    @classmethod
    def mean(cls, reports):
        n = max(len(reports), 1)
        return cls(sum(r.C_y for r in reports) / n, sum(r.C_x for r in reports) / n,
                   sum(r.C for r in reports) / n, sum(r.labeled_frames for r in reports),
                   sum(r.motion_frames for r in reports))


@dataclass
class ForwardResult:
    H: list                      # per level (T, B, units) discriminative states
    G: list                      # per level (T, B, units) generative states
    probs: list                  # per motion dim (T, B, n_d)
    y_hat: np.ndarray            # (T, B, N)
    state: ModelState
    caches: dict = field(default_factory=dict, repr=False)


class BehaviorNetwork:
    """Parameters and the computation graph of one model."""

    def __init__(self, config, rng=None, dtype=np.float64):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(0) if rng is None else rng
        cfg = config
        U = cfg.units
        L = cfg.n_levels
        self.disc = []
        for l in range(L):
            n_in = cfg.motion_dim + cfg.sensory_dim if l == 0 else U[l - 1]
            self.disc.append(GruCell(n_in, U[l], rng, name=f"disc{l + 1}", dtype=dtype))
        self.gen = []
        self.out_W = self.out_b = None
        if cfg.has_motion_output:
            for l in range(L):
                if l == L - 1:
                    n_in = U[l]
                elif cfg.variant == "besnet":
                    n_in = U[l + 1] + U[l]
                else:
                    n_in = U[l + 1]
                self.gen.append(GruCell(n_in, U[l], rng, name=f"gen{l + 1}", dtype=dtype))
            S = sum(cfg.bin_counts)
            self.out_W = Parameter("out.W", init_uniform(rng, S, U[0], U[0], dtype))
            self.out_b = Parameter("out.b", np.zeros((1, S), dtype=dtype))
        offsets = np.cumsum((0,) + cfg.bin_counts)
        self._blocks = [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]

    @property
    def params(self):
        ps = [p for c in self.disc for p in c.params]
        ps += [p for c in self.gen for p in c.params]
        if self.out_W is not None:
            ps += [self.out_W, self.out_b]
        return ps

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self):
        return {p.name: p.value for p in self.params}

    def load_state_dict(self, arrays):
        for p in self.params:
            if p.name not in arrays:
                raise DataError(f"checkpoint lacks parameter {p.name}")
            if arrays[p.name].shape != p.value.shape:
                raise DataError(f"parameter {p.name}: shape {arrays[p.name].shape} != {p.value.shape}")
            p.value[...] = arrays[p.name]

    def initial_state(self, batch=1):
        h = [np.zeros((batch, u), dtype=self.dtype) for u in self.config.units]
        g = [np.zeros((batch, u), dtype=self.dtype) for u in self.config.units] if self.gen else []
        return ModelState(h, g)

    # -- forward ---------------------------------------------------------

    def forward(self, X, V, state=None, overrides=None, keep_cache=True):
        """Run a window. ``X`` is ``(T, B, Dx)``, ``V`` is ``(T, B, Dv)``.

        ``probs[d][t]`` is the predicted distribution of motion dimension
        ``d`` at frame ``t + 1``. ``overrides`` maps discriminative level
        index (0-based) to ``(unit_indices, values)`` forced after every step.
        ``keep_cache=False`` skips the BPTT caches (inference only).
        """
        cfg = self.config
        X = np.asarray(X, dtype=self.dtype)
        V = np.asarray(V, dtype=self.dtype)
        if X.ndim != 3 or X.shape[2] != cfg.motion_dim:
            raise ContractError(f"motion input must be (T, B, {cfg.motion_dim}), got {X.shape}")
        if V.shape[:2] != X.shape[:2] or V.shape[2] != cfg.sensory_dim:
            raise ContractError(f"sensory input must be (T, B, {cfg.sensory_dim}), got {V.shape}")
        T, B, _ = X.shape
        state = self.initial_state(B) if state is None else state
        overrides = overrides or {}
        L = cfg.n_levels
        caches = {}
        H = []
        inp = np.concatenate([X, V], axis=2)
        for l in range(L):
            clamp = overrides.get(l)
            out, caches[("disc", l)] = gru_sequence_forward(self.disc[l], inp, state.h[l], clamp=clamp,
                                                            keep_cache=keep_cache)
            H.append(out)
            inp = out
        G = [None] * L
        probs = []
        if self.gen:
            G[L - 1], caches[("gen", L - 1)] = gru_sequence_forward(self.gen[L - 1], H[L - 1], state.g[L - 1],
                                                                    keep_cache=keep_cache)
            for l in range(L - 2, -1, -1):
                gin = np.concatenate([G[l + 1], H[l]], axis=2) if cfg.variant == "besnet" else G[l + 1]
                G[l], caches[("gen", l)] = gru_sequence_forward(self.gen[l], gin, state.g[l], keep_cache=keep_cache)
            logits = G[0] @ self.out_W.value.T + self.out_b.value[0]
            for blk in self._blocks:
                a = logits[..., blk]
                e = np.exp(a - a.max(axis=-1, keepdims=True))
                probs.append(e / e.sum(axis=-1, keepdims=True))
        y_hat = (H[L - 1][..., :cfg.n_actions] + 1.0) / 2.0
        new_state = ModelState([h[-1].copy() for h in H], [g[-1].copy() for g in G] if self.gen else [])
        return ForwardResult(H, G, probs, y_hat, new_state, caches if keep_cache else {})

    def step(self, x, v, state=None, overrides=None):
        """Advance one frame for a single agent ``(Dx,)`` or a batch ``(B, Dx)``."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if x.shape[-1] != self.config.motion_dim or x.ndim > 2:
            raise ContractError(f"motion input must have {self.config.motion_dim} entries per row, got {x.shape}")
        X = x.reshape(1, -1, self.config.motion_dim)
        V = np.asarray(v, dtype=self.dtype).reshape(1, X.shape[1], self.config.sensory_dim)
        res = self.forward(X, V, state, overrides, keep_cache=False)
        if single:
            return StepOutput(res.y_hat[0, 0], [p[0, 0] for p in res.probs], res.state)
        return StepOutput(res.y_hat[0], [p[0] for p in res.probs], res.state)

    # -- loss ------------------------------------------------------------

    def loss(self, res, targets, labels, label_mask, target_mask=None, scale=1.0):
        """Costs of a forward result and their gradients.

        ``targets`` ``(T, B, Dx)`` holds bin indices of the NEXT frame's
        motion; ``target_mask`` ``(T, B)`` selects frames with a defined
        target. ``label_mask`` ``(T, B)`` selects annotated frames. Returns
        ``(LossReport, grads)`` where grads are scaled by ``scale`` and feed
        :meth:`backward`.
        """
        cfg = self.config
        T, B = res.y_hat.shape[:2]
        label_mask = np.asarray(label_mask, dtype=bool)
        target_mask = np.ones((T, B), bool) if target_mask is None else np.asarray(target_mask, bool)
        grads = {}
        C_x = 0.0
        n_motion = 0
        if self.gen:
            targets = np.asarray(targets)
            w = target_mask.astype(np.float64)
            n_motion = int(target_mask.sum())
            dlogits = np.zeros(res.G[0].shape[:2] + (sum(cfg.bin_counts),), dtype=self.dtype)
            for d, (p, blk) in enumerate(zip(res.probs, self._blocks)):
                k = targets[..., d]
                pt = np.take_along_axis(p, k[..., None], axis=2)[..., 0]
                C_x -= float(np.sum(np.log(np.maximum(pt, PROB_FLOOR)) * w))
                dp = p.copy()
                np.put_along_axis(dp, k[..., None], np.take_along_axis(dp, k[..., None], axis=2) - 1.0, axis=2)
                dlogits[..., blk] = dp * w[..., None]
            grads["logits"] = dlogits * ((1.0 - cfg.lam) * scale)
        C_y = 0.0
        dy = np.zeros_like(res.y_hat)
        N = cfg.n_actions
        if N:
            if labels is None:
                if label_mask.any():
                    raise DataError("label mask selects frames but no labels were given")
                labels = np.zeros((T, B, N))
            labels = np.asarray(labels, dtype=np.float64)
            if labels.shape[:2] != (T, B) or labels.shape[2] != N:
                raise DataError(f"labels must be (T, B, {N}), got {labels.shape}")
            m = label_mask.astype(np.float64)
            yc = np.clip(res.y_hat, Y_CLAMP, 1.0 - Y_CLAMP)
            inside = (res.y_hat > Y_CLAMP) & (res.y_hat < 1.0 - Y_CLAMP)
            if cfg.label_mode == "multitask":
                ll = labels * np.log(yc) + (1.0 - labels) * np.log(1.0 - yc)
                C_y = -float(np.sum(ll * m[..., None]))
                dyc = (yc - labels) / (yc * (1.0 - yc))
                dy = dyc * inside * m[..., None]
            else:
                has = labels.any(axis=2) & label_mask
                logit = np.log(yc) - np.log(1.0 - yc)
                logit -= logit.max(axis=2, keepdims=True)
                q = np.exp(logit)
                q /= q.sum(axis=2, keepdims=True)
                k = labels.argmax(axis=2)
                qt = np.take_along_axis(q, k[..., None], axis=2)[..., 0]
                C_y = -float(np.sum(np.log(np.maximum(qt, PROB_FLOOR)) * has))
                dlogit = q.copy()
                np.put_along_axis(dlogit, k[..., None], qt[..., None] - 1.0, axis=2)
                dy = dlogit / (yc * (1.0 - yc)) * inside * has[..., None]
            label_frames = int(label_mask.sum())
        else:
            label_frames = 0
        # y_hat = (h + 1) / 2
        grads["h_top"] = dy * (0.5 * cfg.lam * scale)
        C = cfg.lam * C_y + (1.0 - cfg.lam) * C_x
        return LossReport(C_y, C_x, C, label_frames, n_motion), grads

    # -- backward --------------------------------------------------------

    def backward(self, res, grads):
        """Accumulate parameter gradients for a cached forward result (full BPTT
        over the window; the window start is the truncation point)."""
        cfg = self.config
        L = cfg.n_levels
        if not res.caches:
            raise ContractError("forward result carries no caches")
        dH = [np.zeros_like(h) for h in res.H]
        if self.gen:
            dlog = grads["logits"]
            T, B, S = dlog.shape
            G0 = res.G[0]
            self.out_W.grad += dlog.reshape(T * B, S).T @ G0.reshape(T * B, -1)
            self.out_b.grad[0] += dlog.reshape(T * B, S).sum(axis=0)
            dG = [None] * L
            dG[0] = dlog @ self.out_W.value
            for l in range(L - 1):
                dIn, _ = gru_sequence_backward(self.gen[l], res.caches[("gen", l)], dG[l])
                up = cfg.units[l + 1]
                dG[l + 1] = dIn[..., :up].copy()
                if cfg.variant == "besnet":
                    dH[l] += dIn[..., up:]
            dIn, _ = gru_sequence_backward(self.gen[L - 1], res.caches[("gen", L - 1)], dG[L - 1])
            dH[L - 1] += dIn
        if cfg.n_actions:
            dH[L - 1][..., :cfg.n_actions] += grads["h_top"]
        for l in range(L - 1, -1, -1):
            dIn, _ = gru_sequence_backward(self.disc[l], res.caches[("disc", l)], dH[l])
            if l > 0:
                dH[l - 1] += dIn


# -- module-level operations --------------------------------------------------

def forward_step(network, x, v, prev=None, overrides=None):
    return network.step(x, v, prev, overrides)


def compute_loss(network, res, targets, labels, mask, target_mask=None):
    report, _ = network.loss(res, targets, labels, mask, target_mask)
    return report


def backward_bptt(network, res, grads):
    network.backward(res, grads)


def _carry_state(network, prev, batch):
    B = batch.x.shape[1]
    if prev is None:
        return network.initial_state(B)
    state = prev.copy()
    state.reset_rows(batch.reset)
    return state


def train_step(network, batch, state, settings, normalize=True):
    """Forward, loss, BPTT, clip and Adam on one batch; returns ``(report, state)``."""
    res = network.forward(batch.x, batch.v, state)
    scale = 1.0 / max(batch.n_frames, 1) if normalize else 1.0
    lmask = batch.label_mask & batch.valid
    tmask = batch.target_mask & batch.valid
    report, grads = network.loss(res, batch.targets, batch.labels, lmask, tmask, scale=scale)
    if not np.isfinite(report.C):
        raise TrainingError("non-finite loss")
    network.backward(res, grads)
    clip_global_norm(network.params, settings.clip_norm)
    for p in network.params:
        adam_update(p, settings.lr, settings.beta1, settings.beta2, settings.eps)
    return report, res.state


def train_epoch(network, batches, settings=AdamSettings(), deadline=None, callback=None):
    """One pass over ``batches`` with state carried between consecutive windows.

    Returns the mean :class:`LossReport` over the batches processed. Stops
    early (between batches) once ``time.monotonic()`` passes ``deadline``.
    """
    reports = []
    state = None
    for j, batch in enumerate(batches):
        if deadline is not None and time.monotonic() > deadline:
            break
        state = _carry_state(network, state, batch)
        try:
            report, state = train_step(network, batch, state, settings)
        except TrainingError as exc:
            raise TrainingError(f"batch {j}: {exc}") from None
        reports.append(report)
        if callback is not None:
            callback(j, report)
    return LossReport.mean(reports)
