"""Dense numeric primitives: activations, losses, Adam, clipping, gradient checks
and the binary checkpoint container.

Arrays are plain ``numpy.ndarray`` objects. Reductions that feed losses and
norms are carried out in float64 regardless of storage dtype.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import ContractError, DataError, TrainingError

CKPT_MAGIC = "BESIM-CKPT v1"
PROB_FLOOR = 1e-12


def sigmoid(a):
    return expit(a)


def softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_cross_entropy(logits, target):
    """Cross-entropy of one categorical prediction against a class index.

    Returns ``(loss, dlogits)`` where ``dlogits`` is the gradient of the loss
    with respect to the logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ContractError("logits must be a non-empty vector")
    if not 0 <= int(target) < logits.size:
        raise IndexError(f"target {target} out of range for {logits.size} classes")
    p = softmax(logits)
    loss = -np.log(max(p[target], PROB_FLOOR))
    dlogits = p.copy()
    dlogits[target] -= 1.0
    return float(loss), dlogits


@dataclass
class Parameter:
    """A trainable array with its gradient and Adam moment buffers."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    adam_m: np.ndarray = field(default=None, repr=False)
    adam_v: np.ndarray = field(default=None, repr=False)
    step_count: int = 0

    def __post_init__(self):
        if self.value.ndim == 1:
            self.value = self.value.reshape(1, -1)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.adam_m.shape == self.adam_v.shape):
            raise ContractError(f"parameter {self.name}: buffer shapes differ")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def init_uniform(rng, rows, cols, fan_in, dtype=np.float64):
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=(rows, cols)).astype(dtype)


@dataclass(frozen=True)
class AdamSettings:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0


def adam_update(p, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step on ``p`` in place; the gradient is zeroed."""
    if not np.all(np.isfinite(p.grad)):
        raise TrainingError(f"non-finite gradient in parameter {p.name}")
    p.step_count += 1
    g = p.grad
    p.adam_m *= beta1
    p.adam_m += (1.0 - beta1) * g
    p.adam_v *= beta2
    p.adam_v += (1.0 - beta2) * g * g
    m_hat = p.adam_m / (1.0 - beta1 ** p.step_count)
    v_hat = p.adam_v / (1.0 - beta2 ** p.step_count)
    p.value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.value.dtype)
    p.zero_grad()
    return p


def global_grad_norm(params):
    return float(np.sqrt(sum(np.sum(np.square(p.grad, dtype=np.float64)) for p in params)))


def clip_global_norm(params, max_norm):
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the scale factor that was applied (1.0 when no clipping happened).
    """
    if max_norm <= 0:
        raise ContractError("max_norm must be positive")
    norm = global_grad_norm(params)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for p in params:
        p.grad *= scale
    return scale


def finite_diff_check(loss_fn, params, h=1e-5, max_entries=None, rng=None):
    """Compare analytic gradients against central differences.

    ``p.grad`` must already hold the analytic gradient of ``loss_fn`` at the
    current parameter values; ``loss_fn()`` is re-evaluated after perturbing
    entries of ``p.value`` in place. At most ``max_entries`` entries per
    parameter are probed (all of them when None).

    Returns the maximum relative error ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    base = loss_fn()
    if loss_fn() != base:
        raise ContractError("loss_fn is not deterministic")
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        grad = p.grad.reshape(-1).astype(np.float64)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            num = (up - down) / (2.0 * h)
            a = grad[k]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# --- checkpoint container -------------------------------------------------
#
# Layout (all text lines are UTF-8 terminated by "\n"):
#   BESIM-CKPT v1
#   <name> <rows> <cols>
#   <rows*cols little-endian float32 values, row-major>
#   ... repeated per array until end of file


def save_checkpoint(path, arrays):
    """Write ``{name: 2-d array}`` to ``path`` in insertion order."""
    buf = io.BytesIO()
    buf.write((CKPT_MAGIC + "\n").encode())
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ContractError(f"checkpoint array {name} must be 2-d")
        if any(c.isspace() for c in name):
            raise ContractError(f"checkpoint name {name!r} contains whitespace")
        buf.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n".encode())
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint` as float64 arrays."""
    with open(path, "rb") as fh:
        data = fh.read()
    header, sep, rest = data.partition(b"\n")
    if header.decode(errors="replace") != CKPT_MAGIC or not sep:
        raise DataError(f"{os.fspath(path)}: not a {CKPT_MAGIC} file")
    arrays = {}
    pos = 0
    while pos < len(rest):
        end = rest.index(b"\n", pos)
        fields = rest[pos:end].decode().split()
        if len(fields) != 3:
            raise DataError(f"bad array header {rest[pos:end]!r}")
        name, rows, cols = fields[0], int(fields[1]), int(fields[2])
        nbytes = rows * cols * 4
        start = end + 1
        if start + nbytes > len(rest):
            raise DataError(f"truncated array {name}")
        arr = np.frombuffer(rest[start:start + nbytes], dtype="<f4").reshape(rows, cols)
        arrays[name] = arr.astype(np.float64)
        pos = start + nbytes
    return arrays
