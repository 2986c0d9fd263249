"""Gated recurrent unit with exact forward and backward passes.

Gate layout follows Cho et al.: the reset gate multiplies the previous state
*before* the candidate projection,

    z = sigmoid(W_z [x; h] + b_z)
    r = sigmoid(W_r [x; h] + b_r)
    c = tanh(W_c [x; r*h] + b_c)
    h' = (1 - z) * h + z * c

The three weight blocks are stored stacked in one ``(3H, I + H)`` matrix
(rows z, r, c) so a whole sequence's input projection is one matmul.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError
from .numerics import Parameter, init_uniform, sigmoid


class GruCell:
    def __init__(self, input_size, hidden_size, rng=None, name="gru", dtype=np.float64):
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        self.name = name
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = self.input_size + self.hidden_size
        self.W = Parameter(f"{name}.W", init_uniform(rng, 3 * hidden_size, fan_in, fan_in, dtype))
        self.b = Parameter(f"{name}.b", np.zeros((1, 3 * hidden_size), dtype=dtype))

    @property
    def params(self):
        return [self.W, self.b]

    def _block(self, k):
        H = self.hidden_size
        return self.W.value[k * H:(k + 1) * H]

    @property
    def W_z(self):
        return self._block(0)

    @property
    def W_r(self):
        return self._block(1)

    @property
    def W_c(self):
        return self._block(2)

    @property
    def b_z(self):
        return self.b.value[0, :self.hidden_size]

    @property
    def b_r(self):
        return self.b.value[0, self.hidden_size:2 * self.hidden_size]

    @property
    def b_c(self):
        return self.b.value[0, 2 * self.hidden_size:]

    def __repr__(self):
        return f"GruCell({self.name!r}, input_size={self.input_size}, hidden_size={self.hidden_size})"


@dataclass
class GruCache:
    cell_id: int
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray


def _check(cell, x, h_prev):
    if x.shape[-1] != cell.input_size:
        raise ContractError(f"{cell.name}: input has {x.shape[-1]} features, expected {cell.input_size}")
    if h_prev.shape[-1] != cell.hidden_size:
        raise ContractError(f"{cell.name}: state has {h_prev.shape[-1]} units, expected {cell.hidden_size}")


def gru_forward(cell, x, h_prev):
    """Advance one step. ``x`` is ``(I,)`` or ``(B, I)``; returns ``(h_new, cache)``."""
    x = np.asarray(x)
    h_prev = np.asarray(h_prev)
    _check(cell, x, h_prev)
    I, H = cell.input_size, cell.hidden_size
    W, b = cell.W.value, cell.b.value[0]
    a_zr = x @ W[:2 * H, :I].T + h_prev @ W[:2 * H, I:].T + b[:2 * H]
    zr = sigmoid(a_zr)
    z, r = zr[..., :H], zr[..., H:]
    c = np.tanh(x @ W[2 * H:, :I].T + (r * h_prev) @ W[2 * H:, I:].T + b[2 * H:])
    h_new = h_prev + z * (c - h_prev)
    return h_new, GruCache(id(cell), x, h_prev, z, r, c)


def gru_backward(cell, cache, dh_new):
    """Backpropagate ``dh_new`` through one step.

    Parameter gradients are accumulated into ``cell.W.grad`` / ``cell.b.grad``;
    returns ``(dx, dh_prev)``.
    """
    if cache.cell_id != id(cell):
        raise ContractError(f"{cell.name}: cache was produced by a different cell")
    dh_new = np.asarray(dh_new)
    if dh_new.shape != cache.h_prev.shape:
        raise ContractError(f"{cell.name}: gradient shape {dh_new.shape} != state shape {cache.h_prev.shape}")
    I, H = cell.input_size, cell.hidden_size
    W = cell.W.value
    x, h, z, r, c = cache.x, cache.h_prev, cache.z, cache.r, cache.c
    x2, h2, dh2 = np.atleast_2d(x), np.atleast_2d(h), np.atleast_2d(dh_new)
    z2, r2, c2 = np.atleast_2d(z), np.atleast_2d(r), np.atleast_2d(c)

    da_c = dh2 * z2 * (1.0 - c2 * c2)
    da_z = dh2 * (c2 - h2) * z2 * (1.0 - z2)
    drh = da_c @ W[2 * H:, I:]
    da_r = drh * h2 * r2 * (1.0 - r2)
    da_zr = np.concatenate([da_z, da_r], axis=1)

    dx = da_zr @ W[:2 * H, :I] + da_c @ W[2 * H:, :I]
    dh_prev = dh2 * (1.0 - z2) + drh * r2 + da_zr @ W[:2 * H, I:]

    gW = cell.W.grad
    gW[:2 * H, :I] += da_zr.T @ x2
    gW[:2 * H, I:] += da_zr.T @ h2
    gW[2 * H:, :I] += da_c.T @ x2
    gW[2 * H:, I:] += da_c.T @ (r2 * h2)
    cell.b.grad[0] += np.concatenate([da_zr, da_c], axis=1).sum(axis=0)
    if x.ndim == 1:
        return dx[0], dh_prev[0]
    return dx, dh_prev


@dataclass
class GruSequenceCache:
    cell_id: int
    X: np.ndarray
    Hprev: np.ndarray
    Z: np.ndarray
    R: np.ndarray
    C: np.ndarray


def gru_sequence_forward(cell, X, h0, clamp=None, keep_cache=True):
    """Run the cell over ``X`` of shape ``(T, B, I)`` from state ``h0`` ``(B, H)``.

    Returns ``(states, cache)`` with ``states[t]`` the state after step ``t``.
    The input projection is done for all steps at once. ``clamp`` is an
    optional ``(unit_indices, values)`` pair written into the state after
    every step; clamped runs are for inference only. With
    ``keep_cache=False`` only the states are kept and the returned cache is
    None.
    """
    _check(cell, X, h0)
    T, B, _ = X.shape
    I, H = cell.input_size, cell.hidden_size
    W, b = cell.W.value, cell.b.value[0]
    P = (X.reshape(T * B, I) @ W[:, :I].T + b).reshape(T, B, 3 * H)
    Wh_zr = W[:2 * H, I:].T
    Wh_c = W[2 * H:, I:].T
    out = np.empty((T, B, H), dtype=P.dtype)
    if keep_cache:
        Hprev = np.empty_like(out)
        Z = np.empty_like(out)
        R = np.empty_like(out)
        C = np.empty_like(out)
    h = h0
    for t in range(T):
        zr = sigmoid(P[t, :, :2 * H] + h @ Wh_zr)
        z, r = zr[:, :H], zr[:, H:]
        c = np.tanh(P[t, :, 2 * H:] + (r * h) @ Wh_c)
        if keep_cache:
            Hprev[t], Z[t], R[t], C[t] = h, z, r, c
        h = h + z * (c - h)
        if clamp is not None:
            h[:, clamp[0]] = clamp[1]
        out[t] = h
    if not keep_cache:
        return out, None
    return out, GruSequenceCache(id(cell), X, Hprev, Z, R, C)


def gru_sequence_backward(cell, cache, dOut):
    """Full backpropagation through time over a cached sequence.

    ``dOut[t]`` is the external gradient on the state emitted at step ``t``.
    No gradient flows into the initial state's producer beyond the returned
    ``dh0``. Returns ``(dX, dh0)``.
    """
    if cache.cell_id != id(cell):
        raise ContractError(f"{cell.name}: cache was produced by a different cell")
    T, B, H = dOut.shape
    I = cell.input_size
    W = cell.W.value
    Wh_zr = W[:2 * H, I:]
    Wh_c = W[2 * H:, I:]
    Hprev, Z, R, C = cache.Hprev, cache.Z, cache.R, cache.C
    dA = np.empty((T, B, 3 * H), dtype=dOut.dtype)
    dh = np.zeros((B, H), dtype=dOut.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh + dOut[t]
        z, r, c, h = Z[t], R[t], C[t], Hprev[t]
        da_c = dh * z * (1.0 - c * c)
        drh = da_c @ Wh_c
        da_z = dh * (c - h) * z * (1.0 - z)
        da_r = drh * h * r * (1.0 - r)
        dA[t, :, :H] = da_z
        dA[t, :, H:2 * H] = da_r
        dA[t, :, 2 * H:] = da_c
        dh = dh * (1.0 - z) + drh * r + dA[t, :, :2 * H] @ Wh_zr
    flatA = dA.reshape(T * B, 3 * H)
    gW = cell.W.grad
    gW[:, :I] += flatA.T @ cache.X.reshape(T * B, I)
    gW[:2 * H, I:] += flatA[:, :2 * H].T @ Hprev.reshape(T * B, H)
    gW[2 * H:, I:] += flatA[:, 2 * H:].T @ (R * Hprev).reshape(T * B, H)
    cell.b.grad[0] += flatA.sum(axis=0)
    dX = (flatA @ W[:, :I]).reshape(T, B, I)
    return dX, dh
