import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from besim.exceptions import ContractError
from besim.gru import GruCell, gru_backward, gru_forward, gru_sequence_backward, gru_sequence_forward
from besim.numerics import finite_diff_check


def _zero_cell(i=3, h=4):
    cell = GruCell(i, h)
    cell.W.value[...] = 0.0
    return cell


def test_zero_weights_halve_state():
    cell = _zero_cell()
    h_prev = np.array([0.4, -0.2, 0.9, 0.0])
    h, _ = gru_forward(cell, np.ones(3), h_prev)
    np.testing.assert_allclose(h, 0.5 * h_prev)


def test_zero_weights_zero_state_stays_zero():
    h, _ = gru_forward(_zero_cell(), np.ones(3), np.zeros(4))
    np.testing.assert_array_equal(h, 0.0)


def _scalar_gru(cell, x, h):
    """Element-by-element evaluation of the cell equations."""
    H, I = cell.hidden_size, cell.input_size
    Wz, Wr, Wc = cell.W_z, cell.W_r, cell.W_c
    bz, br, bc = cell.b_z, cell.b_r, cell.b_c
    sig = lambda a: 1.0 / (1.0 + math.exp(-a))
    xh = list(x) + list(h)
    z = [sig(sum(Wz[j, k] * xh[k] for k in range(I + H)) + bz[j]) for j in range(H)]
    r = [sig(sum(Wr[j, k] * xh[k] for k in range(I + H)) + br[j]) for j in range(H)]
    xrh = list(x) + [r[k] * h[k] for k in range(H)]
    c = [math.tanh(sum(Wc[j, k] * xrh[k] for k in range(I + H)) + bc[j]) for j in range(H)]
    return [(1 - z[j]) * h[j] + z[j] * c[j] for j in range(H)]


def test_random_cell_matches_scalar_evaluation():
    r = np.random.default_rng(7)
    cell = GruCell(2, 3, r)
    cell.b.value[...] = r.normal(size=cell.b.value.shape)
    x, h = r.normal(size=2), r.uniform(-0.9, 0.9, size=3)
    out, _ = gru_forward(cell, x, h)
    np.testing.assert_allclose(out, _scalar_gru(cell, x, h), rtol=0, atol=1e-13)


def test_dimension_mismatch():
    cell = GruCell(3, 4)
    with pytest.raises(ContractError):
        gru_forward(cell, np.ones(2), np.zeros(4))
    with pytest.raises(ContractError):
        gru_forward(cell, np.ones(3), np.zeros(5))


def test_backward_cache_from_other_cell():
    a, b = GruCell(3, 4), GruCell(3, 4)
    _, cache = gru_forward(a, np.ones(3), np.zeros(4))
    with pytest.raises(ContractError):
        gru_backward(b, cache, np.ones(4))


def test_backward_zero_gradient():
    cell = GruCell(3, 4, np.random.default_rng(1))
    _, cache = gru_forward(cell, np.ones(3), np.full(4, 0.3))
    dx, dh = gru_backward(cell, cache, np.zeros(4))
    assert not dx.any() and not dh.any()
    assert not cell.W.grad.any() and not cell.b.grad.any()


def test_backward_zero_weights_passes_half():
    cell = _zero_cell()
    g = np.array([1.0, -2.0, 0.5, 3.0])
    _, cache = gru_forward(cell, np.ones(3), np.array([0.1, 0.2, -0.3, 0.0]))
    _, dh = gru_backward(cell, cache, g)
    np.testing.assert_allclose(dh, 0.5 * g)


def _random_cell(r, dtype=np.float64):
    cell = GruCell(3, 4, r, dtype=dtype)
    cell.W.value[...] = r.uniform(-1, 1, cell.W.value.shape)
    cell.b.value[...] = r.uniform(-1, 1, cell.b.value.shape)
    return cell


def _check_inputs(loss, arrays_and_grads, tol):
    for arr, grad in arrays_and_grads:
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + 1e-4
            up = loss()
            arr[idx] = orig - 1e-4
            down = loss()
            arr[idx] = orig
            num = (up - down) / 2e-4
            assert abs(grad[idx] - num) / max(abs(grad[idx]), abs(num), 1e-8) < tol


def test_step_gradient_check_64bit():
    r = np.random.default_rng(11)
    cell = _random_cell(r)
    x, h0, proj = r.normal(size=(2, 3)), r.uniform(-0.5, 0.5, size=(2, 4)), r.normal(size=(2, 4))

    def loss():
        return float(np.sum(gru_forward(cell, x, h0)[0] * proj))

    _, cache = gru_forward(cell, x, h0)
    dx, dh0 = gru_backward(cell, cache, proj)
    assert finite_diff_check(loss, cell.params, h=1e-4) < 1e-5
    _check_inputs(loss, [(x, dx), (h0, dh0)], 1e-5)


def test_step_gradient_check_32bit():
    # 32-bit analytic gradients against 64-bit central differences at the same weights
    r = np.random.default_rng(11)
    c32 = _random_cell(r, np.float32)
    c64 = GruCell(3, 4)
    c64.W.value[...] = c32.W.value
    c64.b.value[...] = c32.b.value
    x, h0, proj = r.normal(size=(2, 3)), r.uniform(-0.5, 0.5, size=(2, 4)), r.normal(size=(2, 4))
    x32, h32 = x.astype(np.float32), h0.astype(np.float32)
    _, cache = gru_forward(c32, x32, h32)
    dx, dh0 = gru_backward(c32, cache, proj.astype(np.float32))
    assert c32.W.grad.dtype == np.float32
    c64.W.grad[...] = c32.W.grad
    c64.b.grad[...] = c32.b.grad
    x, h0 = x32.astype(np.float64), h32.astype(np.float64)

    def loss():
        return float(np.sum(gru_forward(c64, x, h0)[0] * proj))

    assert finite_diff_check(loss, c64.params, h=1e-4) < 1e-3
    _check_inputs(loss, [(x, dx), (h0, dh0)], 1e-3)


def test_sequence_matches_steps_and_gradcheck():
    r = np.random.default_rng(5)
    cell = GruCell(3, 4, r)
    cell.W.value[...] = r.uniform(-1, 1, cell.W.value.shape)
    X = r.normal(size=(6, 2, 3))
    h0 = r.uniform(-0.5, 0.5, size=(2, 4))
    out, cache = gru_sequence_forward(cell, X, h0)
    h = h0
    for t in range(6):
        h, _ = gru_forward(cell, X[t], h)
        np.testing.assert_allclose(out[t], h, atol=1e-14)
    proj = r.normal(size=out.shape)
    gru_sequence_backward(cell, cache, proj)
    err = finite_diff_check(lambda: float(np.sum(gru_sequence_forward(cell, X, h0)[0] * proj)), cell.params, h=1e-4)
    assert err < 1e-5


def test_sequence_clamp_overrides_units():
    cell = GruCell(2, 3, np.random.default_rng(0))
    X = np.random.default_rng(1).normal(size=(4, 1, 2))
    out, _ = gru_sequence_forward(cell, X, np.zeros((1, 3)), clamp=(np.array([1]), np.array([0.75])))
    np.testing.assert_array_equal(out[:, 0, 1], 0.75)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_state_bounded(seed, steps):
    r = np.random.default_rng(seed)
    cell = GruCell(3, 5, r)
    cell.W.value[...] = r.normal(0, 1, cell.W.value.shape)
    cell.b.value[...] = r.normal(0, 1, cell.b.value.shape)
    out, _ = gru_sequence_forward(cell, r.normal(0, 2, size=(steps, 2, 3)), r.uniform(-0.99, 0.99, (2, 5)))
    assert np.all(np.abs(out) < 1)


def test_forward_deterministic():
    r = np.random.default_rng(2)
    cell = GruCell(4, 6, r)
    X = r.normal(size=(10, 3, 4))
    a, _ = gru_sequence_forward(cell, X, np.zeros((3, 6)))
    b, _ = gru_sequence_forward(cell, X, np.zeros((3, 6)))
    assert a.tobytes() == b.tobytes()
