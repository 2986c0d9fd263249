"""Shared fixtures for gradient checks on the full network cost."""

import itertools

import numpy as np

from besim.data import Bout
from besim.metrics import bout_iou
from besim.model import BehaviorNetwork, ModelConfig, ModelState
from besim.numerics import finite_diff_check

TINY = dict(motion_dim=2, sensory_dim=4, bin_counts=(5, 5), units=(6, 6), n_actions=2)


def tiny_problem(variant, label_mode="multitask", seed=0, T=5, B=2, lam=0.5):
    r = np.random.default_rng(seed)
    cfg = ModelConfig(variant=variant, label_mode=label_mode, lam=lam, **TINY)
    net = BehaviorNetwork(cfg, np.random.default_rng(seed))
    # a well-conditioned check point: O(1) weights keep every gradient entry
    # far from the round-off floor of central differences
    for p in net.params:
        p.value[...] = r.uniform(-1, 1, p.value.shape)
    X = r.normal(size=(T, B, 2))
    V = r.uniform(0, 1, size=(T, B, 4))
    targets = r.integers(0, 5, size=(T, B, 2))
    labels = np.zeros((T, B, 2))
    labels[np.arange(T), :, r.integers(0, 2, size=T)] = 1.0
    mask = r.random((T, B)) < 0.7
    mask[0, 0] = True
    labels *= mask[..., None]
    state = ModelState([r.uniform(-0.5, 0.5, (B, 6)) for _ in range(2)],
                       [r.uniform(-0.5, 0.5, (B, 6)) for _ in range(2)] if variant != "benet" else [])
    return net, (X, V, targets, labels, mask, state)


def full_cost(net, data):
    X, V, targets, labels, mask, state = data
    res = net.forward(X, V, state)
    report, grads = net.loss(res, targets, labels, mask)
    return res, report, grads


def gradient_error(variant, dtype=np.float64, label_mode="multitask", seed=0):
    """Max relative error of the analytic gradient of C.

    For 32-bit the analytic gradient comes from a float32 copy of the network
    and the reference differences from float64 evaluation at the same
    (float32-representable) weights.
    """
    net64, data = tiny_problem(variant, label_mode, seed)
    if dtype == np.float64:
        net = net64
    else:
        net = BehaviorNetwork(net64.config, dtype=dtype)
        for p, q in zip(net.params, net64.params):
            p.value[...] = q.value
            q.value[...] = p.value
        X, V, targets, labels, mask, state = data
        data = (X.astype(dtype).astype(np.float64), V.astype(dtype).astype(np.float64), targets, labels, mask,
                ModelState([h.astype(dtype).astype(np.float64) for h in state.h],
                           [g.astype(dtype).astype(np.float64) for g in state.g]))
    cast = lambda d: (d[0].astype(dtype), d[1].astype(dtype), d[2], d[3], d[4],  # noqa: E731
                      ModelState([h.astype(dtype) for h in d[5].h], [g.astype(dtype) for g in d[5].g]))
    net.zero_grad()
    res, _, grads = full_cost(net, cast(data))
    net.backward(res, grads)
    if net is not net64:
        for p, q in zip(net.params, net64.params):
            assert p.grad.dtype == dtype
            q.grad[...] = p.grad
    return finite_diff_check(lambda: full_cost(net64, data)[1].C, net64.params, h=1e-4)


def brute_force_count(pred, truth):
    best = 0
    n = min(len(pred), len(truth))
    for perm in itertools.permutations(range(len(truth)), n) if len(pred) <= len(truth) else []:
        best = max(best, sum(bout_iou(pred[i], truth[j]) > 0 for i, j in enumerate(perm)))
    for perm in itertools.permutations(range(len(pred)), n) if len(pred) > len(truth) else []:
        best = max(best, sum(bout_iou(pred[i], truth[j]) > 0 for j, i in enumerate(perm)))
    return best


def random_bouts(r, k, horizon=40):
    out = []
    for _ in range(k):
        s = int(r.integers(0, horizon - 1))
        out.append(Bout(0, s, int(r.integers(s + 1, min(horizon, s + 15) + 1))))
    return out
