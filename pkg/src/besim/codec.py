"""Per-dimension discretisation of real-valued motion.

Each motion dimension gets its own sorted edge vector. Values are encoded to
the index of the bin containing them (clamping outliers to the end bins) and
decoded either to bin midpoints or by uniform sampling inside a chosen bin.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError, DataError

log = logging.getLogger(__name__)


@dataclass
class BinSpec:
    """Bin edges for every motion dimension; ``edges[d]`` has ``n_d + 1`` entries."""

    edges: list

    def __post_init__(self):
        self.edges = [np.asarray(e, dtype=np.float64) for e in self.edges]
        for d, e in enumerate(self.edges):
            if e.ndim != 1 or e.size < 3:
                raise ContractError(f"dimension {d}: need at least 2 bins")
            if not np.all(np.diff(e) > 0):
                raise ContractError(f"dimension {d}: edges must be strictly increasing")

    @property
    def n_dims(self):
        return len(self.edges)

    @property
    def bin_counts(self):
        return [e.size - 1 for e in self.edges]

    @property
    def lower(self):
        return np.array([e[0] for e in self.edges])

    @property
    def upper(self):
        return np.array([e[-1] for e in self.edges])

    def midpoints(self, d):
        e = self.edges[d]
        return 0.5 * (e[:-1] + e[1:])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dimension", "edge_index", "edge_value"])
            for d, e in enumerate(self.edges):
                for k, val in enumerate(e):
                    w.writerow([d, k, repr(float(val))])

    @classmethod
    def from_csv(cls, path):
        rows = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["dimension", "edge_index", "edge_value"]:
                raise DataError(f"unexpected bin header {header}", line=1)
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 3:
                    raise DataError("expected 3 fields", line=lineno)
                try:
                    d, k, val = int(row[0]), int(row[1]), float(row[2])
                except ValueError as exc:
                    raise DataError(str(exc), line=lineno) from None
                rows.setdefault(d, {})[k] = val
        if sorted(rows) != list(range(len(rows))):
            raise DataError("bin dimensions are not contiguous")
        edges = []
        for d in range(len(rows)):
            ks = rows[d]
            if sorted(ks) != list(range(len(ks))):
                raise DataError(f"dimension {d}: edge indices are not contiguous")
            edges.append([ks[k] for k in range(len(ks))])
        return cls(edges)


def _fill_edges(edges, n_edges):
    # split the widest gap until the requested edge count is reached
    edges = list(edges)
    while len(edges) < n_edges:
        gaps = np.diff(edges)
        k = int(np.argmax(gaps))
        edges.insert(k + 1, 0.5 * (edges[k] + edges[k + 1]))
    return np.array(edges)


def _fit_dimension(values, n_bins, d):
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise DataError(f"dimension {d}: no finite values to fit bins")
    lo, hi = float(values.min()), float(values.max())
    if np.unique(values).size < n_bins:
        log.warning("dimension %d: fewer distinct values than %d bins, using equal-width bins", d, n_bins)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        return np.linspace(lo, hi, n_bins + 1)
    q = np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1))
    q[0], q[-1] = lo, hi
    return _fill_edges(np.unique(q), n_bins + 1)


def fit_bins(motion, n_bins=51):
    """Fit equal-frequency bin edges per dimension.

    ``motion`` is a ``(frames, D)`` array or a list of such arrays;
    ``n_bins`` may be one count for all dimensions or one per dimension.
    Heavily tied dimensions keep their distinct quantiles and the widest
    intervals are split until each dimension has its full bin count.
    """
    if isinstance(motion, (list, tuple)):
        motion = np.concatenate([np.asarray(m, dtype=np.float64).reshape(len(m), -1) for m in motion])
    motion = np.asarray(motion, dtype=np.float64)
    if motion.ndim != 2:
        raise ContractError("motion must be 2-d (frames, dims)")
    D = motion.shape[1]
    counts = [int(n_bins)] * D if np.isscalar(n_bins) else [int(n) for n in n_bins]
    if len(counts) != D:
        raise ContractError(f"got {len(counts)} bin counts for {D} dimensions")
    if min(counts) < 2:
        raise ContractError("n_bins must be at least 2")
    return BinSpec([_fit_dimension(motion[:, d], counts[d], d) for d in range(D)])


def encode_motion(x, spec):
    """Bin index per dimension; works on ``(D,)`` vectors or ``(frames, D)`` arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape, dtype=np.int64)
    for d, e in enumerate(spec.edges):
        idx = np.searchsorted(e, x[..., d], side="right") - 1
        out[..., d] = np.clip(idx, 0, e.size - 2)
    return out


def decode_motion(bins, spec):
    """Map bin indices back to bin midpoints."""
    bins = np.asarray(bins)
    out = np.empty(bins.shape, dtype=np.float64)
    for d in range(spec.n_dims):
        out[..., d] = spec.midpoints(d)[bins[..., d]]
    return out


def sample_motion(x_hat, spec, rng, mode="sample", return_bins=False):
    """Draw one motion vector from per-dimension bin distributions.

    A bin is drawn from each categorical ``x_hat[d]`` and the value is drawn
    uniformly inside it. ``mode="argmax"`` takes the most probable bin's
    midpoint instead. With ``return_bins`` the chosen bin indices are
    returned as well.
    """
    if len(x_hat) != spec.n_dims:
        raise ContractError(f"got {len(x_hat)} distributions for {spec.n_dims} dimensions")
    if mode not in ("sample", "argmax"):
        raise ContractError(f"unknown sampling mode {mode!r}")
    out = np.empty(spec.n_dims)
    bins = np.empty(spec.n_dims, dtype=np.int64)
    for d, (p, e) in enumerate(zip(x_hat, spec.edges)):
        p = np.asarray(p, dtype=np.float64)
        if p.size != e.size - 1:
            raise ContractError(f"dimension {d}: distribution has {p.size} bins, spec has {e.size - 1}")
        total = p.sum()
        if abs(total - 1.0) > 1e-3 or np.any(p < 0):
            raise ContractError(f"dimension {d}: distribution is not normalised (sum {total:.6f})")
        if mode == "argmax":
            k = int(np.argmax(p))
            out[d] = 0.5 * (e[k] + e[k + 1])
        else:
            cdf = np.cumsum(p) / total
            k = min(int(np.searchsorted(cdf, rng.random(), side="right")), p.size - 1)
            out[d] = e[k] + rng.random() * (e[k + 1] - e[k])
        bins[d] = k
    return (out, bins) if return_bins else out


class MotionBinner(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_bins` / :func:`encode_motion`.

    ``transform`` yields integer bin indices, ``inverse_transform`` bin
    midpoints.
    """

    def __init__(self, n_bins=51):
        self.n_bins = n_bins

    def fit(self, X, y=None):
        self.spec_ = fit_bins(X, self.n_bins)
        self.n_features_in_ = self.spec_.n_dims
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} motion dims, got {X.shape[-1]}")
        return encode_motion(X, self.spec_)

    def inverse_transform(self, bins):
        check_is_fitted(self, "spec_")
        return decode_motion(bins, self.spec_)

    def sample(self, x_hat, rng, mode="sample"):
        check_is_fitted(self, "spec_")
        return sample_motion(x_hat, self.spec_, rng, mode=mode)
