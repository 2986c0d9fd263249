"""Action-detection scores (F1 per frame and per bout, F*), score smoothing,
and log-likelihood of motion predictions with the reference policies."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Bout, frames_to_bouts
from .exceptions import ConfigError, ContractError

LOGLIK_FLOOR = 1e-6
POLICY_KINDS = ("uniform", "prior", "constant", "smooth_constant")


def filter_width(mean_bout_duration):
    return max(1, int(math.floor(0.1 * mean_bout_duration + 0.5)))


def smooth_scores(scores, mean_bout_duration):
    """Centred flat filter of width ``round(0.1 * mean_bout_duration)``.

    Windows are truncated at the sequence ends and averaged over the frames
    they actually cover. ``scores`` may be ``(T,)`` or ``(T, N)``; in the
    latter case ``mean_bout_duration`` may give one duration per class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2:
        durs = np.broadcast_to(np.asarray(mean_bout_duration, dtype=np.float64), (scores.shape[1],))
        return np.stack([smooth_scores(scores[:, k], durs[k]) for k in range(scores.shape[1])], axis=1)
    if mean_bout_duration <= 0:
        raise ContractError("mean bout duration must be positive")
    w = filter_width(mean_bout_duration)
    if w == 1 or scores.size == 0:
        return scores.copy()
    T = scores.size
    lo = np.arange(T) - (w - 1) // 2
    hi = lo + w
    lo = np.clip(lo, 0, T)
    hi = np.clip(hi, 0, T)
    csum = np.concatenate([[0.0], np.cumsum(scores)])
    return (csum[hi] - csum[lo]) / (hi - lo)


def extract_bouts(scores, threshold=0.5, cls=0):
    """Maximal runs where ``scores >= threshold``."""
    if not 0 < threshold < 1:
        raise ContractError("threshold must lie in (0, 1)")
    runs = frames_to_bouts(np.asarray(scores) >= threshold)
    return [Bout(cls, b.start, b.end) for b in runs]


def bout_iou(a, b):
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (max(a.end, b.end) - min(a.start, b.start))


def match_bouts(pred, truth, method="optimal"):
    """One-to-one matching of predicted to ground-truth bouts of one class.

    Only pairs with positive IoU are eligible. ``method="optimal"`` maximises
    the number of matched pairs and, among those, the summed IoU; remaining
    ties prefer the earlier ground-truth start, then the earlier prediction.
    ``method="greedy"`` repeatedly takes the highest-IoU free pair with the
    same tie-break; it can match fewer pairs on chained overlaps.

    Returns ``(pred_index, truth_index, iou)`` triples sorted by truth index.
    """
    pt = sorted(range(len(truth)), key=lambda j: (truth[j].start, truth[j].end, j))
    pp = sorted(range(len(pred)), key=lambda i: (pred[i].start, pred[i].end, i))
    iou = np.array([[bout_iou(pred[i], truth[j]) for j in pt] for i in pp]).reshape(len(pp), len(pt))
    if iou.size == 0 or not np.any(iou > 0):
        return []
    pairs = []
    if method == "greedy":
        cand = [(-iou[a, b], b, a) for a in range(len(pp)) for b in range(len(pt)) if iou[a, b] > 0]
        used_p, used_t = set(), set()
        for neg, b, a in sorted(cand):
            if a in used_p or b in used_t:
                continue
            used_p.add(a)
            used_t.add(b)
            pairs.append((a, b))
    elif method == "optimal":
        n_p, n_t = iou.shape
        # lexicographic objective: match count >> summed IoU >> order preference
        big = float(min(n_p, n_t) + 1)
        rank = (np.arange(n_t)[None, :] * n_p + np.arange(n_p)[:, None]) / float(n_p * n_t)
        weight = np.where(iou > 0, big + iou - 1e-9 * rank, 0.0)
        rows, cols = linear_sum_assignment(weight, maximize=True)
        pairs = [(a, b) for a, b in zip(rows, cols) if iou[a, b] > 0]
    else:
        raise ConfigError(f"unknown matching method {method!r}")
    out = [(pp[a], pt[b], float(iou[a, b])) for a, b in pairs]
    return sorted(out, key=lambda m: (truth[m[1]].start, m[1]))


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def harmonic(a, b):
    return 0.0 if a <= 0 or b <= 0 else 2 * a * b / (a + b)


@dataclass
class ClassScores:
    name: str
    f1_frame: float
    f1_bout: float
    f_star: float
    frame_precision: float
    frame_recall: float
    bout_precision: float
    bout_recall: float
    n_true_bouts: int
    n_pred_bouts: int
    n_matched: int


@dataclass
class F1Report:
    per_class: list
    mean: ClassScores = field(default=None)
    weighted: ClassScores = field(default=None)

    def __post_init__(self):
        if self.mean is None:
            self.mean = _aggregate(self.per_class, "class_mean", weights=None)
        if self.weighted is None:
            self.weighted = _aggregate(self.per_class, "instance_weighted",
                                       weights=[c.n_true_bouts for c in self.per_class])

    def rows(self):
        return [*self.per_class, self.mean, self.weighted]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "f1_frame", "f1_bout", "f_star", "frame_precision", "frame_recall",
                        "bout_precision", "bout_recall", "n_true_bouts", "n_pred_bouts", "n_matched"])
            for c in self.rows():
                w.writerow([c.name, *(f"{v:.6f}" for v in (c.f1_frame, c.f1_bout, c.f_star, c.frame_precision,
                                                            c.frame_recall, c.bout_precision, c.bout_recall)),
                            c.n_true_bouts, c.n_pred_bouts, c.n_matched])

    def table(self):
        lines = [f"{'class':<20} {'F1-frame':>9} {'F1-bout':>9} {'F*':>9} {'#bouts':>7}"]
        for c in self.rows():
            lines.append(f"{c.name:<20} {c.f1_frame:9.4f} {c.f1_bout:9.4f} {c.f_star:9.4f} {c.n_true_bouts:7d}")
        return "\n".join(lines)


def _aggregate(rows, name, weights):
    if not rows:
        return ClassScores(name, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0, 0)
    w = np.ones(len(rows)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.sum() == 0:
        w = np.ones(len(rows))
    w = w / w.sum()
    avg = lambda attr: float(sum(wi * getattr(r, attr) for wi, r in zip(w, rows)))  # noqa: E731
    ff, fb = avg("f1_frame"), avg("f1_bout")
    return ClassScores(name, ff, fb, harmonic(ff, fb), avg("frame_precision"), avg("frame_recall"),
                       avg("bout_precision"), avg("bout_recall"), sum(r.n_true_bouts for r in rows),
                       sum(r.n_pred_bouts for r in rows), sum(r.n_matched for r in rows))


def f1_scores(pred, truth, class_names=None, masks=None):
    """Frame- and bout-level F1 per class over one or more sequences.

    ``pred`` and ``truth`` are ``(T, N)`` boolean arrays or lists of them
    (one per sequence). ``masks`` optionally restricts scoring to annotated
    frames; bouts are extracted inside each masked run separately.
    """
    if isinstance(pred, np.ndarray):
        pred, truth = [pred], [truth]
        masks = None if masks is None else [masks]
    if len(pred) != len(truth):
        raise ContractError("pred and truth hold different numbers of sequences")
    N = np.asarray(truth[0]).reshape(len(truth[0]), -1).shape[1]
    names = list(class_names) if class_names else [f"class_{k}" for k in range(N)]
    tp = np.zeros(N)
    fp = np.zeros(N)
    fn = np.zeros(N)
    n_pred = np.zeros(N, int)
    n_true = np.zeros(N, int)
    n_match = np.zeros(N, int)
    for s, (p, t) in enumerate(zip(pred, truth)):
        p = np.asarray(p, bool).reshape(len(p), -1)
        t = np.asarray(t, bool).reshape(len(t), -1)
        if p.shape != t.shape:
            raise ContractError(f"sequence {s}: prediction shape {p.shape} != truth shape {t.shape}")
        m = np.ones(len(p), bool) if masks is None or masks[s] is None else np.asarray(masks[s], bool)
        tp += np.sum(p & t & m[:, None], axis=0)
        fp += np.sum(p & ~t & m[:, None], axis=0)
        fn += np.sum(~p & t & m[:, None], axis=0)
        for run in frames_to_bouts(m):
            sl = slice(run.start, run.end)
            for k in range(N):
                pb = extract_bouts(p[sl, k].astype(float), 0.5)
                tb = extract_bouts(t[sl, k].astype(float), 0.5)
                n_pred[k] += len(pb)
                n_true[k] += len(tb)
                n_match[k] += len(match_bouts(pb, tb))
    rows = []
    for k in range(N):
        fpr = tp[k] / (tp[k] + fp[k]) if tp[k] + fp[k] else 0.0
        frc = tp[k] / (tp[k] + fn[k]) if tp[k] + fn[k] else 0.0
        bpr = n_match[k] / n_pred[k] if n_pred[k] else 0.0
        brc = n_match[k] / n_true[k] if n_true[k] else 0.0
        ff, fb = _f1(fpr, frc), _f1(bpr, brc)
        rows.append(ClassScores(names[k], ff, fb, harmonic(ff, fb), fpr, frc, bpr, brc,
                                int(n_true[k]), int(n_pred[k]), int(n_match[k])))
    return F1Report(rows)


def f_star(f1_frame, f1_bout):
    return harmonic(f1_frame, f1_bout)


# --- motion log-likelihood ---------------------------------------------------

def motion_loglik(x_hat, true_bins):
    """Sum over steps and dimensions of the log-probability of the true bin.

    ``x_hat[d]`` is ``(steps, n_d)``; ``true_bins`` is ``(steps, D)``.
    Probabilities are floored at 1e-6 before the log.
    """
    true_bins = np.asarray(true_bins)
    if true_bins.ndim != 2 or len(x_hat) != true_bins.shape[1]:
        raise ContractError("need one distribution array per motion dimension")
    total = 0.0
    for d, p in enumerate(x_hat):
        p = np.asarray(p, dtype=np.float64)
        if p.shape[0] != true_bins.shape[0]:
            raise ContractError(f"dimension {d}: {p.shape[0]} predictions for {true_bins.shape[0]} steps")
        pt = np.take_along_axis(p, true_bins[:, d:d + 1], axis=1)[:, 0]
        total += float(np.sum(np.log(np.maximum(pt, LOGLIK_FLOOR))))
    return total


def _gaussian_rows(prev, n, sigma):
    k = np.arange(n)
    w = np.exp(-0.5 * ((k[None, :] - prev[:, None]) / sigma) ** 2)
    return w / w.sum(axis=1, keepdims=True)


def _clamp_rows(p, floor):
    p = np.maximum(p, floor)
    return p / p.sum(axis=1, keepdims=True)


class BaselinePolicy(BaseEstimator):
    """Reference motion predictors.

    ``uniform``
        1/n over every bin.
    ``prior``
        per-dimension bin histogram of the training sequences.
    ``constant``
        the previous frame's one-hot bin vector, floored at ``floor``.
    ``smooth_constant``
        the previous bin smeared by a Gaussian over bin indices; the width is
        picked per dimension from ``sigmas`` by validation log-likelihood.
    """

    def __init__(self, kind="uniform", sigmas=(0.5, 1.0, 2.0, 4.0, 8.0), floor=LOGLIK_FLOOR):
        self.kind = kind
        self.sigmas = sigmas
        self.floor = floor

    def fit(self, sequences, bin_counts, validation=None):
        """``sequences`` is a list of ``(T, D)`` bin-index arrays.

        ``validation`` (same form) is used to choose the smoothing width;
        the training sequences are used when it is omitted.
        """
        kind = str(self.kind).lower()
        if kind not in POLICY_KINDS:
            raise ConfigError(f"unknown baseline policy {self.kind!r}; expected one of {POLICY_KINDS}")
        self.kind_ = kind
        self.bin_counts_ = [int(n) for n in bin_counts]
        seqs = [np.asarray(s) for s in sequences]
        if kind == "prior":
            allb = np.concatenate(seqs)
            self.prior_ = [np.bincount(allb[:, d], minlength=n) / len(allb)
                           for d, n in enumerate(self.bin_counts_)]
        if kind == "smooth_constant":
            val = [np.asarray(s) for s in validation] if validation is not None else seqs
            self.sigma_ = []
            for d, n in enumerate(self.bin_counts_):
                best, best_ll = None, -np.inf
                for sigma in self.sigmas:
                    ll = 0.0
                    for s in val:
                        if len(s) < 2:
                            continue
                        p = _clamp_rows(_gaussian_rows(s[:-1, d], n, sigma), self.floor)
                        ll += float(np.sum(np.log(np.maximum(p[np.arange(len(s) - 1), s[1:, d]], LOGLIK_FLOOR))))
                    if ll > best_ll:
                        best, best_ll = sigma, ll
                self.sigma_.append(best)
        return self

    def predict_proba(self, bins):
        """Distributions for frames ``1..T-1`` of one ``(T, D)`` bin sequence."""
        check_is_fitted(self, "kind_")
        bins = np.asarray(bins)
        steps = len(bins) - 1
        out = []
        for d, n in enumerate(self.bin_counts_):
            if self.kind_ == "uniform":
                p = np.full((steps, n), 1.0 / n)
            elif self.kind_ == "prior":
                p = np.tile(self.prior_[d], (steps, 1))
            elif self.kind_ == "constant":
                p = np.zeros((steps, n))
                p[np.arange(steps), bins[:-1, d]] = 1.0
                p = _clamp_rows(p, self.floor)
            else:
                p = _clamp_rows(_gaussian_rows(bins[:-1, d], n, self.sigma_[d]), self.floor)
            out.append(p)
        return out

    def loglik(self, sequences):
        """Total log-likelihood and number of predicted frames over sequences."""
        total, frames = 0.0, 0
        for s in sequences:
            s = np.asarray(s)
            if len(s) < 2:
                continue
            total += motion_loglik(self.predict_proba(s), s[1:])
            frames += len(s) - 1
        return total, frames
