"""Toy on-line handwriting: a few glyphs drawn as pen-offset sequences.

Used for tests and the stroke side of the command line. Each glyph is a
short polyline; a pen-up move (z=0) joins consecutive glyphs. Frames are
labeled with the glyph being written, so the data suits the multiclass
label mode.
"""

from __future__ import annotations

import numpy as np

from .data import AgentTrack, TrialData, normalize_strokes

GLYPHS = {
    # polylines in a unit box, pen down throughout
    "o": [(np.cos(a) * 0.5 + 0.5, np.sin(a) * 0.5 + 0.5) for a in np.linspace(-np.pi, np.pi, 13)],
    "l": [(0.5, 0.0), (0.5, 0.35), (0.5, 0.7), (0.5, 1.05), (0.5, 1.4)],
    "v": [(0.0, 1.0), (0.17, 0.5), (0.33, 0.0), (0.5, 0.5), (0.67, 1.0)],
}
GLYPH_NAMES = sorted(GLYPHS)


def write_text(text, rng, scale=1.0, slant=0.0, jitter=0.02):
    """Offsets ``(T, 3)`` and per-frame glyph indices for ``text``."""
    pts, zs, cls = [], [], []
    cursor = 0.0
    prev = np.zeros(2)
    for ch in text:
        glyph = np.array(GLYPHS[ch], dtype=np.float64)
        glyph[:, 0] += slant * glyph[:, 1] + cursor
        glyph = glyph * scale + rng.normal(0.0, jitter, glyph.shape)
        for k, p in enumerate(glyph):
            pts.append(p - prev)
            zs.append(0.0 if k == 0 else 1.0)
            cls.append(GLYPH_NAMES.index(ch))
            prev = p
        cursor += 1.2
    out = np.column_stack([np.array(pts), np.array(zs)])
    return out, np.array(cls)


def handwriting_trials(n_writers=3, lines_per_writer=4, chars_per_line=40, seed=0):
    """Normalised toy trials (one per line) and per-writer statistics."""
    rng = np.random.default_rng(seed)
    raw, labels = {}, {}
    for w in range(n_writers):
        scale = rng.uniform(0.8, 1.5)
        slant = rng.uniform(-0.2, 0.3)
        raw[w], labels[w] = [], []
        for _ in range(lines_per_writer):
            text = "".join(rng.choice(GLYPH_NAMES, chars_per_line))
            strokes, cls = write_text(text, rng, scale, slant)
            raw[w].append(strokes)
            labels[w].append(cls)
    norm, stats = normalize_strokes(raw)
    trials = []
    for w in range(n_writers):
        for k, (s, cls) in enumerate(zip(norm[w], labels[w])):
            y = np.zeros((len(s), len(GLYPH_NAMES)), bool)
            y[np.arange(len(s)), cls] = True
            track = AgentTrack(s, None, y, np.ones(len(s), bool), agent_id="0",
                               extra={"_x_names": ["x_dx", "x_dy", "x_z"]})
            trials.append(TrialData(f"writer{w}_line{k}", [track], list(GLYPH_NAMES), {"writer": w}))
    return trials, stats
