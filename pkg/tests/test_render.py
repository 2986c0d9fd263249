import logging
import re

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from besim.flyworld import Chamber, synthfly_chamber
from besim.render import render_strokes, render_trajectories, visible_segments, write_svg


def _polylines(svg):
    return re.findall(r'<polyline points="([^"]*)"', svg)


def test_invisible_strokes_draw_nothing(caplog):
    s = np.column_stack([np.ones(10), np.ones(10), np.zeros(10)])
    with caplog.at_level(logging.WARNING):
        svg = render_strokes(s)
    assert _polylines(svg) == [] and "empty canvas" in caplog.text


def test_straight_trajectory_endpoints():
    path = np.column_stack([np.linspace(0, 10, 11), np.zeros(11)])
    lines = _polylines(render_trajectories([path], width=110))
    assert len(lines) == 1
    pts = [tuple(map(float, p.split(","))) for p in lines[0].split()]
    assert len(pts) == 11
    assert pts[0][1] == pts[-1][1]
    assert pts[-1][0] - pts[0][0] == 90.0


def test_chamber_outline_and_objects():
    svg = render_trajectories([np.zeros((3, 2))], synthfly_chamber())
    assert svg.count("<rect") == 1 and svg.count("<circle") == 1
    svg = render_trajectories([], Chamber("circle", radius=10))
    assert svg.count("<circle") == 1 and _polylines(svg) == []


def test_one_polyline_per_agent():
    paths = [np.random.default_rng(k).normal(size=(20, 2)) for k in range(5)]
    assert len(_polylines(render_trajectories(paths))) == 5


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([0.0, 1.0])), max_size=40))
def test_path_count_matches_visible_runs(steps):
    s = np.array(steps, dtype=float).reshape(-1, 3)
    z = s[:, 2] > 0.5
    runs = int(np.sum(z & ~np.concatenate([[False], z[:-1]])))
    segs = visible_segments(s)
    assert len(segs) == runs
    assert sum(len(g) - 1 for g in segs) == int(z.sum())
    if runs:
        assert len(_polylines(render_strokes(s))) == runs


def test_segments_follow_cumulative_sum():
    s = np.array([[1, 0, 0], [1, 0, 1], [0, 2, 1], [5, 5, 0], [1, 1, 1]], dtype=float)
    segs = visible_segments(s)
    np.testing.assert_array_equal(segs[0], [[1, 0], [2, 0], [2, 2]])
    np.testing.assert_array_equal(segs[1], [[7, 7], [8, 8]])


def test_output_deterministic(tmp_path):
    paths = [np.random.default_rng(1).normal(size=(30, 2))]
    write_svg(tmp_path / "a.svg", render_trajectories(paths, synthfly_chamber()))
    write_svg(tmp_path / "b.svg", render_trajectories(paths, synthfly_chamber()))
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert (tmp_path / "a.svg").read_text().startswith("<svg")
