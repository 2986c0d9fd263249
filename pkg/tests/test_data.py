import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from besim.data import (AgentTrack, Bout, TrialData, auto_chunk_frames, bouts_to_frames, denormalize_strokes,
                        frames_to_bouts, load_trial, make_batches, normalize_strokes, read_config, save_trial,
                        subsample_labels)
from besim.exceptions import ConfigError, ContractError, DataError


def _trial(seed=0, T=30, n_agents=2):
    r = np.random.default_rng(seed)
    agents = []
    for k in range(n_agents):
        y = np.zeros((T, 2), bool)
        y[3:9, 0] = True
        y[12:20, 1] = True
        mask = np.ones(T, bool)
        if k == 1:
            mask[15:] = False
            y[15:] = False
        agents.append(AgentTrack(r.normal(size=(T, 3)), r.uniform(size=(T, 4)), y, mask, agent_id=str(k),
                                 extra={"pos_x": r.normal(size=T)}))
    return TrialData("t0", agents, ["walk", "turn"], {"note": "x"})


def test_bout_validation():
    with pytest.raises(ContractError):
        Bout(0, 5, 5)
    assert len(Bout(1, 2, 7)) == 5


def test_track_invariants():
    with pytest.raises(ContractError):
        AgentTrack(np.zeros((4, 2)), np.zeros((3, 1)))
    with pytest.raises(ContractError):
        AgentTrack(np.zeros((4, 2)), None, np.ones((4, 1), bool), np.zeros(4, bool))
    t = AgentTrack(np.zeros((4, 2)), None)
    assert t.v.shape == (4, 0) and not t.label_mask.any()


def test_trial_agents_share_length():
    with pytest.raises(ContractError):
        TrialData("t", [AgentTrack(np.zeros((3, 1)), None), AgentTrack(np.zeros((4, 1)), None)])


def test_save_load_round_trip(tmp_path):
    trial = _trial()
    save_trial(trial, tmp_path / "t")
    back = load_trial(tmp_path / "t")
    assert back.trial_id == "t0" and back.class_names == ["walk", "turn"]
    assert back.meta["note"] == "x"
    for a, b in zip(trial.agents, back.agents):
        np.testing.assert_allclose(b.x, a.x, rtol=1e-7)
        np.testing.assert_allclose(b.v, a.v, rtol=1e-7)
        np.testing.assert_allclose(b.extra["pos_x"], a.extra["pos_x"], rtol=1e-7)
        np.testing.assert_array_equal(b.labels, a.labels)
        np.testing.assert_array_equal(b.label_mask, a.label_mask)


def test_handcrafted_files(tmp_path):
    d = tmp_path / "hand"
    d.mkdir()
    (d / "meta.cfg").write_text("trial_id=hand\nclasses=a,b\n")
    (d / "agent_7.csv").write_text("frame,x_0,x_1,v_0\n0,1.5,-2,0.25\n1,0,3e-1,1\n2,-0.5,4,0\n")
    (d / "labels.csv").write_text("agent_id,class_name,start,end\n7,b,1,3\n")
    t = load_trial(d)
    a = t.agents[0]
    assert a.agent_id == "7"
    np.testing.assert_array_equal(a.x, [[1.5, -2.0], [0.0, 0.3], [-0.5, 4.0]])
    np.testing.assert_array_equal(a.v, [[0.25], [1.0], [0.0]])
    np.testing.assert_array_equal(a.labels, [[False, False], [False, True], [False, True]])
    assert a.label_mask.all()


def test_empty_labels_file_means_unlabeled(tmp_path):
    trial = _trial()
    save_trial(trial, tmp_path / "t")
    (tmp_path / "t" / "labels.csv").write_text("agent_id,class_name,start,end\n")
    back = load_trial(tmp_path / "t")
    assert not any(a.label_mask.any() for a in back.agents)
    (tmp_path / "t" / "labels.csv").write_text("")
    assert not load_trial(tmp_path / "t").agents[0].label_mask.any()


def test_ragged_row_reports_line(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "agent_0.csv").write_text("frame,x_0,v_0\n0,1,2\n1,3\n")
    with pytest.raises(DataError, match="line 3"):
        load_trial(d)


def test_unknown_class_reports_line(tmp_path):
    save_trial(_trial(), tmp_path / "t")
    with open(tmp_path / "t" / "labels.csv", "a") as fh:
        fh.write("0,fly,1,2\n")
    with pytest.raises(DataError, match="line .*fly"):
        load_trial(tmp_path / "t")


def test_bad_number_reports_line(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "agent_0.csv").write_text("frame,x_0\n0,1\n1,abc\n")
    with pytest.raises(DataError, match="line 3"):
        load_trial(d)


def test_config_files(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("# comment\na = 1\n\nb=x=y\n")
    assert read_config(p) == {"a": "1", "b": "x=y"}
    p.write_text("novalue\n")
    with pytest.raises(ConfigError):
        read_config(p)


@given(arrays(bool, st.tuples(st.integers(0, 40), st.integers(1, 3))))
def test_bouts_frames_inverse(frames):
    bouts = frames_to_bouts(frames)
    np.testing.assert_array_equal(bouts_to_frames(bouts, *frames.shape), frames)
    for b in bouts:
        assert b.start < b.end


def test_normalize_strokes():
    r = np.random.default_rng(0)
    writers = {}
    for w in range(3):
        tracks = []
        for _ in range(2):
            s = np.column_stack([r.normal(w, 2 + w, 50), r.normal(-w, 1, 50), r.random(50) < 0.8])
            tracks.append(s.astype(float))
        writers[w] = tracks
    norm, stats = normalize_strokes(writers)
    for w, tracks in norm.items():
        pts = np.concatenate(tracks)
        vis = pts[pts[:, 2] > 0.5, :2]
        assert np.all(np.abs(vis.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(vis.std(axis=0) - 1) < 1e-9)
        for a, b in zip(tracks, writers[w]):
            np.testing.assert_array_equal(a[:, 2], b[:, 2])
        for a, b in zip(denormalize_strokes(tracks, stats[w]), writers[w]):
            np.testing.assert_allclose(a, b, atol=1e-9)


def test_normalize_zero_variance_scale_one():
    s = np.column_stack([np.full(5, 2.0), np.arange(5.0), np.ones(5)])
    norm, stats = normalize_strokes({"w": [s]})
    assert stats["w"].std[0] == 1.0
    np.testing.assert_allclose(norm["w"][0][:, 0], 0.0)


def test_normalize_needs_two_points():
    with pytest.raises(ContractError):
        normalize_strokes({"w": [np.array([[1.0, 1.0, 1.0]])]})


def _labeled_tracks(n=4, T=25000):
    return [AgentTrack(np.zeros((T, 1)), None, np.zeros((T, 1), bool), np.ones(T, bool), agent_id=str(k))
            for k in range(n)]


def test_subsample_full_fraction_unchanged():
    tracks = _trial().agents
    out = subsample_labels(tracks, 1.0)
    for a, b in zip(tracks, out):
        np.testing.assert_array_equal(a.label_mask, b.label_mask)
        np.testing.assert_array_equal(a.labels, b.labels)


def test_subsample_three_percent():
    tracks = _labeled_tracks()
    out = subsample_labels(tracks, 0.03, seed=1, segment_len=500)
    kept = sum(int(t.label_mask.sum()) for t in out)
    assert abs(kept - 3000) <= 500
    assert all(np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v) for a, b in zip(out, tracks))


def test_subsample_keeps_contiguous_segments_and_labels_consistent():
    tracks = _trial(T=3000).agents
    out = subsample_labels(tracks, 0.2, seed=4, segment_len=100)
    for t, o in zip(tracks, out):
        assert not np.any(o.labels[~o.label_mask])
        np.testing.assert_array_equal(o.labels[o.label_mask], t.labels[o.label_mask])
        for run in frames_to_bouts(o.label_mask):
            assert run.start % 100 == 0 or run.start == 15


def test_subsample_rejects_bad_fraction():
    with pytest.raises(ContractError):
        subsample_labels(_trial().agents, 0.0)


def test_single_track_two_windows():
    t = AgentTrack(np.arange(100.0).reshape(-1, 1), None)
    batches = make_batches([t], window=50, batch_size=1)
    assert len(batches) == 2
    assert batches[0].reset[0] and not batches[1].reset[0]
    np.testing.assert_array_equal(batches[1].x[:, 0, 0], np.arange(50, 100))


def test_targets_are_next_frame():
    t = AgentTrack(np.arange(10.0).reshape(-1, 1), None)
    tg = np.arange(10).reshape(-1, 1) * 2
    b = make_batches([t], [tg], window=10, batch_size=1)[0]
    np.testing.assert_array_equal(b.targets[:9, 0, 0], tg[1:, 0])
    assert b.target_mask[:9, 0].all() and not b.target_mask[9, 0]


def test_short_track_skipped(caplog):
    with caplog.at_level(logging.WARNING):
        batches = make_batches([AgentTrack(np.zeros((1, 1)), None), AgentTrack(np.zeros((5, 1)), None)],
                               window=4, batch_size=1)
    assert "skipped" in caplog.text
    assert sum(b.n_frames for b in batches) == 5


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 120), min_size=1, max_size=6), st.integers(1, 30), st.integers(1, 5),
       st.integers(0, 10), st.booleans())
def test_batches_cover_each_frame_once(lengths, window, batch_size, seed, chunk):
    tracks = [AgentTrack(np.column_stack([np.full(T, k), np.arange(T)]).astype(float), None, agent_id=str(k))
              for k, T in enumerate(lengths)]
    chunk_frames = auto_chunk_frames(tracks, window, batch_size) if chunk else None
    batches = make_batches(tracks, window=window, batch_size=batch_size, seed=seed, chunk_frames=chunk_frames)
    seen = []
    for b in batches:
        seen.extend(map(tuple, b.x[b.valid]))
        assert not b.label_mask[~b.valid].any() and not b.target_mask[~b.valid].any()
    expect = [(k, i) for k, T in enumerate(lengths) if T >= 2 for i in range(T)]
    assert sorted(seen) == sorted((float(a), float(b)) for a, b in expect)
    assert sum(b.n_frames for b in batches) == len(expect)


def test_batches_carry_within_piece():
    tracks = [AgentTrack(np.arange(30.0).reshape(-1, 1), None, agent_id="a"),
              AgentTrack(100 + np.arange(20.0).reshape(-1, 1), None, agent_id="b")]
    batches = make_batches(tracks, window=10, batch_size=1, seed=0)
    prev_end = None
    for b in batches:
        start = b.x[0, 0, 0]
        if not b.reset[0]:
            assert start == prev_end
        prev_end = b.x[b.valid[:, 0], 0, 0][-1] + 1


def test_batches_seeded_order():
    tracks = _trial(T=200, n_agents=2).agents + _trial(seed=1, T=200, n_agents=2).agents
    a = make_batches(tracks, window=50, batch_size=2, seed=3)
    b = make_batches(tracks, window=50, batch_size=2, seed=3)
    assert [x.source for x in a] == [x.source for x in b]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.x, y.x)
