import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_sequence, rect
from tempmeta.dataio import (
    DataFormatError,
    Frame,
    GroundTruthFrame,
    Instance,
    filter_ignored,
    load_sequence,
    read_features,
    read_prob,
    save_sequence,
    write_features,
    write_prob,
)
from tempmeta.geometry import FrameDims, PixelMask


def three_frames(dims, with_prob=True):
    frames, gt = [], []
    for t in range(3):
        frames.append([(1, rect(dims, 5 + t, 5, 10, 12), 0.75), (2, rect(dims, 30, 40 + t, 8, 8), 0.25)])
        gt.append([(7, 1, rect(dims, 5 + t, 5, 10, 12)), (9, 2, rect(dims, 31, 40 + t, 8, 8))])
    seq = make_sequence(dims, frames, gt, seq_id="s")
    if with_prob:
        rng = np.random.default_rng(0)
        for fr in seq.frames:
            p = rng.random((*dims.shape, 3)).astype(np.float64)
            fr.prob_map = (p / p.sum(axis=2, keepdims=True)).astype(np.float32)
    return seq


def test_round_trip_is_identity(tmp_path, dims):
    seq = three_frames(dims)
    save_sequence(seq, tmp_path / "s")
    back = load_sequence(tmp_path / "s")
    assert len(back) == 3 and back.id == "s"
    for a, b in zip(seq.frames, back.frames):
        assert a.instances == b.instances
        assert np.array_equal(a.prob_map, b.prob_map)
    for a, b in zip(seq.gt, back.gt):
        assert a.instances == b.instances


def test_missing_id_map_names_frame(tmp_path, dims):
    save_sequence(three_frames(dims, with_prob=False), tmp_path / "s")
    (tmp_path / "s" / "pred" / "frame_000002.png").unlink()
    with pytest.raises(DataFormatError, match="frame 2") as info:
        load_sequence(tmp_path / "s")
    assert info.value.frame == 2


def test_bad_probability_row_names_pixel_and_frame(tmp_path, dims):
    save_sequence(three_frames(dims), tmp_path / "s")
    path = tmp_path / "s" / "pred" / "frame_000003.prob"
    p = read_prob(path)
    p[4, 6] = np.array([0.5, 0.2, 0.1], dtype=np.float32)
    write_prob(path, p)
    with pytest.raises(DataFormatError, match=r"frame 3: pixel \(4, 6\) probabilities sum to 0\.8"):
        load_sequence(tmp_path / "s")


def test_dims_mismatch_rejected(tmp_path, dims):
    save_sequence(three_frames(dims, with_prob=False), tmp_path / "s")
    other = FrameDims(dims.height + 1, dims.width)
    save_sequence(make_sequence(other, [[(1, rect(other, 1, 1, 4, 4))]]), tmp_path / "t")
    (tmp_path / "t" / "pred" / "frame_000001.png").replace(tmp_path / "s" / "pred" / "frame_000002.png")
    with pytest.raises(DataFormatError, match="frame 2"):
        load_sequence(tmp_path / "s")


def _ignore_case(n_inside):
    D = FrameDims(20, 20)
    inst = np.zeros(D.shape, bool)
    inst[0:10, 0:10] = True  # 100 pixels
    ign = np.zeros(D.shape, bool)
    ign.flat[np.flatnonzero(inst)[:n_inside]] = True
    fr = Frame(1, D, [Instance(1, 1, 0.5, PixelMask.from_dense(inst))])
    gt = GroundTruthFrame(1, [], PixelMask.from_dense(ign) if n_inside else None)
    return fr, gt


@pytest.mark.parametrize("n_inside, kept", [(0, 1), (79, 1), (80, 0), (100, 0)])
def test_ignore_threshold_is_inclusive(n_inside, kept):
    fr, gt = _ignore_case(n_inside)
    out = filter_ignored(fr, gt)
    assert len(out.instances) == kept
    if kept:
        assert out.instances[0] is fr.instances[0]


def test_features_csv(tmp_path):
    rng = np.random.default_rng(1)
    recs = [
        {"sequence": f"s{k % 3}", "track_id": int(rng.integers(1, 1 << 30)), "frame": k, "a_0": float(rng.normal()),
         "b_0": float(rng.normal() * 1e-300), "present_0": int(k % 2)}
        for k in range(1000)
    ]
    write_features(recs, tmp_path / "f.csv")
    assert read_features(tmp_path / "f.csv") == recs
    write_features(recs[:1], tmp_path / "one.csv")
    assert len((tmp_path / "one.csv").read_text().splitlines()) == 2
    with pytest.raises(ValueError, match="empty"):
        write_features([], tmp_path / "e.csv")
    with pytest.raises(OSError, match="no_dir"):
        write_features(recs, tmp_path / "no_dir" / "f.csv")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15), st.integers(2, 8), st.integers(2, 8)), max_size=4))
def test_filter_never_adds_or_alters(boxes):
    D = FrameDims(24, 24)
    insts = [Instance(k + 1, 1, 0.5, rect(D, r, c, h, w)) for k, (r, c, h, w) in enumerate(boxes)]
    ign = np.zeros(D.shape, bool)
    ign[:12] = True
    fr = Frame(1, D, insts)
    out = filter_ignored(fr, GroundTruthFrame(1, [], PixelMask.from_dense(ign)))
    assert len(out.instances) <= len(insts)
    assert all(i in insts for i in out.instances)
