import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_sequence, rect
from tempmeta import naive
from tempmeta.dataio import GroundTruthFrame, GTInstance, Instance
from tempmeta.features import (
    InstanceMetrics,
    assemble_timeseries,
    center_and_size_deviation,
    compute_metrics,
    dispersion_heatmaps,
    gt_class_ratios,
    ratio_metric,
    shape_preservation,
    single_frame_metrics,
)
from tempmeta.geometry import FrameDims, PixelMask, shift
from tempmeta.tracker import TrackHistory, track_sequence

D = FrameDims(20, 30)


def inst(mask, cls=1, score=0.5, local_id=1):
    return Instance(local_id, cls, score, mask)


def test_uniform_and_onehot_dispersion():
    C = 4
    m = rect(D, 3, 3, 5, 6)
    uni = np.full((*D.shape, C), 1 / C)
    out = single_frame_metrics(inst(m), uni)
    assert out["E"] == pytest.approx(1.0)
    assert out["V"] == pytest.approx(1 - 1 / C)
    assert out["M"] == pytest.approx(0.0, abs=1e-12)
    onehot = np.zeros((*D.shape, C))
    onehot[..., 2] = 1
    out = single_frame_metrics(inst(m), onehot)
    assert (out["E"], out["V"], out["M"]) == (0.0, 0.0, 1.0)
    assert (out["E_in"], out["E_bd"]) == (0.0, 0.0)


def test_geometry_of_3x3_block():
    out = single_frame_metrics(inst(rect(D, 4, 4, 3, 3)))
    assert (out["S"], out["S_in"], out["S_bd"]) == (9, 1, 8)
    assert out["rel_bd"] == pytest.approx(8 / 9)
    assert out["center_v"] == pytest.approx(5 / 20) and out["center_h"] == pytest.approx(5 / 30)
    assert (out["h"], out["w"]) == (3, 3)
    assert "E" not in out


def test_empty_inner_falls_back_to_whole_mask():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(3), size=D.shape)
    out = single_frame_metrics(inst(rect(D, 2, 2, 2, 7)), p)
    assert out["S_in"] == 0
    for k in "EVM":
        assert out[f"{k}_in"] == out[k]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8))
def test_dispersion_size_weighted_identity(seed, h, w):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(3) * 0.5, size=D.shape)
    a = np.zeros(D.shape, bool)
    a[2 : 2 + h, 3 : 3 + w] = True
    a |= rng.random(D.shape) < 0.05
    out = single_frame_metrics(inst(PixelMask.from_dense(a)), p)
    for k in "EVM":
        assert out[k] * out["S"] == pytest.approx(out[f"{k}_in"] * out["S_in"] + out[f"{k}_bd"] * out["S_bd"], abs=1e-9)
        assert 0 <= out[k] <= 1


def test_heatmaps_bounds():
    rng = np.random.default_rng(1)
    heat = dispersion_heatmaps(rng.dirichlet(np.ones(5), size=(4, 4)))
    assert heat.shape == (4, 4, 3)
    assert heat.min() >= 0 and heat.max() <= 1


def test_shape_preservation_examples():
    m = rect(D, 3, 4, 5, 6)
    assert shape_preservation(m, m) == 1.0
    assert shape_preservation(m, shift(m, (7, -3))) == 1.0
    blk, strip = rect(D, 0, 0, 2, 2), rect(D, 5, 3, 1, 4)
    # centre offset (4.5, 4.0) rounds to (5, 4): block lands on rows 5-6, cols 4-5
    moved = frozenset((v + 5, h + 4) for v, h in naive.pixel_set(blk))
    expect = naive.overlap(moved, naive.pixel_set(strip))
    assert expect == 2 / 6
    assert shape_preservation(blk, strip) == expect


def test_shape_preservation_translation_invariant():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.random((6, 7)) < 0.6
        a[0, 0] = True
        dense = np.zeros(D.shape, bool)
        dense[5:11, 8:15] = a
        m = PixelMask.from_dense(dense)
        d = rng.integers(-4, 5, size=2)
        assert shape_preservation(m, shift(m, d)) == 1.0


def _hist(obs):
    h = TrackHistory()
    for t, mask in obs:
        h.add(1, t, inst(mask))
    return h


def test_deviation_examples():
    px = lambda v, h: PixelMask.from_pixels(D, [v], [h])
    h = _hist([(1, px(0, 0)), (2, px(1, 0)), (3, px(2, 1))])
    d_c, d_s, ok = center_and_size_deviation(h, 1, 3)
    assert ok and d_c == pytest.approx(1.0) and d_s == 0.0
    h = _hist([(1, rect(D, 0, 0, 2, 5)), (2, rect(D, 0, 0, 3, 4)), (3, rect(D, 0, 0, 4, 5))])
    assert center_and_size_deviation(h, 1, 3)[1] == pytest.approx(6.0)
    h = _hist([(t, rect(D, 1 + t, 2 + 2 * t, 4, 4)) for t in range(1, 7)])
    d_c, d_s, ok = center_and_size_deviation(h, 1, 6)
    assert ok and d_c == pytest.approx(0, abs=1e-12) and d_s == pytest.approx(0, abs=1e-12)
    h = _hist([(5, rect(D, 0, 0, 2, 2)), (6, rect(D, 0, 0, 2, 2))])
    assert center_and_size_deviation(h, 1, 6) == (0.0, 0.0, False)


def _gt(*masks, cls=1):
    return GroundTruthFrame(1, [GTInstance(k, cls, m) for k, m in enumerate(masks)])


def test_gt_class_ratios():
    assert gt_class_ratios([_gt(rect(D, 0, 0, 2, 5), rect(D, 5, 5, 3, 5))]) == {1: pytest.approx(0.5)}
    assert gt_class_ratios([_gt(rect(D, 0, 0, 4, 4))]) == {1: 1.0}
    with pytest.raises(ValueError, match=r"\[2\]"):
        gt_class_ratios([_gt(rect(D, 0, 0, 4, 4))], classes=[1, 2])


def test_ratio_metric():
    big = FrameDims(100, 100)
    assert ratio_metric(inst(rect(big, 0, 0, 30, 60)), {1: 0.25}) == pytest.approx(2.0)
    assert ratio_metric(inst(rect(big, 0, 0, 10, 10)), {1: 2.0}) == pytest.approx(0.5)
    assert ratio_metric(inst(rect(big, 0, 0, 10, 20)), {1: 0.5}) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ratio_metric(inst(rect(big, 0, 0, 10, 10), cls=3), {1: 2.0})
    # scale invariance of the bounding box ratio
    assert ratio_metric(inst(rect(big, 0, 0, 12, 18)), {1: 0.5}) == ratio_metric(
        inst(rect(big, 0, 0, 24, 36)), {1: 0.5}
    )


def _im(track, t, val):
    return InstanceMetrics("s", track, t, 1, 1, {"a": float(val), "b": float(-val)})


def test_assemble_nc0_is_single_frame():
    rows = assemble_timeseries([_im(1, 3, 7)], 0)
    assert rows[0].values.tolist() == [[7, -7]] and rows[0].present.tolist() == [True]


def test_assemble_padding_rules():
    (row,) = assemble_timeseries([_im(1, 9, 4)], 5)
    assert row.values[:, 0].tolist() == [4] * 6
    assert row.present.tolist() == [True] + [False] * 5
    rows = assemble_timeseries([_im(1, 3, 1), _im(1, 5, 2)], 2)
    row = [r for r in rows if r.frame == 5][0]
    assert row.values[:, 0].tolist() == [2, 1, 1]
    assert row.present.tolist() == [True, False, True]
    rec = row.record()
    assert list(rec)[:5] == ["sequence", "track_id", "frame", "local_id", "class"]
    assert rec["a_1"] == 1.0 and rec["present_1"] == 0
    with pytest.raises(ValueError):
        assemble_timeseries([_im(1, 3, 1)], 11)


def test_compute_metrics_on_linear_track_is_pure():
    dims = FrameDims(40, 60)
    frames = [[(1, rect(dims, 5 + t, 5 + 2 * t, 6, 8), 0.7)] for t in range(7)]
    seq = make_sequence(dims, frames)
    tracked, hist = track_sequence(seq, return_history=True)
    m1 = compute_metrics(seq, tracked, hist, ratios={1: 1.0})
    m2 = compute_metrics(seq, tracked, hist, ratios={1: 1.0})
    assert [m.values for m in m1] == [m.values for m in m2]
    assert m1[0].values["f"] == 0.0
    for m in m1[1:]:
        assert m.values["f"] == 1.0
        assert m.values["d_c"] == pytest.approx(0, abs=1e-9) and m.values["d_s"] == pytest.approx(0, abs=1e-9)
        assert m.values["r"] == pytest.approx(6 / 8)
        assert m.values["s"] == 0.7
