import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dover.video import SynthSpec, Video, synth_video
from dover.views import (ViewConfig, aesthetic_pair, aesthetic_view, clip_starts, decompose, fragment_source,
                         mosaic, overdownsampled_view, save_views, sparse_frame_indices, technical_view)

from conftest import constant_video


def segment_oracle(T, N):
    """Brute-force segment enumeration: midpoint of each segment or its lower bound if empty."""
    out = []
    for j in range(N):
        members = [t for t in range(T) if j * T < (t + 1) * N <= (j + 1) * T]
        lo = (j * T) // N
        out.append(members[len(members) // 2] if members else min(lo, T - 1))
    return out


def test_sparse_identity():
    assert sparse_frame_indices(32, 32) == list(range(32))


def test_sparse_upper_median():
    assert sparse_frame_indices(64, 32) == list(range(1, 64, 2))


def test_sparse_short_video_repeats():
    idx = sparse_frame_indices(8, 32)
    assert sorted(set(idx)) == list(range(8))
    assert all(idx.count(i) == 4 for i in range(8))
    assert idx == sorted(idx)


@given(st.integers(1, 80), st.integers(1, 40))
@settings(max_examples=200, deadline=None)
def test_sparse_matches_enumeration(T, N):
    assert sparse_frame_indices(T, N, "infer") == segment_oracle(T, N)


@given(st.integers(1, 80), st.integers(1, 40), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_sparse_train_stays_in_segments(T, N, seed):
    idx = sparse_frame_indices(T, N, "train", np.random.default_rng(seed))
    for j, i in enumerate(idx):
        lo, hi = (j * T) // N, ((j + 1) * T) // N
        assert (lo <= i < hi) if hi > lo else i == min(lo, T - 1)


def test_aesthetic_identity_when_already_sized(rng):
    cfg = ViewConfig(aes_size=16, aes_over_size=8, aes_frames=4, mode="infer")
    v = Video(rng.uniform(size=(4, 16, 16, 3)))
    np.testing.assert_array_equal(aesthetic_view(v, cfg).data, v.frames)


def test_aesthetic_constant_video():
    cfg = ViewConfig(aes_size=24, aes_over_size=12, aes_frames=3, mode="infer")
    a = aesthetic_view(constant_video(0.3, H=50, W=70), cfg)
    assert a.shape == (3, 24, 24, 3)
    np.testing.assert_allclose(a.data, 0.3, atol=1e-12)


def test_aesthetic_linear_ramp_448_to_224():
    ramp = np.broadcast_to(np.arange(448)[None, None, :, None] / 447.0, (1, 448, 448, 1))
    cfg = ViewConfig(aes_frames=1, mode="infer")
    out = aesthetic_view(Video(ramp), cfg).data[0, :, :, 0]
    x = np.arange(224)
    expected = (2 * x + 0.5) / 447.0  # output pixel centre maps to source coordinate 2x + 0.5
    interior = slice(8, 216)
    np.testing.assert_allclose(out[:, interior], np.broadcast_to(expected[interior], (224, 208)), atol=1e-6)


def test_overdownsampled_ratio_for_1448():
    v = constant_video(0.6, T=1, H=1448, W=1448, C=1)
    o = overdownsampled_view(v, ViewConfig(aes_frames=1, mode="infer"))
    assert o.shape == (1, 128, 128, 1)
    ratio = o.provenance["scale_ratio"][0]
    assert ratio == pytest.approx(11.3125)
    assert ratio <= 11.3 + 0.05
    np.testing.assert_allclose(o.data, 0.6, atol=1e-12)


def test_overdownsampled_shares_frames(small_video):
    cfg = ViewConfig(aes_size=32, aes_over_size=16, aes_frames=3, mode="train")
    a, o = aesthetic_pair(small_video, cfg, np.random.default_rng(0))
    assert a.provenance["frame_indices"] == o.provenance["frame_indices"]
    # without a pair the same generator state gives the same indices
    o2 = overdownsampled_view(small_video, cfg, np.random.default_rng(0))
    assert o2.provenance["frame_indices"] == a.provenance["frame_indices"]


def test_aes_over_must_be_smaller():
    with pytest.raises(ValueError):
        ViewConfig(aes_size=64, aes_over_size=64)


def check_fragments(v: Video, views, cfg: ViewConfig):
    g, s = cfg.frag_grid, cfg.frag_patch
    for view in views:
        src = fragment_source(v, view)
        h, w = src.shape[1:3]
        offsets = np.array(view.provenance["offsets"])
        for u in range(g):
            for q in range(g):
                y, x = offsets[u, q]
                # offsets stay inside the (u, q) cell, which is what makes the mosaic grid-ordered
                assert (u * h) // g <= y and y + s <= ((u + 1) * h) // g
                assert (q * w) // g <= x and x + s <= ((q + 1) * w) // g
                patch = view.data[:, u * s:(u + 1) * s, q * s:(q + 1) * s]
                assert np.array_equal(patch, src[:, y:y + s, x:x + s])


def test_fragments_448_grid():
    v = synth_video(SynthSpec("random_texture", T=2, H=448, W=448, seed=1))
    cfg = ViewConfig(tech_clip_len=2, mode="train")
    views = technical_view(v, cfg, 5)
    assert len(views) == 1 and views[0].shape == (2, 224, 224, 3)
    off = np.array(views[0].provenance["offsets"])
    cells = np.arange(7)[:, None] * 64
    assert np.all(off[..., 0] - cells >= 0) and np.all(off[..., 0] - cells <= 32)
    check_fragments(v, views, cfg)


def test_fragments_identity_at_224():
    v = synth_video(SynthSpec("random_texture", T=3, H=224, W=224, seed=2))
    cfg = ViewConfig(tech_clip_len=3, tech_clips_infer=1, mode="infer")
    (view,) = technical_view(v, cfg)
    np.testing.assert_array_equal(view.data, v.frames)


def test_fragments_upscale_small_source():
    v = synth_video(SynthSpec("random_texture", T=2, H=20, W=30, seed=2))
    cfg = ViewConfig(frag_grid=4, frag_patch=8, tech_clip_len=2, mode="infer", tech_clips_infer=2)
    views = technical_view(v, cfg)
    assert views[0].provenance["resized_shape"] == [32, 48]
    check_fragments(v, views, cfg)


def test_infer_clip_starts():
    cfg = ViewConfig(tech_clip_len=8, tech_clips_infer=3, mode="infer")
    assert clip_starts(32, cfg) == [0, 12, 24]
    assert clip_starts(4, cfg) == [0, 0, 0]


def test_short_video_clip_wraps(small_video):
    cfg = ViewConfig(frag_grid=2, frag_patch=8, tech_clip_len=10, mode="infer", tech_clips_infer=1)
    (view,) = technical_view(small_video, cfg)
    assert view.provenance["frame_indices"] == [i % 6 for i in range(10)]
    check_fragments(small_video, [view], cfg)


def test_views_deterministic(small_video):
    cfg = ViewConfig(aes_size=32, aes_over_size=16, aes_frames=4, frag_grid=2, frag_patch=16, tech_clip_len=4)
    a = decompose(small_video, cfg, 11)
    b = decompose(small_video, cfg, 11)
    for kind in a:
        for x, y in zip(a[kind], b[kind]):
            assert x.data.tobytes() == y.data.tobytes()
            assert x.provenance == y.provenance
    assert set(decompose(small_video, cfg.with_mode("infer")).keys()) == {"aesthetic", "technical"}


def test_cell_offsets_independent_of_other_cells(small_video):
    # grid size changes which cells exist, but a clip's cell (0, 0) rng key is unchanged
    cfg = ViewConfig(frag_grid=2, frag_patch=8, tech_clip_len=2, mode="infer", tech_clips_infer=1)
    a = technical_view(small_video, cfg, 3)[0].provenance["offsets"]
    b = technical_view(small_video, cfg, 3)[0].provenance["offsets"]
    assert a == b


def test_mosaic_and_save(tmp_path, small_video):
    cfg = ViewConfig(aes_size=16, aes_over_size=8, aes_frames=4, frag_grid=2, frag_patch=8, tech_clip_len=3)
    views = decompose(small_video, cfg, 0)
    img = mosaic(views["aesthetic"][0])
    assert img.shape == (32, 32, 3) and img.dtype == np.uint8
    written = save_views(views, tmp_path)
    assert len(written) == 2 * sum(len(v) for v in views.values())
    meta = json.loads((tmp_path / "technical_0.json").read_text())
    assert meta["kind"] == "technical" and "offsets" in meta["provenance"]
