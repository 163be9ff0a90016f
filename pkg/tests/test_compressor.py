import math

import numpy as np
import pytest

from helpers import best_merge_variance, cluster_vectors, tome_groups, within_merge_variance
from hico import compressor as cp
from hico.errors import DomainError


def token(vec, src):
    return cp.MergedToken(
        vector=np.asarray(vec, dtype=float), size=1, sources=frozenset({src})
    )


def fresh_tokens(vecs):
    return [token(v, (0, 0, i)) for i, v in enumerate(vecs)]


def rand_grid(seed, shape=(4, 4, 4, 8)):
    return cp.TokenGrid(np.random.default_rng(seed).standard_normal(shape))


# ---------------------------------------------------------------------------
# grids and clips


def test_grid_rejects_bad_shapes():
    with pytest.raises(DomainError):
        cp.TokenGrid(np.zeros((0, 2, 2, 4)))
    with pytest.raises(DomainError):
        cp.TokenGrid(np.zeros((2, 2, 4)))
    bad = np.zeros((1, 1, 1, 2))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(DomainError):
        cp.TokenGrid(bad)


@pytest.mark.parametrize(
    "frames,clip_len,sizes",
    [(8, 4, [4, 4]), (10, 4, [4, 4, 2]), (4, 4, [4]), (3, 5, [3])],
)
def test_segment_clips(frames, clip_len, sizes):
    grid = cp.TokenGrid(np.zeros((frames, 2, 2, 3)))
    clips = cp.segment_clips(grid, clip_len)
    assert [c.grid.frames for c in clips] == sizes
    spans = [c.frame_span for c in clips]
    assert spans[0][0] == 0 and spans[-1][1] == frames
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))


# ---------------------------------------------------------------------------
# st_mix


def test_st_mix_identical_tokens_fixed_point():
    v = np.array([1.0, -2.0, 0.5])
    grid = cp.TokenGrid(np.tile(v, (2, 2, 2, 1)))
    clip = cp.Clip(0, grid, (0, 2))
    out = cp.st_mix(clip, temperature=1.0)
    assert np.allclose(out.grid.data, grid.data)


def test_st_mix_single_token_unchanged():
    grid = cp.TokenGrid(np.arange(4.0).reshape(1, 1, 1, 4))
    out = cp.st_mix(cp.Clip(0, grid, (0, 1)), temperature=0.7)
    assert np.allclose(out.grid.data, grid.data)


def test_st_mix_high_temperature_approaches_mean():
    # Closed form for two orthonormal tokens: the score rows are
    # [a, 0] and [0, a] with a = 1 / (temperature * sqrt(dim)), so each
    # output is softmax([a, 0]) . (x0, x1); as temperature grows both
    # weights tend to 1/2 and the outputs tend to the token mean.
    x0 = np.array([1.0, 0.0])
    x1 = np.array([0.0, 1.0])
    temperature = 1e6
    grid = cp.TokenGrid(np.stack([x0, x1]).reshape(2, 1, 1, 2))
    out = cp.st_mix(cp.Clip(0, grid, (0, 2)), temperature=temperature).grid.data
    a = 1.0 / (temperature * math.sqrt(2))
    w = math.exp(a) / (math.exp(a) + 1.0)
    expected0 = w * x0 + (1 - w) * x1
    assert np.allclose(out[0, 0, 0], expected0, atol=1e-12)
    mean = (x0 + x1) / 2
    assert np.linalg.norm(out[0, 0, 0] - mean) < 1e-5
    assert np.linalg.norm(out[1, 0, 0] - mean) < 1e-5


def test_st_mix_preserves_shape_and_finiteness():
    grid = rand_grid(3, (3, 2, 5, 7))
    out = cp.st_mix(cp.Clip(0, grid, (0, 3)), temperature=0.5)
    assert out.grid.data.shape == grid.data.shape
    assert np.all(np.isfinite(out.grid.data))


def test_st_mix_rejects_bad_temperature():
    with pytest.raises(DomainError):
        cp.st_mix(cp.Clip(0, rand_grid(0, (1, 2, 2, 3)), (0, 1)), temperature=0.0)


# ---------------------------------------------------------------------------
# tome_merge


def test_tome_identical_vectors_collapse():
    out = cp.tome_merge(fresh_tokens([[2.0, 3.0]] * 4), 1)
    assert len(out) == 1
    assert out[0].size == 4
    assert np.allclose(out[0].vector, [2.0, 3.0])


def test_tome_pairs_by_similarity():
    vecs = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
    out = cp.tome_merge(fresh_tokens(vecs), 2)
    assert [t.size for t in out] == [2, 2]
    assert np.allclose(out[0].vector, [1.0, 0.0])
    assert np.allclose(out[1].vector, [0.0, 1.0])
    assert out[0].sources == {(0, 0, 0), (0, 0, 1)}
    assert out[1].sources == {(0, 0, 2), (0, 0, 3)}


def test_tome_size_weighted_mean():
    a = cp.MergedToken(np.array([0.0]), 1, frozenset({(0, 0, 0)}))
    b = cp.MergedToken(
        np.array([4.0]), 3, frozenset({(0, 0, 1), (0, 0, 2), (0, 0, 3)})
    )
    out = cp.tome_merge([a, b], 1)
    assert out[0].size == 4
    assert np.allclose(out[0].vector, [3.0])


def test_tome_identity_when_target_equals_count():
    tokens = fresh_tokens(np.random.default_rng(5).standard_normal((6, 3)))
    out = cp.tome_merge(tokens, 6)
    assert [t.min_source for t in out] == [t.min_source for t in tokens]
    for before, after in zip(tokens, out):
        assert np.array_equal(before.vector, after.vector)
        assert before.size == after.size


def test_tome_zero_norm_vectors_score_zero():
    vecs = [[0.0, 0.0], [0.0, 0.0], [3.0, 0.0], [3.0, 0.0]]
    out = cp.tome_merge(fresh_tokens(vecs), 2)
    assert [t.size for t in out] == [2, 2]
    assert np.allclose(out[0].vector, [0.0, 0.0])
    assert np.allclose(out[1].vector, [3.0, 0.0])


def test_tome_rejects_bad_targets():
    tokens = fresh_tokens([[1.0], [2.0]])
    with pytest.raises(DomainError):
        cp.tome_merge(tokens, 3)
    with pytest.raises(DomainError):
        cp.tome_merge(tokens, 0)


def test_tome_output_sorted_by_min_source():
    rng = np.random.default_rng(11)
    for _ in range(20):
        tokens = fresh_tokens(rng.standard_normal((12, 4)))
        out = cp.tome_merge(tokens, int(rng.integers(1, 12)))
        keys = [t.min_source for t in out]
        assert keys == sorted(keys)


def test_tome_conserves_mass():
    rng = np.random.default_rng(7)
    for _ in range(25):
        vecs = rng.standard_normal((24, 5))
        out = cp.tome_merge(fresh_tokens(vecs), int(rng.integers(1, 24)))
        merged_sum = sum(t.size * t.vector for t in out)
        assert np.allclose(merged_sum, vecs.sum(axis=0), rtol=1e-9, atol=1e-9)
        assert sum(t.size for t in out) == 24


def test_tome_tracks_variance_oracle_on_clustered_tokens():
    for seed in range(40):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 9))
        d = int(rng.integers(2, 5))
        k = int(rng.integers(2, min(d, n - 1) + 1))
        vecs = cluster_vectors(rng, n, d, k, noise=0.0 if seed % 2 else 0.02)
        got = within_merge_variance(vecs, tome_groups(vecs, k))
        best = best_merge_variance(vecs, k)
        assert got <= 1.10 * best + 1e-9


# ---------------------------------------------------------------------------
# downsampling


def test_spatial_block_means():
    frame = np.arange(4 * 4 * 2, dtype=float).reshape(4, 4, 2)
    out = cp.spatial_downsample(frame, 2, frame_index=3)
    assert len(out) == 4
    for t, (br, bc) in zip(out, [(0, 0), (0, 1), (1, 0), (1, 1)]):
        block = frame[br * 2 : br * 2 + 2, bc * 2 : bc * 2 + 2].reshape(-1, 2)
        assert np.allclose(t.vector, block.mean(axis=0))
        assert t.size == 4
        assert all(src[0] == 3 for src in t.sources)


def test_spatial_sixteen_tokens_per_frame():
    frame = np.random.default_rng(0).standard_normal((16, 16, 6))
    out = cp.spatial_downsample(frame, 4)
    assert len(out) == 16
    assert all(t.size == 16 for t in out)


def test_spatial_constant_grid():
    frame = np.full((4, 4, 3), 2.5)
    out = cp.spatial_downsample(frame, 2)
    assert all(np.allclose(t.vector, 2.5) for t in out)
    assert all(t.size == 4 for t in out)


def test_spatial_rejects_nondivisible_factor():
    with pytest.raises(DomainError):
        cp.spatial_downsample(np.zeros((4, 4, 2)), 3)


def test_uneven_token_count():
    grid = cp.TokenGrid(np.random.default_rng(1).standard_normal((4, 16, 16, 3)))
    clip = cp.Clip(0, grid, (0, 4))
    out = cp.uneven_downsample(clip, 2, 8)
    assert len(out) == 64 + 3 * 4


def test_uneven_equal_factors_matches_spatial():
    grid = rand_grid(2, (3, 4, 4, 5))
    clip = cp.Clip(0, grid, (0, 3))
    uneven = cp.uneven_downsample(clip, 2, 2)
    spatial = []
    for f in range(3):
        spatial.extend(cp.spatial_downsample(grid.data[f], 2, frame_index=f))
    assert len(uneven) == len(spatial)
    for a, b in zip(uneven, spatial):
        assert np.allclose(a.vector, b.vector)
        assert a.sources == b.sources


def test_uneven_single_frame_matches_spatial():
    grid = rand_grid(4, (1, 4, 4, 3))
    clip = cp.Clip(0, grid, (0, 1))
    uneven = cp.uneven_downsample(clip, 2, 4)
    spatial = cp.spatial_downsample(grid.data[0], 2, frame_index=0)
    for a, b in zip(uneven, spatial):
        assert np.allclose(a.vector, b.vector)


def test_uneven_rejects_inverted_factors():
    clip = cp.Clip(0, rand_grid(5, (2, 4, 4, 3)), (0, 2))
    with pytest.raises(DomainError):
        cp.uneven_downsample(clip, 4, 2)


# ---------------------------------------------------------------------------
# resampler


def test_resampler_single_token_identity():
    t = np.array([[1.0, 2.0, 3.0]])
    out = cp.resampler_forward(t, t)
    assert np.allclose(out, t)


def test_resampler_identical_inputs():
    v = np.array([0.5, -1.0])
    tokens = np.tile(v, (7, 1))
    queries = np.random.default_rng(2).standard_normal((3, 2))
    out = cp.resampler_forward(tokens, queries)
    assert out.shape == (3, 2)
    assert np.allclose(out, v)


def test_resampler_low_temperature_selects_aligned_input():
    tokens = np.array([[1.0, 0.0], [0.0, 1.0]])
    queries = np.array([[1.0, 0.0]])
    out = cp.resampler_forward(tokens, queries, temperature=1e-3)
    assert np.allclose(out, [[1.0, 0.0]], atol=1e-9)


def test_resampler_dimension_mismatch():
    with pytest.raises(DomainError):
        cp.resampler_forward(np.zeros((2, 3)), np.zeros((1, 4)))


# ---------------------------------------------------------------------------
# compress_clip / concat / compress_video


def test_compress_clip_merge_budget():
    grid = cp.TokenGrid(np.random.default_rng(9).standard_normal((4, 16, 16, 8)))
    clip = cp.segment_clips(grid, 4)[0]
    out = cp.compress_clip(clip, cp.ConnectorConfig(kind="merge", budget=64))
    assert len(out.tokens) == 64
    assert sum(t.size for t in out.tokens) == 1024


def test_compress_clip_budget_equals_count_is_identity():
    grid = rand_grid(10, (2, 2, 2, 4))
    clip = cp.segment_clips(grid, 2)[0]
    out = cp.compress_clip(clip, cp.ConnectorConfig(kind="merge", budget=8, clip_len=2))
    flat = grid.data.reshape(-1, 4)
    assert len(out.tokens) == 8
    for t, v in zip(out.tokens, flat):
        assert np.array_equal(t.vector, v)
        assert t.size == 1


def test_compress_clip_merge_with_st_mix():
    grid = rand_grid(12, (4, 4, 4, 6))
    clip = cp.segment_clips(grid, 4)[0]
    cfg = cp.ConnectorConfig(kind="merge", budget=8, st_temperature=1.0)
    out = cp.compress_clip(clip, cfg)
    assert len(out.tokens) == 8
    assert sum(t.size for t in out.tokens) == 64


def test_compress_clip_resampler_budget():
    grid = rand_grid(13, (4, 4, 4, 6))
    clip = cp.segment_clips(grid, 4)[0]
    out = cp.compress_clip(clip, cp.ConnectorConfig(kind="resampler", queries=5, budget=5))
    assert len(out.tokens) == 5
    assert all(t.size == 64 for t in out.tokens)


def test_concat_context_offsets():
    grid = rand_grid(14, (8, 4, 4, 3))
    clips = cp.segment_clips(grid, 4)
    cfg = cp.ConnectorConfig(kind="merge", budget=64 // 8)
    compressed = [cp.compress_clip(c, cfg) for c in clips]
    ctx = cp.concat_context(compressed)
    assert ctx.clip_offsets == [0, 8]
    assert len(ctx.tokens) == 16


def test_concat_rejects_unordered_clips():
    grid = rand_grid(15, (8, 2, 2, 3))
    clips = cp.segment_clips(grid, 4)
    cfg = cp.ConnectorConfig(kind="merge", budget=4)
    compressed = [cp.compress_clip(c, cfg) for c in clips]
    with pytest.raises(DomainError):
        cp.concat_context(list(reversed(compressed)))


def test_compress_video_scales_final_clip_budget():
    grid = rand_grid(16, (10, 4, 4, 3))
    ctx = cp.compress_video(grid, cp.ConnectorConfig(kind="merge", budget=8, clip_len=4))
    # clips of 4, 4, 2 frames -> budgets 8, 8, ceil(8 * 2/4) = 4
    assert ctx.clip_offsets == [0, 8, 16]
    assert len(ctx.tokens) == 20
    assert sum(t.size for t in ctx.tokens) == grid.token_count


@pytest.mark.parametrize("kind", ["merge", "spatial", "uneven"])
def test_compress_video_conserves_mass(kind):
    cfg = cp.ConnectorConfig(
        kind=kind, budget=8, clip_len=4, factor=2, f_first=2, f_rest=4
    )
    for seed in range(10):
        grid = rand_grid(100 + seed)
        ctx = cp.compress_video(grid, cfg)
        assert cp.conservation_residual(grid, ctx) < 1e-6


def test_compression_ratio_strings():
    assert f"{100 * 16 / 729:.2f}" == "2.19"
    assert f"{100 * 64 / 1024:.2f}" == "6.25"
