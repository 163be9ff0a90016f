"""Clip segmentation and clip-level token compression.

A video's per-frame token grids are cut into short clips and each clip is
squeezed down to a small token budget by one of four connector families:

* ``merge``     — iterative bipartite merging of cosine-similar tokens,
                  optionally preceded by a parameter-free spatio-temporal
                  attention mix across the clip.
* ``spatial``   — per-frame block-mean pooling by a fixed factor.
* ``uneven``    — block-mean pooling with a fine factor on the first frame
                  of the clip and a coarse factor on the rest.
* ``resampler`` — a single cross-attention layer reading the clip through a
                  fixed set of query vectors.

Merge, spatial and uneven outputs carry provenance: each output token
records which (frame, row, col) source tokens it absorbed and its vector is
the size-weighted mean of those sources, so token mass is conserved.
Resampler outputs are attention-weighted blends of the whole clip and carry
the full clip as provenance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError

Source = tuple[int, int, int]


@dataclass
class TokenGrid:
    """Per-frame spatial grid of feature vectors, shape (frames, rows, cols, dim)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise DomainError(f"token grid must be 4-D, got shape {arr.shape}")
        if any(s < 1 for s in arr.shape):
            raise DomainError(f"all grid dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("token grid contains non-finite values")
        self.data = arr

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def dim(self) -> int:
        return self.data.shape[3]

    @property
    def token_count(self) -> int:
        return self.frames * self.rows * self.cols


@dataclass
class Clip:
    """A contiguous frame slice of a sampled video.

    ``frame_span`` is half-open (start, end) into the sampled frame sequence;
    consecutive clips tile it without gaps or overlap.
    """

    clip_index: int
    grid: TokenGrid
    frame_span: tuple[int, int]

    def __post_init__(self) -> None:
        start, end = self.frame_span
        if end - start != self.grid.frames:
            raise DomainError("frame_span length must match grid frames")


@dataclass(eq=False)
class MergedToken:
    """A token plus how many source tokens it absorbed and which ones."""

    vector: np.ndarray
    size: int
    sources: frozenset[Source]

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1:
            raise DomainError("token vector must be 1-D")
        if self.size < 1 or self.size != len(self.sources):
            raise DomainError("token size must equal the number of sources")

    @property
    def min_source(self) -> Source:
        return min(self.sources)


@dataclass
class CompressedClip:
    clip_index: int
    tokens: list[MergedToken]
    budget: int


@dataclass
class VisualContext:
    """Concatenation of per-clip compressed tokens, in clip order."""

    tokens: list[MergedToken]
    clip_offsets: list[int]

    def vectors(self) -> np.ndarray:
        return np.stack([t.vector for t in self.tokens])

    @property
    def dim(self) -> int:
        return self.tokens[0].vector.shape[0]


CONNECTOR_KINDS = ("merge", "spatial", "uneven", "resampler")


@dataclass(frozen=True)
class ConnectorConfig:
    """Connector selection plus its per-kind parameters.

    budget / clip_len apply to merge (and queries plays the same role for
    resampler); factor to spatial; f_first / f_rest to uneven. A short final
    clip gets its budget scaled down proportionally to its frame count.
    """

    kind: str = "merge"
    budget: int = 64
    clip_len: int = 4
    st_temperature: float | None = None
    factor: int = 2
    f_first: int = 2
    f_rest: int = 4
    queries: int = 64
    query_seed: int = 0
    weights_path: str | None = None
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in CONNECTOR_KINDS:
            raise DomainError(f"unknown connector kind {self.kind!r}")
        if self.budget < 1 or self.clip_len < 1 or self.queries < 1:
            raise DomainError("budget, clip_len and queries must be >= 1")
        if self.factor < 1 or self.f_first < 1 or self.f_rest < 1:
            raise DomainError("downsampling factors must be >= 1")
        if self.f_first > self.f_rest:
            raise DomainError("f_first must not exceed f_rest")
        if self.st_temperature is not None and self.st_temperature <= 0:
            raise DomainError("st_temperature must be positive")
        if self.temperature <= 0:
            raise DomainError("temperature must be positive")


def grid_tokens(grid: TokenGrid, frame_offset: int = 0) -> list[MergedToken]:
    """Unpack a grid into size-1 tokens in frame-major, row-major order."""
    out = []
    for f in range(grid.frames):
        for r in range(grid.rows):
            for c in range(grid.cols):
                out.append(
                    MergedToken(
                        vector=grid.data[f, r, c],
                        size=1,
                        sources=frozenset({(f + frame_offset, r, c)}),
                    )
                )
    return out


def segment_clips(grid: TokenGrid, clip_len: int) -> list[Clip]:
    """Cut a grid into ceil(frames / clip_len) contiguous clips.

    All clips have clip_len frames except possibly a shorter final one.
    """
    if clip_len < 1:
        raise DomainError("clip_len must be >= 1")
    clips = []
    for i, start in enumerate(range(0, grid.frames, clip_len)):
        end = min(start + clip_len, grid.frames)
        clips.append(
            Clip(
                clip_index=i,
                grid=TokenGrid(grid.data[start:end]),
                frame_span=(start, end),
            )
        )
    return clips


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def st_mix(clip: Clip, temperature: float = 1.0) -> Clip:
    """Mix every token of a clip with all others via self-attention.

    Tokens act as their own queries, keys and values (identity projections):
    out = softmax(X Xᵀ / (temperature * sqrt(dim))) X. As temperature grows
    the output of every token tends to the clip mean; shape is preserved.
    """
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    g = clip.grid
    x = g.data.reshape(-1, g.dim)
    scores = (x @ x.T) / (temperature * math.sqrt(g.dim))
    mixed = _softmax(scores) @ x
    if not np.all(np.isfinite(mixed)):
        raise DomainError("attention mix produced non-finite values")
    return Clip(
        clip_index=clip.clip_index,
        grid=TokenGrid(mixed.reshape(g.data.shape)),
        frame_span=clip.frame_span,
    )


def _unit_rows(vecs: np.ndarray) -> np.ndarray:
    # Zero-norm rows stay zero, giving them cosine similarity 0 to everything.
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return vecs / safe


def tome_merge(tokens: list[MergedToken], target: int) -> list[MergedToken]:
    """Reduce a token list to exactly `target` tokens by similarity merging.

    Each round splits the current tokens by index parity into sets A and B,
    matches every A-token to its most cosine-similar B-token, and merges the
    r = min(count // 2, surplus) highest-similarity pairs into their B-token
    by size-weighted averaging. Ties prefer the smaller index. Survivors are
    re-ordered by smallest source before the next round, which is also the
    final output order.
    """
    if target < 1:
        raise DomainError("target must be >= 1")
    if target > len(tokens):
        raise DomainError(f"target {target} exceeds token count {len(tokens)}")

    current = sorted(tokens, key=lambda t: t.min_source)
    while len(current) > target:
        n = len(current)
        r = min(n // 2, n - target)
        a_pos = list(range(0, n, 2))
        b_pos = list(range(1, n, 2))
        a_vecs = _unit_rows(np.stack([current[i].vector for i in a_pos]))
        b_vecs = _unit_rows(np.stack([current[i].vector for i in b_pos]))
        sims = a_vecs @ b_vecs.T
        best_b = np.argmax(sims, axis=1)
        best_sim = sims[np.arange(len(a_pos)), best_b]

        ranked = sorted(range(len(a_pos)), key=lambda i: (-best_sim[i], i))
        merged_a = ranked[:r]

        survivors = {i: current[i] for i in b_pos}
        for ai in merged_a:
            src = current[a_pos[ai]]
            dst_pos = b_pos[best_b[ai]]
            dst = survivors[dst_pos]
            total = src.size + dst.size
            survivors[dst_pos] = MergedToken(
                vector=(src.size * src.vector + dst.size * dst.vector) / total,
                size=total,
                sources=src.sources | dst.sources,
            )
        for ai in ranked[r:]:
            survivors[a_pos[ai]] = current[a_pos[ai]]

        current = sorted(survivors.values(), key=lambda t: t.min_source)
    return sorted(current, key=lambda t: t.min_source)


def spatial_downsample(
    frame: np.ndarray, factor: int, frame_index: int = 0
) -> list[MergedToken]:
    """Block-mean pool one frame's (rows, cols, dim) grid by `factor`.

    Produces (rows/factor) * (cols/factor) tokens of size factor², in
    row-major block order.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3:
        raise DomainError("frame must have shape (rows, cols, dim)")
    rows, cols, _ = frame.shape
    if rows % factor or cols % factor:
        raise DomainError(
            f"factor {factor} does not divide frame grid {rows}x{cols}"
        )
    out = []
    for br in range(rows // factor):
        for bc in range(cols // factor):
            block = frame[
                br * factor : (br + 1) * factor, bc * factor : (bc + 1) * factor
            ]
            sources = frozenset(
                (frame_index, br * factor + i, bc * factor + j)
                for i in range(factor)
                for j in range(factor)
            )
            out.append(
                MergedToken(
                    vector=block.reshape(-1, frame.shape[2]).mean(axis=0),
                    size=factor * factor,
                    sources=sources,
                )
            )
    return out


def uneven_downsample(clip: Clip, f_first: int, f_rest: int) -> list[MergedToken]:
    """Pool the clip's first frame by f_first and remaining frames by f_rest."""
    if f_first > f_rest:
        raise DomainError("f_first must not exceed f_rest")
    g = clip.grid
    start = clip.frame_span[0]
    out = spatial_downsample(g.data[0], f_first, frame_index=start)
    for f in range(1, g.frames):
        out.extend(spatial_downsample(g.data[f], f_rest, frame_index=start + f))
    return out


def resampler_forward(
    tokens: np.ndarray,
    queries: np.ndarray,
    wk: np.ndarray | None = None,
    wv: np.ndarray | None = None,
    temperature: float = 1.0,
) -> np.ndarray:
    """Single-layer cross-attention: Q queries read N clip tokens.

    K and V are the tokens passed through wk / wv (identity when omitted);
    output is softmax(Q Kᵀ / (temperature * sqrt(d))) V with one row per
    query, regardless of the input length.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if tokens.ndim != 2 or queries.ndim != 2:
        raise DomainError("tokens and queries must be 2-D")
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    k = tokens if wk is None else tokens @ np.asarray(wk, dtype=np.float64)
    v = tokens if wv is None else tokens @ np.asarray(wv, dtype=np.float64)
    if queries.shape[1] != k.shape[1]:
        raise DomainError(
            f"query dim {queries.shape[1]} does not match key dim {k.shape[1]}"
        )
    scores = (queries @ k.T) / (temperature * math.sqrt(k.shape[1]))
    return _softmax(scores) @ v


def _resampler_weights(
    config: ConnectorConfig, dim: int, budget: int
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    if config.weights_path is not None:
        loaded = np.load(config.weights_path)
        queries = np.asarray(loaded["queries"], dtype=np.float64)
        wk = np.asarray(loaded["wk"], dtype=np.float64) if "wk" in loaded else None
        wv = np.asarray(loaded["wv"], dtype=np.float64) if "wv" in loaded else None
        if queries.shape[0] != budget:
            raise DomainError(
                f"weights file provides {queries.shape[0]} queries, need {budget}"
            )
        return queries, wk, wv
    rng = np.random.default_rng(config.query_seed)
    queries = rng.standard_normal((budget, dim)) / math.sqrt(dim)
    return queries, None, None


def _clip_sources(clip: Clip) -> frozenset[Source]:
    start = clip.frame_span[0]
    g = clip.grid
    return frozenset(
        (start + f, r, c)
        for f in range(g.frames)
        for r in range(g.rows)
        for c in range(g.cols)
    )


def compress_clip(clip: Clip, config: ConnectorConfig) -> CompressedClip:
    """Compress one clip with the configured connector.

    For merge and resampler the output length equals the budget exactly; for
    the downsampling kinds it equals the analytic block count.
    """
    if config.kind == "merge":
        source = clip
        if config.st_temperature is not None:
            source = st_mix(clip, config.st_temperature)
        tokens = grid_tokens(source.grid, frame_offset=clip.frame_span[0])
        merged = tome_merge(tokens, config.budget)
        return CompressedClip(clip.clip_index, merged, config.budget)

    if config.kind == "spatial":
        start = clip.frame_span[0]
        tokens = []
        for f in range(clip.grid.frames):
            tokens.extend(
                spatial_downsample(clip.grid.data[f], config.factor, start + f)
            )
        return CompressedClip(clip.clip_index, tokens, len(tokens))

    if config.kind == "uneven":
        tokens = uneven_downsample(clip, config.f_first, config.f_rest)
        return CompressedClip(clip.clip_index, tokens, len(tokens))

    # resampler: the query count is the token budget
    flat = clip.grid.data.reshape(-1, clip.grid.dim)
    queries, wk, wv = _resampler_weights(config, clip.grid.dim, config.queries)
    out = resampler_forward(flat, queries, wk, wv, config.temperature)
    sources = _clip_sources(clip)
    tokens = [
        MergedToken(vector=row, size=len(sources), sources=sources) for row in out
    ]
    return CompressedClip(clip.clip_index, tokens, config.queries)


def concat_context(clips: list[CompressedClip]) -> VisualContext:
    """Concatenate compressed clips in clip order, recording start offsets."""
    if not clips:
        raise DomainError("cannot concatenate zero clips")
    indices = [c.clip_index for c in clips]
    if indices != sorted(indices) or len(set(indices)) != len(indices):
        raise DomainError("clips must be ordered by strictly increasing clip_index")
    tokens: list[MergedToken] = []
    offsets = []
    for c in clips:
        offsets.append(len(tokens))
        tokens.extend(c.tokens)
    return VisualContext(tokens=tokens, clip_offsets=offsets)


def scaled_budget(budget: int, frames_in_clip: int, clip_len: int) -> int:
    """Token budget for a possibly-short clip: ceil(budget * frames / clip_len)."""
    return -(-budget * frames_in_clip // clip_len)


def compress_video(grid: TokenGrid, config: ConnectorConfig) -> VisualContext:
    """Segment a video grid into clips, compress each, and concatenate.

    A short final clip gets a proportionally smaller budget so the average
    tokens-per-frame rate stays constant across the video.
    """
    compressed = []
    for clip in segment_clips(grid, config.clip_len):
        frames = clip.grid.frames
        if config.kind in ("merge", "resampler") and frames < config.clip_len:
            key = "budget" if config.kind == "merge" else "queries"
            clip_cfg = replace(
                config,
                **{key: scaled_budget(getattr(config, key), frames, config.clip_len)},
            )
        else:
            clip_cfg = config
        compressed.append(compress_clip(clip, clip_cfg))
    return concat_context(compressed)


def conservation_residual(inputs: TokenGrid, context: VisualContext) -> float:
    """Relative error between input token mass and size-weighted output mass.

    Zero (up to float noise) for provenance-preserving connectors.
    """
    in_sum = inputs.data.reshape(-1, inputs.dim).sum(axis=0)
    out_sum = np.zeros(context.dim)
    for t in context.tokens:
        out_sum += t.size * t.vector
    denom = max(float(np.linalg.norm(in_sum)), 1e-30)
    return float(np.linalg.norm(out_sum - in_sum)) / denom
