"""Shared test oracles: exact merge-tree enumeration and cluster fixtures."""
from __future__ import annotations

import numpy as np

from hico import compressor


def partitions_into_k(n: int, k: int):
    """Yield every set partition of range(n) into exactly k non-empty groups.

    Any sequence of pairwise merges that ends with k tokens induces such a
    partition, so minimizing over partitions is minimizing over merge trees.
    """

    def rec(i, groups):
        if i == n:
            if len(groups) == k:
                yield [list(g) for g in groups]
            return
        for g in groups:
            g.append(i)
            yield from rec(i + 1, groups)
            g.pop()
        if len(groups) < k:
            groups.append([i])
            yield from rec(i + 1, groups)
            groups.pop()

    yield from rec(0, [])


def within_merge_variance(vecs: np.ndarray, groups) -> float:
    """Sum of squared deviations of each group's members from its mean."""
    total = 0.0
    for g in groups:
        pts = vecs[list(g)]
        total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def best_merge_variance(vecs: np.ndarray, k: int) -> float:
    return min(
        within_merge_variance(vecs, g) for g in partitions_into_k(len(vecs), k)
    )


def tome_groups(vecs: np.ndarray, target: int):
    tokens = [
        compressor.MergedToken(vector=v, size=1, sources=frozenset({(0, 0, i)}))
        for i, v in enumerate(vecs)
    ]
    merged = compressor.tome_merge(tokens, target)
    return [[src[2] for src in t.sources] for t in merged]


def cluster_vectors(rng: np.random.Generator, n: int, d: int, k: int, noise: float):
    """Well-separated orthogonal centroids over balanced contiguous blocks."""
    scales = rng.uniform(1.0, 3.0, size=k)
    centroids = np.zeros((k, d))
    for i in range(k):
        centroids[i, i] = scales[i]
    labels = (np.arange(n) * k) // n
    vecs = centroids[labels]
    if noise:
        vecs = vecs + noise * rng.standard_normal((n, d))
    return vecs
