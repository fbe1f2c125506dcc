"""Perforated block sketching.

Builds the structured random sketching matrices the peeling algorithms push
through the operator: a block row-wise Kronecker product ("bullet"), a 0/1
selector with one nonzero per row (CountSketch), its parity-masked pair, and
the randomly perforated Gaussian family assembled from both.

Block indices are 0-based in code; a block row is "odd" in the 1-based sense
of the sketch layout exactly when its 0-based index is even.  The plus family
keeps those rows and zeroes the rest; the minus family does the opposite.
"""

from dataclasses import dataclass

import numpy as np

from .rng import seed_sequence


def block_is_plus(i: int) -> bool:
    """True when 0-based block row i carries a Gaussian block in the plus
    sketch (1-based odd rows)."""
    return i % 2 == 0


def bullet(X, Y) -> np.ndarray:
    """Block row-wise Kronecker product.

    For X (p, v) and Y (p*u, t) viewed as p stacked u-row blocks Y_i, the
    result is (p*u, v*t) with block (i, j) equal to X[i, j] * Y_i.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2:
        raise ValueError("bullet needs two matrices")
    p, v = X.shape
    pu, t = Y.shape
    if pu % p != 0:
        raise ValueError(f"row count {pu} not divisible by {p}")
    u = pu // p
    out = X[:, None, :, None] * Y.reshape(p, u, 1, t)
    return out.reshape(pu, v * t)


@dataclass(frozen=True)
class BlockSelector:
    """d x t binary selector; ``cols[i]`` is the column holding row i's
    nonzero in the underlying CountSketch draw (rows masked off by a
    perforation keep their assignment but have an all-zero row)."""

    entries: np.ndarray
    cols: np.ndarray

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def t(self) -> int:
        return self.entries.shape[1]


def sample_countsketch(d: int, t: int, rng: np.random.Generator) -> BlockSelector:
    """Each row has a single 1 in a uniformly random column."""
    if d < 1 or t < 1:
        raise ValueError("selector dimensions must be >= 1")
    cols = rng.integers(0, t, size=d)
    entries = np.zeros((d, t))
    entries[np.arange(d), cols] = 1.0
    return BlockSelector(entries=entries, cols=cols)


def sample_perf_countsketch(d, t, rng) -> tuple[BlockSelector, BlockSelector]:
    """One CountSketch draw masked into a (plus, minus) pair: plus zeroes the
    1-based even rows, minus the odd ones, and plus + minus restores the draw."""
    if d % 2 != 0:
        raise ValueError(f"perforated selector needs even d, got {d}")
    base = sample_countsketch(d, t, rng)
    odd_mask = (np.arange(d) % 2 == 0).astype(float)[:, None]
    plus = BlockSelector(entries=base.entries * odd_mask, cols=base.cols)
    minus = BlockSelector(entries=base.entries * (1.0 - odd_mask), cols=base.cols)
    return plus, minus


@dataclass(frozen=True)
class SketchFamily:
    """One level's perforated sketch bundle.

    ``gaussian_blocks[i]`` is the (n/d, s) block shared by both assembled
    sketches; ``assembled_plus``/``assembled_minus`` are the n x (s*t)
    matrices selector_plus . stacked / selector_minus . stacked.
    """

    selector_plus: BlockSelector
    selector_minus: BlockSelector
    gaussian_blocks: list
    assembled_plus: np.ndarray
    assembled_minus: np.ndarray

    @property
    def n(self) -> int:
        return self.assembled_plus.shape[0]

    @property
    def d(self) -> int:
        return self.selector_plus.d

    @property
    def s(self) -> int:
        return self.gaussian_blocks[0].shape[1]

    @property
    def t(self) -> int:
        return self.selector_plus.t

    @property
    def cols(self) -> np.ndarray:
        return self.selector_plus.cols


def sample_rand_perf_gaussian(n, d, s, t, seed_seq) -> SketchFamily:
    """Randomly perforated Gaussian family.

    ``seed_seq`` is a numpy SeedSequence (or anything accepted by it); the
    selector and each Gaussian block draw from disjoint child streams, so a
    family is reproducible without replaying anything else.
    """
    if n % d != 0:
        raise ValueError(f"{d} block rows do not divide n={n}")
    if d % 2 != 0:
        raise ValueError(f"perforation needs an even block count, got {d}")
    if s < 1 or t < 1:
        raise ValueError("sketch width and column count must be >= 1")
    if not isinstance(seed_seq, np.random.SeedSequence):
        seed_seq = np.random.SeedSequence(seed_seq)
    children = seed_seq.spawn(d + 1)
    plus, minus = sample_perf_countsketch(d, t, np.random.default_rng(children[0]))
    m = n // d
    blocks = [
        np.random.default_rng(children[i + 1]).standard_normal((m, s))
        for i in range(d)
    ]
    stacked = np.concatenate(blocks, axis=0)
    return SketchFamily(
        selector_plus=plus,
        selector_minus=minus,
        gaussian_blocks=blocks,
        assembled_plus=bullet(plus.entries, stacked),
        assembled_minus=bullet(minus.entries, stacked),
    )


def family_stream_key(seed: int, level: int, role: int) -> np.random.SeedSequence:
    """SeedSequence for the (level, role) sketch family under ``seed``."""
    return seed_sequence(seed, level, role)
