"""Seeded synthetic MCQA data with known per-item answer distributions.

Items are drawn i.i.d., so any calibration/test split of a generated batch is
exchangeable by construction and coverage guarantees can be checked by Monte
Carlo without a model in the loop.

Per item: draw a categorical answer distribution from a symmetric law whose
sharpness is set by ``concentration`` (0+ -> near-uniform probabilities,
infinity -> a single option takes all the mass), draw the true label from a
noise-mixed version of that distribution, then draw ``m`` i.i.d. samples from
it.  ``noise`` is the probability that the truth is drawn uniformly from the
non-modal options instead -- turning it up creates items where the sampled
answers are confidently wrong, which is the regime that stresses coverage
hardest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mcqa import MAX_OPTIONS, OPTION_LETTERS, McqaItem, SampleRecord


@dataclass(frozen=True)
class OracleConfig:
    num_items: int
    num_options: int = 4
    m: int = 20
    concentration: float = 1.0
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_items < 1:
            raise ValueError("num_items must be >= 1")
        if not 2 <= self.num_options <= MAX_OPTIONS:
            raise ValueError(f"num_options must be in [2, {MAX_OPTIONS}]")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not self.concentration > 0:
            raise ValueError("concentration must be > 0")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must be in [0, 1]")


@dataclass(frozen=True)
class SyntheticBatch:
    items: tuple[McqaItem, ...]
    records: tuple[SampleRecord, ...]
    answer_probs: np.ndarray  # (num_items, num_options) true per-item distributions


def _categorical(rng: np.random.Generator, probs: np.ndarray, draws: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of one category per uniform draw, row-wise."""
    cum = probs.cumsum(axis=1)
    if draws.ndim == 1:
        idx = (draws[:, None] > cum).sum(axis=1)
    else:
        idx = (draws[:, :, None] > cum[:, None, :]).sum(axis=2)
    # float cumsum can end a hair under 1; clip the measure-zero overflow
    return np.minimum(idx, probs.shape[1] - 1)


def generate(cfg: OracleConfig) -> SyntheticBatch:
    """Deterministically generate items and sample records for ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    n, c = cfg.num_items, cfg.num_options

    # Symmetric Dirichlet via normalized gammas, shape 1/concentration so a
    # larger concentration means spikier per-item distributions.  At extreme
    # sharpness every gamma variate can underflow to zero; those rows take a
    # uniformly chosen vertex, which is the correct limit.
    shape = 1.0 / cfg.concentration
    weights = rng.gamma(shape, 1.0, size=(n, c))
    dead = weights.sum(axis=1) == 0.0
    if dead.any():
        vertices = rng.integers(0, c, size=int(dead.sum()))
        weights[dead] = np.eye(c)[vertices]
    probs = weights / weights.sum(axis=1, keepdims=True)
    modal = probs.argmax(axis=1)

    truth_from_dist = _categorical(rng, probs, rng.random(n))
    offset = rng.integers(0, c - 1, size=n)
    off_modal = offset + (offset >= modal)
    use_noise = rng.random(n) < cfg.noise
    truth = np.where(use_noise, off_modal, truth_from_dist)

    samples = _categorical(rng, probs, rng.random((n, cfg.m)))

    option_texts = tuple(f"choice {OPTION_LETTERS[j]}" for j in range(c))
    items = []
    records = []
    for i in range(n):
        item = McqaItem(
            id=f"synth-{i:06d}",
            question=f"synthetic question {i}",
            options=option_texts,
            truth=int(truth[i]),
        )
        raw = tuple(OPTION_LETTERS[j] for j in samples[i])
        items.append(item)
        records.append(SampleRecord.from_raw(item.id, raw, c))

    return SyntheticBatch(items=tuple(items), records=tuple(records), answer_probs=probs)
