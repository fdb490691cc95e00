"""Similarity-plus-diversity utilities, cached-aggregate sketch, and threshold selection.

The utility of a selected set S for a query q combines three views of
diversity on top of total similarity to the query:

- content:    sum sim(e, q) - (lambda1 / |S|^2) * sum over ordered pairs sim(e, e')
- sampling:   sum sim(e, q) - (lambda2 / |S|) * det(K_S), K_ij = 1 / (1 + dist(e_i, e_j))
- clustering: sum sim(e, q) + (lambda3 / |S|) * sum sim(e, q) * cov(e)
- hybrid:     the sum of the three

cov(e) is a decayed sum over labels of e's best similarity to that label's
reservoir sample. All normalizers use the size of the set being evaluated.
The kernel determinant gets a small deterministic per-member diagonal jitter
(derived from the run seed and the member id) so near-duplicate sets stay
numerically evaluable while runs remain reproducible.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import (
    CurvatureOutOfRange,
    DegenerateSample,
    DeterminantFailure,
    Item,
    Schema,
    UtilityConfig,
)
from .similarity import SimilarityMeasure

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def diagonal_jitter(seed: int, item_id: int, magnitude: float) -> float:
    """Deterministic jitter in [0, magnitude) keyed by (seed, item id)."""
    if magnitude == 0.0:
        return 0.0
    mixed = _splitmix64((seed & _MASK64) ^ _splitmix64(item_id & _MASK64))
    return (mixed / 2**64) * magnitude


def kernel_determinant(pair_sims: np.ndarray, jitters: np.ndarray) -> float:
    """det of the distance kernel K_ij = 1/(1 + dist), diagonal 1 + jitter_i.

    Uses a symmetric eigendecomposition; raises DeterminantFailure when the
    kernel is not numerically evaluable (a sign of pathological duplicates
    that even jitter could not separate).
    """
    m = pair_sims.shape[0]
    if m == 0:
        return 1.0
    k = 1.0 / (2.0 - pair_sims)
    k[np.diag_indices(m)] = 1.0 + jitters
    try:
        eigs = np.linalg.eigvalsh(k)
    except np.linalg.LinAlgError as exc:
        raise DeterminantFailure(f"kernel eigendecomposition failed: {exc}") from exc
    det = float(np.prod(eigs))
    if not math.isfinite(det):
        raise DeterminantFailure("kernel determinant is not finite")
    return det


class CoverageModel:
    """Per-label uniform reservoir samples backing the decayed coverage score.

    cov(e) = sum over labels of decay^(1 - best_sim(label, e)), where
    best_sim is e's maximum similarity to the label's reservoir (0 when the
    reservoir is empty, so an unseen label still contributes decay^1).
    Reservoirs use standard one-pass uniform sampling and a seeded generator,
    so a stream replays identically.
    """

    def __init__(self, schema: Schema, measure: SimilarityMeasure, cfg: UtilityConfig):
        self.schema = schema
        self.measure = measure
        self.decay = cfg.decay
        self.size = cfg.reservoir_size
        L = schema.label_count
        nc = len(schema.continuous_indices)
        self._cont = [np.empty((self.size, nc), dtype=float) for _ in range(L)]
        self._cat = [np.empty((self.size, len(schema.categorical_indices)), dtype=object) for _ in range(L)]
        self._fill = [0] * L
        self._seen = [0] * L
        self._rng = random.Random(f"{cfg.seed}:coverage")

    def offer(self, item: Item) -> None:
        li = item.label - 1
        self._seen[li] += 1
        if self._fill[li] < self.size:
            slot = self._fill[li]
            self._fill[li] += 1
        else:
            j = self._rng.randrange(self._seen[li])
            if j >= self.size:
                return
            slot = j
        self._cont[li][slot] = self.measure.encode_continuous(item)
        self._cat[li][slot] = self.measure.encode_categorical(item)

    def best_similarity(self, item: Item, label: int) -> float:
        li = label - 1
        fill = self._fill[li]
        if fill == 0:
            return 0.0
        row = self.measure.sim_row(
            self.measure.encode_continuous(item),
            self.measure.encode_categorical(item),
            self._cont[li][:fill],
            self._cat[li][:fill],
        )
        return float(row.max())

    def coverage(self, item: Item) -> float:
        total = 0.0
        for label in range(1, self.schema.label_count + 1):
            total += self.decay ** (1.0 - self.best_similarity(item, label))
        return total


def coverage(item: Item, model: CoverageModel) -> float:
    return model.coverage(item)


def utility_components(
    sim_q: np.ndarray,
    covs: np.ndarray,
    cfg: UtilityConfig,
    pair_total: float | None = None,
    pair_sims: np.ndarray | None = None,
    jitters: np.ndarray | None = None,
) -> tuple[float, float, float]:
    """(f1, f2, f3) from per-member aggregates; every component is 0 on the empty set.

    pair_total is the ordered-pair similarity sum (each unordered pair counted
    twice). The determinant is only evaluated when lambda2 > 0.
    """
    m = len(sim_q)
    if m == 0:
        return 0.0, 0.0, 0.0
    s = float(np.sum(sim_q))
    f1 = s
    if cfg.lambda1 > 0.0:
        if pair_total is None:
            if pair_sims is None:
                raise ValueError("content term needs pair_total or pair_sims")
            pair_total = float(pair_sims.sum() - np.trace(pair_sims))
        f1 = s - (cfg.lambda1 / (m * m)) * pair_total
    f2 = s
    if cfg.lambda2 > 0.0:
        if pair_sims is None or jitters is None:
            raise ValueError("sampling term needs pair_sims and jitters")
        f2 = s - (cfg.lambda2 / m) * kernel_determinant(pair_sims, jitters)
    f3 = s
    if cfg.lambda3 > 0.0:
        f3 = s + (cfg.lambda3 / m) * float(np.dot(sim_q, covs))
    return f1, f2, f3


def mode_value(components: tuple[float, float, float], mode: str) -> float:
    f1, f2, f3 = components
    if mode == "content":
        return f1
    if mode == "sampling":
        return f2
    if mode == "clustering":
        return f3
    return f1 + f2 + f3


def _assemble(
    members: Sequence[Item],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    model: CoverageModel | None,
    covs: Sequence[float] | None,
):
    sim_q = measure.sims_to(query, list(members))
    if covs is not None:
        cov_arr = np.asarray(covs, dtype=float)
    elif cfg.lambda3 > 0.0 and (cfg.utility_mode in ("clustering", "hybrid")):
        if model is None:
            raise ValueError("clustering term needs a coverage model or explicit covs")
        cov_arr = np.array([model.coverage(e) for e in members], dtype=float)
    else:
        cov_arr = np.zeros(len(members), dtype=float)
    need_pair = cfg.lambda1 > 0.0 or cfg.lambda2 > 0.0
    pair = measure.pair_matrix(list(members)) if need_pair and members else None
    jit = np.array([diagonal_jitter(cfg.seed, e.id, cfg.diag_jitter) for e in members])
    return sim_q, cov_arr, pair, jit


def utility_breakdown(
    members: Sequence[Item],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    model: CoverageModel | None = None,
    covs: Sequence[float] | None = None,
) -> tuple[float, float, float]:
    """From-scratch (f1, f2, f3) for an explicit member list."""
    sim_q, cov_arr, pair, jit = _assemble(members, query, cfg, measure, model, covs)
    return utility_components(sim_q, cov_arr, cfg, pair_sims=pair, jitters=jit)


def utility_value(
    members: Sequence[Item],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    model: CoverageModel | None = None,
    covs: Sequence[float] | None = None,
) -> float:
    return mode_value(utility_breakdown(members, query, cfg, measure, model, covs), cfg.utility_mode)


def f1(members: Sequence[Item], query: Item, cfg: UtilityConfig, measure: SimilarityMeasure) -> float:
    return utility_breakdown(members, query, cfg, measure, covs=[0.0] * len(members))[0]


def f2(members: Sequence[Item], query: Item, cfg: UtilityConfig, measure: SimilarityMeasure) -> float:
    return utility_breakdown(members, query, cfg, measure, covs=[0.0] * len(members))[1]


def f3(
    members: Sequence[Item],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    model: CoverageModel,
) -> float:
    return utility_breakdown(members, query, cfg, measure, model=model)[2]


def hybrid(
    members: Sequence[Item],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    model: CoverageModel | None = None,
) -> float:
    return utility_value(members, query, cfg, measure, model=model)


def marginal_gain(
    e: Item,
    members: Sequence[Item],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    model: CoverageModel | None = None,
) -> float:
    """f(S + e) - f(S), evaluated from scratch (reference path; the engine uses the sketch)."""
    with_e = list(members) + [e]
    return utility_value(with_e, query, cfg, measure, model=model) - utility_value(
        members, query, cfg, measure, model=model
    )


@dataclass
class CandidateStats:
    """Aggregates for one arriving item against the current sketch state."""

    sim_q: float
    sim_row: np.ndarray | None
    cov: float
    jitter: float


class UtilitySketch:
    """Cached aggregates for the evolving selection S.

    Keeps: member sims to the query and their running sum; the pairwise
    similarity matrix over S with its ordered-pair total; frozen per-member
    coverage values; per-member diagonal jitters. With these, evaluating
    f(S + e) touches only e's similarity row instead of rescoring S, and a
    swap updates the aggregates in O(|S|).

    Terms whose weights are zero are never maintained, so a purely modular
    configuration runs in O(1) per evaluation.
    """

    def __init__(
        self,
        query: Item,
        cfg: UtilityConfig,
        measure: SimilarityMeasure,
        capacity: int = 64,
    ):
        self.cfg = cfg
        self.measure = measure
        self.query = query
        self._q_cont = measure.encode_continuous(query)
        self._q_cat = measure.encode_categorical(query)
        self.needs_pair = cfg.lambda1 > 0.0 or cfg.lambda2 > 0.0
        self.needs_cov = cfg.lambda3 > 0.0 and cfg.utility_mode in ("clustering", "hybrid")
        self._cap = max(4, capacity)
        self._alloc()
        self.m = 0
        self.ids: list[int] = []
        self.items: list[Item] = []
        self.labels: list[int] = []
        self.weights: list[float] = []
        self.sum_sim_q = 0.0
        self.pair_total = 0.0

    def _alloc(self):
        cap = self._cap
        nc = len(self.measure.schema.continuous_indices)
        nx = len(self.measure.schema.categorical_indices)
        self.sim_q = np.zeros(cap, dtype=float)
        self.covs = np.zeros(cap, dtype=float)
        self.jitters = np.zeros(cap, dtype=float)
        self.cont_m = np.zeros((cap, nc), dtype=float)
        self.cat_m = np.empty((cap, nx), dtype=object)
        self.pair = np.ones((cap, cap), dtype=float) if self.needs_pair else None

    def _grow(self):
        old_cap, self._cap = self._cap, self._cap * 2
        old = (self.sim_q, self.covs, self.jitters, self.cont_m, self.cat_m, self.pair)
        self._alloc()
        m = self.m
        self.sim_q[:m] = old[0][:m]
        self.covs[:m] = old[1][:m]
        self.jitters[:m] = old[2][:m]
        self.cont_m[:m] = old[3][:m]
        self.cat_m[:m] = old[4][:m]
        if self.pair is not None:
            self.pair[:m, :m] = old[5][:m, :m]

    def rebuild_flags(self, cfg: UtilityConfig) -> None:
        """Adopt new weights, recomputing any aggregate that was not maintained."""
        self.cfg = cfg
        needs_pair = cfg.lambda1 > 0.0 or cfg.lambda2 > 0.0
        if needs_pair and not self.needs_pair:
            self.needs_pair = True
            self.pair = np.ones((self._cap, self._cap), dtype=float)
            m = self.m
            if m:
                self.pair[:m, :m] = self.measure.pair_matrix(self.items)
            self.pair_total = float(self.pair[:m, :m].sum() - m) if m else 0.0
        self.needs_cov = cfg.lambda3 > 0.0 and cfg.utility_mode in ("clustering", "hybrid")

    # -- evaluation -----------------------------------------------------------

    def candidate_stats(self, item: Item, cov: float) -> CandidateStats:
        cont = self.measure.encode_continuous(item)
        cat = self.measure.encode_categorical(item)
        sim_q = float(
            self.measure.sim_row(
                cont, cat, self._q_cont.reshape(1, -1), self._q_cat.reshape(1, -1)
            )[0]
        )
        row = None
        if self.needs_pair and self.m:
            row = self.measure.sim_row(cont, cat, self.cont_m[: self.m], self.cat_m[: self.m])
        elif self.needs_pair:
            row = np.empty(0, dtype=float)
        return CandidateStats(
            sim_q=sim_q,
            sim_row=row,
            cov=cov,
            jitter=diagonal_jitter(self.cfg.seed, item.id, self.cfg.diag_jitter),
        )

    def components(self) -> tuple[float, float, float]:
        m = self.m
        if m == 0:
            return 0.0, 0.0, 0.0
        cfg = self.cfg
        s = self.sum_sim_q
        f1v = s - (cfg.lambda1 / (m * m)) * self.pair_total if cfg.lambda1 > 0.0 else s
        if cfg.lambda2 > 0.0:
            det = kernel_determinant(self.pair[:m, :m].copy(), self.jitters[:m])
            f2v = s - (cfg.lambda2 / m) * det
        else:
            f2v = s
        if cfg.lambda3 > 0.0:
            f3v = s + (cfg.lambda3 / m) * float(np.dot(self.sim_q[:m], self.covs[:m]))
        else:
            f3v = s
        return f1v, f2v, f3v

    def value(self) -> float:
        return mode_value(self.components(), self.cfg.utility_mode)

    def value_with(self, stats: CandidateStats) -> float:
        """f(S + e) without mutating the sketch."""
        m = self.m + 1
        cfg = self.cfg
        s = self.sum_sim_q + stats.sim_q
        f1v = s
        if cfg.lambda1 > 0.0:
            new_pair_total = self.pair_total + 2.0 * float(stats.sim_row.sum())
            f1v = s - (cfg.lambda1 / (m * m)) * new_pair_total
        f2v = s
        if cfg.lambda2 > 0.0:
            k = self.m
            ext = np.ones((m, m), dtype=float)
            ext[:k, :k] = self.pair[:k, :k]
            ext[k, :k] = stats.sim_row
            ext[:k, k] = stats.sim_row
            jit = np.append(self.jitters[:k], stats.jitter)
            f2v = s - (cfg.lambda2 / m) * kernel_determinant(ext, jit)
        f3v = s
        if cfg.lambda3 > 0.0:
            wsum = float(np.dot(self.sim_q[: self.m], self.covs[: self.m]))
            f3v = s + (cfg.lambda3 / m) * (wsum + stats.sim_q * stats.cov)
        return mode_value((f1v, f2v, f3v), cfg.utility_mode)

    # -- mutation -------------------------------------------------------------

    def insert(self, item: Item, stats: CandidateStats, weight: float) -> None:
        if self.m == self._cap:
            self._grow()
        m = self.m
        self.ids.append(item.id)
        self.items.append(item)
        self.labels.append(item.label)
        self.weights.append(weight)
        self.sim_q[m] = stats.sim_q
        self.covs[m] = stats.cov
        self.jitters[m] = stats.jitter
        self.cont_m[m] = self.measure.encode_continuous(item)
        self.cat_m[m] = self.measure.encode_categorical(item)
        if self.needs_pair:
            row = stats.sim_row if stats.sim_row is not None else np.empty(0)
            self.pair[m, :m] = row
            self.pair[:m, m] = row
            self.pair[m, m] = 1.0
            self.pair_total += 2.0 * float(row.sum())
        self.sum_sim_q += stats.sim_q
        self.m += 1

    def position_of(self, item_id: int) -> int:
        return self.ids.index(item_id)

    def evict(self, pos: int) -> Item:
        """Remove the member at pos, backfilling with the last member."""
        m = self.m
        last = m - 1
        removed = self.items[pos]
        self.sum_sim_q -= self.sim_q[pos]
        if self.needs_pair:
            row = self.pair[pos, :m].copy()
            row[pos] = 0.0
            self.pair_total -= 2.0 * float(row.sum())
        if pos != last:
            self.ids[pos] = self.ids[last]
            self.items[pos] = self.items[last]
            self.labels[pos] = self.labels[last]
            self.weights[pos] = self.weights[last]
            self.sim_q[pos] = self.sim_q[last]
            self.covs[pos] = self.covs[last]
            self.jitters[pos] = self.jitters[last]
            self.cont_m[pos] = self.cont_m[last]
            self.cat_m[pos] = self.cat_m[last]
            if self.needs_pair:
                moved = self.pair[last, :m].copy()
                moved[pos] = 1.0
                self.pair[pos, :last] = moved[:last]
                self.pair[:last, pos] = moved[:last]
        self.ids.pop()
        self.items.pop()
        self.labels.pop()
        self.weights.pop()
        self.m = last
        return removed


def curvature_estimate(
    sample: Sequence[Item],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    model: CoverageModel | None = None,
    subsets: int = 64,
) -> float:
    """Empirical curvature: 1 - min over sampled (e, S) pairs of f(e|S) / f(e).

    S ranges over random subsets of the sample; only pairs with f(e) > 0
    count. The estimate is clamped to [0, 1] and is deterministic for a fixed
    config seed. Raises DegenerateSample when every singleton has zero value.
    """
    if not sample:
        raise DegenerateSample("curvature estimation needs a non-empty sample")
    if model is None:
        model = CoverageModel(measure.schema, measure, cfg)
        for it in sample:
            model.offer(it)
    rng = random.Random(f"{cfg.seed}:curvature")
    items = list(sample)
    singleton = {it.id: utility_value([it], query, cfg, measure, model=model) for it in items}
    usable = [it for it in items if singleton[it.id] > 0.0]
    if not usable:
        raise DegenerateSample("all singleton utilities are zero")
    worst = 1.0
    max_size = min(8, max(1, len(items) - 1))
    for _ in range(subsets):
        e = usable[rng.randrange(len(usable))]
        pool = [it for it in items if it.id != e.id]
        if not pool:
            continue
        size = rng.randint(1, min(max_size, len(pool)))
        subset = rng.sample(pool, size)
        gain = marginal_gain(e, subset, query, cfg, measure, model=model)
        worst = min(worst, gain / singleton[e.id])
    return min(1.0, max(0.0, 1.0 - worst))


# Constants of the threshold-selection rule: the swap factor that minimizes
# the streaming quality ratio, the resulting ratio floor, and the small-k
# alternative it is compared against.
RATIO_FLOOR = 7.75
SMALL_K_NUMERATOR = 5.585
SMALL_K_THRESHOLD = 0.717


def approximation_ratio(swap_lambda: float) -> float:
    """Quality ratio rho(lambda) = 2(1+lambda)^2/lambda - lambda/(1+lambda)^2."""
    lam = float(swap_lambda)
    if lam <= 0:
        raise ValueError("swap threshold must be positive")
    one = (1.0 + lam) ** 2
    return 2.0 * one / lam - lam / one


def select_swap_threshold(curvature: float) -> float:
    """0.717 when 5.585/(1 - curvature) exceeds the 7.75 ratio floor, else 1.0."""
    if not 0.0 <= curvature < 1.0:
        raise CurvatureOutOfRange(f"curvature must be in [0, 1), got {curvature}")
    if SMALL_K_NUMERATOR / (1.0 - curvature) > RATIO_FLOOR:
        return SMALL_K_THRESHOLD
    return 1.0
