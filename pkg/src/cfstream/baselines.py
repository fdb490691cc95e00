"""Comparison selectors sharing the domain, similarity, and utility machinery.

- offline greedy: multi-pass argmax of marginal gain over extensible additions
- knn rotation: per-label round robin on similarity, no lower-bound repair
- random swap: coin-flip swap with a uniformly random member (constraint-blind)
- relaxed: the streaming engine with lower bounds dropped
- threshold sieve: one-pass cardinality-only selection on a geometric
  threshold grid, constraint-blind

All selectors are deterministic given their seed and break ties toward the
smaller item id.
"""

from __future__ import annotations

import math
import random
from typing import Sequence

import numpy as np

from .domain import ConstraintSpec, Explanation, Item, Schema, UtilityConfig
from .engine import RunStats, augment_from_preserve, explanation_from, run_stream
from .matroid import ExtensibilityState
from .similarity import SimilarityMeasure
from .utility import (
    CoverageModel,
    UtilitySketch,
    diagonal_jitter,
    kernel_determinant,
    mode_value,
    utility_value,
)


def _force_insert(state: ExtensibilityState, label: int) -> None:
    # count update without the extensibility gate; used by constraint-blind swaps
    i = label - 1
    state.counts[i] += 1
    if state.counts[i] > state.spec.lower[i]:
        state.capacity_use += 1


def _force_evict(state: ExtensibilityState, label: int) -> None:
    i = label - 1
    if state.counts[i] > state.spec.lower[i]:
        state.capacity_use -= 1
    state.counts[i] -= 1


def _trace(stats: RunStats, counts: Sequence[int], audit_spec: ConstraintSpec) -> None:
    if stats.violation_trace is None:
        return
    over = sum(1 for c, b in zip(counts, audit_spec.upper) if c > b)
    stats.violation_trace.append(over)
    stats.stream_upper_violations += over


def offline_greedy(
    items: Sequence[Item],
    query: Item,
    spec: ConstraintSpec,
    cfg: UtilityConfig,
    schema: Schema,
    *,
    collect_trace: bool = False,
    **_: object,
) -> tuple[Explanation, RunStats]:
    """Up to k passes, each adding the extensible item of maximal marginal gain.

    Coverage values are evaluated against reservoirs fed with the whole
    dataset (the selector may see everything), and lower bounds are repaired
    from the first alpha_l items of each label, mirroring the streaming
    finalization.
    """
    items = list(items)
    measure = SimilarityMeasure(schema)
    model = CoverageModel(schema, measure, cfg)
    for it in items:
        model.offer(it)
    needs_cov = cfg.lambda3 > 0.0 and cfg.utility_mode in ("clustering", "hybrid")
    stats = RunStats(violation_trace=[] if collect_trace else None)
    stats.items_processed = len(items)

    n = len(items)
    sq = measure.sims_to(query, items)
    covs = np.array([model.coverage(it) for it in items]) if needs_cov else np.zeros(n)
    jitters = np.array([diagonal_jitter(cfg.seed, it.id, cfg.diag_jitter) for it in items])
    labels = np.array([it.label for it in items])

    state = ExtensibilityState.fresh(spec)
    chosen: list[int] = []
    chosen_mask = np.zeros(n, dtype=bool)
    rowsums = np.zeros(n, dtype=float)
    sum_sim = 0.0
    pair_total = 0.0
    cov_wsum = 0.0
    need_pair = cfg.lambda1 > 0.0 or cfg.lambda2 > 0.0
    cont_all = (
        np.stack([measure.encode_continuous(it) for it in items])
        if items and schema.continuous_indices
        else np.zeros((n, 0))
    )
    cat_all = (
        np.stack([measure.encode_categorical(it) for it in items])
        if items and schema.categorical_indices
        else np.empty((n, 0), dtype=object)
    )

    def current_value(m: int) -> float:
        if m == 0:
            return 0.0
        f1 = sum_sim - (cfg.lambda1 / (m * m)) * pair_total if cfg.lambda1 > 0 else sum_sim
        if cfg.lambda2 > 0:
            sub = measure.pair_matrix([items[i] for i in chosen])
            f2 = sum_sim - (cfg.lambda2 / m) * kernel_determinant(sub, jitters[chosen])
        else:
            f2 = sum_sim
        f3 = sum_sim + (cfg.lambda3 / m) * cov_wsum if cfg.lambda3 > 0 else sum_sim
        return mode_value((f1, f2, f3), cfg.utility_mode)

    while len(chosen) < spec.k:
        m = len(chosen)
        allowed_labels = np.array(
            [state.can_extend(l) for l in range(1, schema.label_count + 1)]
        )
        mask = allowed_labels[labels - 1] & ~chosen_mask
        if not mask.any():
            break
        value_old = current_value(m)
        mm = m + 1
        s_new = sum_sim + sq
        f1_new = (
            s_new - (cfg.lambda1 / (mm * mm)) * (pair_total + 2.0 * rowsums)
            if cfg.lambda1 > 0
            else s_new
        )
        f3_new = (
            s_new + (cfg.lambda3 / mm) * (cov_wsum + sq * covs) if cfg.lambda3 > 0 else s_new
        )
        if cfg.lambda2 > 0:
            f2_new = np.full(n, -np.inf)
            sub_items = [items[i] for i in chosen]
            base = measure.pair_matrix(sub_items) if m else np.zeros((0, 0))
            for i in np.flatnonzero(mask):
                ext = np.ones((mm, mm))
                ext[:m, :m] = base
                if m:
                    row = measure.sim_row(cont_all[i], cat_all[i], cont_all[chosen], cat_all[chosen])
                    ext[m, :m] = row
                    ext[:m, m] = row
                jit = np.append(jitters[chosen], jitters[i])
                f2_new[i] = s_new[i] - (cfg.lambda2 / mm) * kernel_determinant(ext, jit)
        else:
            f2_new = s_new
        if cfg.utility_mode == "content":
            value_new = f1_new
        elif cfg.utility_mode == "sampling":
            value_new = f2_new
        elif cfg.utility_mode == "clustering":
            value_new = f3_new
        else:
            value_new = f1_new + f2_new + f3_new
        gains = np.where(mask, value_new - value_old, -np.inf)
        stats.utility_calls += int(mask.sum())
        best = int(np.flatnonzero(gains == gains.max())[0])
        chosen.append(best)
        chosen_mask[best] = True
        state.apply_insert(int(labels[best]))
        if need_pair:
            pair_total += 2.0 * rowsums[best]
            row = measure.sim_row(cont_all[best], cat_all[best], cont_all, cat_all)
            row[best] = 0.0
            rowsums += row
        sum_sim += sq[best]
        cov_wsum += sq[best] * covs[best]

    sel_items = [items[i] for i in chosen]
    weights: list[float] = []
    # stored weights are each member's gain at its own insertion; replay the sums
    acc_items: list[Item] = []
    acc_covs: list[float] = []
    for i in chosen:
        before = utility_value(acc_items, query, cfg, measure, covs=acc_covs)
        after = utility_value(
            acc_items + [items[i]], query, cfg, measure, covs=acc_covs + [float(covs[i])]
        )
        weights.append(after - before)
        acc_items.append(items[i])
        acc_covs.append(float(covs[i]))
    sel_covs = [float(covs[i]) for i in chosen]

    preserve: list[list[Item]] = [[] for _ in range(schema.label_count)]
    for it in items:
        bucket = preserve[it.label - 1]
        if len(bucket) < spec.lower[it.label - 1]:
            bucket.append(it)
    cov_fn = model.coverage if needs_cov else (lambda it: 0.0)
    augment_from_preserve(
        sel_items, weights, sel_covs, preserve, spec.lower, cov_fn, query, cfg, measure
    )
    expl = explanation_from(sel_items, weights, sel_covs, query, cfg, measure, spec)
    return expl, stats


def knn_rotation(
    items: Sequence[Item],
    query: Item,
    spec: ConstraintSpec,
    schema: Schema,
    **_: object,
) -> tuple[Explanation, RunStats]:
    """Round-robin over labels, taking the most similar unused item each turn.

    A label is skipped when taking from it would break an upper bound or the
    remaining-capacity condition; lower bounds are never repaired, so the
    result can be infeasible (that is the point of this baseline).
    """
    items = list(items)
    measure = SimilarityMeasure(schema)
    sims = measure.sims_to(query, items)
    by_label: list[list[int]] = [[] for _ in range(schema.label_count)]
    for idx, it in enumerate(items):
        by_label[it.label - 1].append(idx)
    for li in range(schema.label_count):
        by_label[li].sort(key=lambda idx: (-sims[idx], items[idx].id))
    cursors = [0] * schema.label_count

    state = ExtensibilityState.fresh(spec)
    chosen: list[int] = []
    stats = RunStats(items_processed=len(items))
    while len(chosen) < spec.k:
        progressed = False
        for label in range(1, schema.label_count + 1):
            if len(chosen) == spec.k:
                break
            li = label - 1
            if cursors[li] >= len(by_label[li]):
                continue
            if not state.can_extend(label):
                continue
            idx = by_label[li][cursors[li]]
            cursors[li] += 1
            chosen.append(idx)
            state.apply_insert(label)
            progressed = True
        if not progressed:
            break

    sel_items = [items[i] for i in chosen]
    weights = [float(sims[i]) for i in chosen]
    covs = [0.0] * len(chosen)
    cfg = UtilityConfig(lambda1=0.0, lambda2=0.0, lambda3=0.0, seed=0)
    expl = explanation_from(sel_items, weights, covs, query, cfg, measure, spec)
    return expl, stats


def random_swap(
    items: Sequence[Item],
    query: Item,
    spec: ConstraintSpec,
    cfg: UtilityConfig,
    schema: Schema,
    seed: int | None = None,
    *,
    collect_trace: bool = False,
    **_: object,
) -> tuple[Explanation, RunStats]:
    """Streaming skeleton with the threshold rule replaced by a fair coin.

    An arrival that cannot be inserted has a 0.5 chance of replacing a
    uniformly random current member, with no regard for the constraint
    structure, so upper bounds are violated mid-stream and the final set is
    usually infeasible. No lower-bound repair is attempted: once swaps have
    corrupted the label counts, the repair step would grow the set far past
    k and stop measuring the same object as the other selectors.
    """
    measure = SimilarityMeasure(schema)
    model = CoverageModel(schema, measure, cfg)
    needs_cov = cfg.lambda3 > 0.0 and cfg.utility_mode in ("clustering", "hybrid")
    rng = random.Random(f"{seed if seed is not None else cfg.seed}:random-swap")
    sketch = UtilitySketch(query, cfg, measure, capacity=max(8, spec.k + 1))
    state = ExtensibilityState.fresh(spec)
    preserve: list[list[Item]] = [[] for _ in range(schema.label_count)]
    stats = RunStats(violation_trace=[] if collect_trace else None)
    current = 0.0

    for item in items:
        li = item.label - 1
        if len(preserve[li]) < spec.lower[li]:
            preserve[li].append(item)
        if needs_cov:
            model.offer(item)
            cov = model.coverage(item)
        else:
            cov = 0.0
        cstats = sketch.candidate_stats(item, cov)
        stats.utility_calls += 1
        f_new = sketch.value_with(cstats)
        weight = f_new - current
        stats.items_processed += 1
        # the size conjunct keeps |S| <= k even after swaps have corrupted
        # the label distribution the capacity counter assumes
        if sketch.m < spec.k and state.can_extend(item.label):
            state.apply_insert(item.label)
            sketch.insert(item, cstats, weight)
            current = f_new
            stats.accepted += 1
        elif sketch.m > 0 and rng.random() < 0.5:
            pos = rng.randrange(sketch.m)
            _force_evict(state, sketch.labels[pos])
            sketch.evict(pos)
            _force_insert(state, item.label)
            cstats = sketch.candidate_stats(item, cov)
            sketch.insert(item, cstats, weight)
            stats.utility_calls += 1
            current = sketch.value()
            stats.swapped += 1
        else:
            stats.rejected += 1
        _trace(stats, state.counts, spec)

    sel_items = list(sketch.items)
    weights = list(sketch.weights)
    covs = [float(sketch.covs[i]) for i in range(sketch.m)]
    expl = explanation_from(sel_items, weights, covs, query, cfg, measure, spec)
    return expl, stats


def relaxed_streaming(
    items: Sequence[Item],
    query: Item,
    spec: ConstraintSpec,
    cfg: UtilityConfig,
    schema: Schema,
    *,
    collect_trace: bool = False,
    record_per_item: bool = False,
    **_: object,
) -> tuple[Explanation, RunStats]:
    """The engine with lower bounds removed; no preserve sets, no augmentation.

    With all lower bounds at zero the preserve sets have zero capacity and
    augmentation is a no-op, so this is exactly the swap-streaming pass on
    the upper-bound matroid. Feasibility is still reported against the
    original spec.
    """
    return run_stream(
        items,
        query,
        spec.without_lower_bounds(),
        cfg,
        schema,
        audit_spec=spec,
        collect_trace=collect_trace,
        record_per_item=record_per_item,
    )


class _Sieve:
    __slots__ = ("threshold", "sketch", "value", "counts")

    def __init__(self, threshold: float, query, cfg, measure, k: int, label_count: int):
        self.threshold = threshold
        self.sketch = UtilitySketch(query, cfg, measure, capacity=k + 1)
        self.value = 0.0
        self.counts = [0] * label_count


def sieve_no_constraint(
    items: Sequence[Item],
    query: Item,
    k: int,
    cfg: UtilityConfig,
    schema: Schema,
    *,
    eps: float = 0.1,
    audit_spec: ConstraintSpec | None = None,
    collect_trace: bool = False,
    **_: object,
) -> tuple[Explanation, RunStats]:
    """Threshold-grid streaming under the cardinality bound only.

    Maintains one candidate set per threshold v = (1+eps)^i with v in
    [max_singleton, 2 * k * max_singleton]; an arrival joins a set when its
    marginal gain clears (v/2 - f(S_v)) / (k - |S_v|). The best-valued set
    wins at the end. Label constraints are ignored throughout; when an
    audit spec is given, per-arrival upper-bound violations of the current
    best set are traced against it.
    """
    measure = SimilarityMeasure(schema)
    model = CoverageModel(schema, measure, cfg)
    needs_cov = cfg.lambda3 > 0.0 and cfg.utility_mode in ("clustering", "hybrid")
    stats = RunStats(violation_trace=[] if collect_trace else None)
    log_grid = math.log1p(eps)
    sieves: dict[int, _Sieve] = {}
    max_singleton = 0.0

    for item in items:
        stats.items_processed += 1
        if needs_cov:
            model.offer(item)
            cov = model.coverage(item)
        else:
            cov = 0.0
        sim_q = float(measure.sims_to(query, [item])[0])
        jit = diagonal_jitter(cfg.seed, item.id, cfg.diag_jitter)
        f1 = sim_q
        f2 = sim_q - cfg.lambda2 * (1.0 + jit) if cfg.lambda2 > 0 else sim_q
        f3 = sim_q + cfg.lambda3 * sim_q * cov if cfg.lambda3 > 0 else sim_q
        singleton = mode_value((f1, f2, f3), cfg.utility_mode)
        if singleton > max_singleton:
            max_singleton = singleton
            lo = math.ceil(math.log(max_singleton) / log_grid - 1e-12)
            hi = math.floor(math.log(2 * k * max_singleton) / log_grid + 1e-12)
            for i in list(sieves):
                if i < lo or i > hi:
                    del sieves[i]
            for i in range(lo, hi + 1):
                if i not in sieves:
                    sieves[i] = _Sieve(
                        (1.0 + eps) ** i, query, cfg, measure, k, schema.label_count
                    )
        accepted = False
        for sv in sieves.values():
            m = sv.sketch.m
            if m >= k:
                continue
            cstats = sv.sketch.candidate_stats(item, cov)
            stats.utility_calls += 1
            f_with = sv.sketch.value_with(cstats)
            gain = f_with - sv.value
            if gain >= (sv.threshold / 2.0 - sv.value) / (k - m):
                sv.sketch.insert(item, cstats, gain)
                sv.value = f_with
                sv.counts[item.label - 1] += 1
                accepted = True
        if accepted:
            stats.accepted += 1
        else:
            stats.rejected += 1
        if stats.violation_trace is not None and audit_spec is not None:
            best = max(sieves.values(), key=lambda s: s.value, default=None)
            counts = best.counts if best else [0] * schema.label_count
            _trace(stats, counts, audit_spec)

    best = None
    for i in sorted(sieves):
        if best is None or sieves[i].value > best.value:
            best = sieves[i]
    if best is None:
        sel_items: list[Item] = []
        weights: list[float] = []
        covs: list[float] = []
    else:
        sel_items = list(best.sketch.items)
        weights = list(best.sketch.weights)
        covs = [float(best.sketch.covs[i]) for i in range(best.sketch.m)]
    spec_for_flag = audit_spec or ConstraintSpec.unconstrained(k, schema.label_count)
    expl = explanation_from(sel_items, weights, covs, query, cfg, measure, spec_for_flag)
    return expl, stats


def _ours_adapter(items, query, spec, cfg, schema, seed=None, **kw):
    return run_stream(items, query, spec, cfg, schema, **kw)


def _offline_adapter(items, query, spec, cfg, schema, seed=None, **kw):
    return offline_greedy(items, query, spec, cfg, schema, **kw)


def _knn_adapter(items, query, spec, cfg, schema, seed=None, **kw):
    return knn_rotation(items, query, spec, schema, **kw)


def _random_adapter(items, query, spec, cfg, schema, seed=None, **kw):
    return random_swap(items, query, spec, cfg, schema, seed=seed, **kw)


def _relaxed_adapter(items, query, spec, cfg, schema, seed=None, **kw):
    return relaxed_streaming(items, query, spec, cfg, schema, **kw)


def _sieve_adapter(items, query, spec, cfg, schema, seed=None, **kw):
    return sieve_no_constraint(items, query, spec.k, cfg, schema, audit_spec=spec, **kw)


ALGORITHMS = {
    "ours": _ours_adapter,
    "offline": _offline_adapter,
    "knn": _knn_adapter,
    "random": _random_adapter,
    "relaxed": _relaxed_adapter,
    "sieve": _sieve_adapter,
}

STREAMING_ALGORITHMS = ("ours", "random", "relaxed", "sieve")
