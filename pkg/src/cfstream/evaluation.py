"""Metrics, the exhaustive oracle, and the robustness harnesses.

Violation accounting is split two ways, since streaming-time and final-set
violations behave differently: stream_upper sums, over arrivals, the number
of labels whose count in the algorithm's maintained set exceeds its upper
bound; final_total counts labels whose final count falls outside
[alpha, beta], plus one if the set exceeds k. A constraint-respecting run
scores (0, 0); constraint-blind selectors accumulate stream_upper roughly in
proportion to stream length.
"""

from __future__ import annotations

import itertools
from dataclasses import replace
from typing import Callable, Sequence

import numpy as np

from .baselines import ALGORITHMS
from .domain import (
    ConstraintSpec,
    EmptyExplanation,
    Explanation,
    InfeasibleStream,
    InstanceTooLarge,
    Item,
    Schema,
    UtilityConfig,
)
from .engine import RunStats
from .ingest import SynthConfig, synth_bounds, synth_query, synth_schema, synth_stream
from .similarity import SimilarityMeasure
from .utility import CoverageModel, mode_value, utility_components, utility_value


def transport_cost(explanation: Explanation, query: Item, measure: SimilarityMeasure) -> float:
    """Mean over members of d_con + d_cat to the query."""
    if not explanation.members:
        raise EmptyExplanation("transport cost of an empty explanation is undefined")
    total = 0.0
    for m in explanation.members:
        d_con, d_cat = measure.transport_components(m.item, query)
        total += d_con + d_cat
    return total / len(explanation.members)


def violation_count(
    run: RunStats, final: Explanation, spec: ConstraintSpec
) -> tuple[int, int]:
    """(stream_upper, final_total); also records final_total on the stats."""
    stream_upper = run.stream_upper_violations
    final_total = sum(
        1
        for a, c, b in zip(spec.lower, final.label_counts, spec.upper)
        if not a <= c <= b
    )
    if len(final.members) > spec.k:
        final_total += 1
    run.final_violations = final_total
    return stream_upper, final_total


def build_full_model(
    items: Sequence[Item], cfg: UtilityConfig, schema: Schema, measure: SimilarityMeasure
) -> CoverageModel:
    """Coverage reservoirs fed with an entire dataset; the oracle's scoring basis."""
    model = CoverageModel(schema, measure, cfg)
    for it in items:
        model.offer(it)
    return model


ORACLE_MAX_N = 15
ORACLE_MAX_K = 5


def brute_force_oracle(
    items: Sequence[Item],
    query: Item,
    spec: ConstraintSpec,
    cfg: UtilityConfig,
    schema: Schema,
) -> tuple[tuple[Item, ...], float]:
    """Exhaustive maximizer over every subset satisfying the constraints.

    Guarded to n <= 15 and k <= 5. Ties go to the lexicographically smallest
    id tuple. Raises InfeasibleStream when no subset is feasible at all
    (distinct from the empty set being feasible and optimal).
    """
    items = sorted(items, key=lambda it: it.id)
    if len(items) > ORACLE_MAX_N:
        raise InstanceTooLarge(f"oracle is limited to n <= {ORACLE_MAX_N}, got {len(items)}")
    if spec.k > ORACLE_MAX_K:
        raise InstanceTooLarge(f"oracle is limited to k <= {ORACLE_MAX_K}, got {spec.k}")
    measure = SimilarityMeasure(schema)
    model = build_full_model(items, cfg, schema, measure)
    best: tuple[tuple[Item, ...], float] | None = None
    for size in range(0, min(spec.k, len(items)) + 1):
        for combo in itertools.combinations(items, size):
            counts = [0] * schema.label_count
            for it in combo:
                counts[it.label - 1] += 1
            if any(not a <= c <= b for a, c, b in zip(spec.lower, counts, spec.upper)):
                continue
            value = utility_value(list(combo), query, cfg, measure, model=model)
            ids = tuple(it.id for it in combo)
            if best is None or value > best[1] or (value == best[1] and ids < tuple(i.id for i in best[0])):
                best = (combo, value)
    if best is None:
        raise InfeasibleStream("no subset satisfies the constraint spec")
    return best


def _pool_arrays(
    pool: Sequence[Item],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    model: CoverageModel,
):
    from .utility import diagonal_jitter

    sim_q = measure.sims_to(query, pool)
    needs_cov = cfg.lambda3 > 0.0 and cfg.utility_mode in ("clustering", "hybrid")
    covs = (
        np.array([model.coverage(it) for it in pool]) if needs_cov else np.zeros(len(pool))
    )
    need_pair = cfg.lambda1 > 0.0 or cfg.lambda2 > 0.0
    pair = measure.pair_matrix(list(pool)) if need_pair else None
    jit = np.array([diagonal_jitter(cfg.seed, it.id, cfg.diag_jitter) for it in pool])
    return sim_q, covs, pair, jit


def _subset_value(idx, sim_q, covs, pair, jit, cfg) -> float:
    sel = list(idx)
    comp = utility_components(
        sim_q[sel],
        covs[sel],
        cfg,
        pair_sims=pair[np.ix_(sel, sel)] if pair is not None else None,
        jitters=jit[sel],
    )
    return mode_value(comp, cfg.utility_mode)


def sliding_window_run(
    items: Sequence[Item],
    window: int,
    query: Item,
    spec: ConstraintSpec,
    cfg: UtilityConfig,
    schema: Schema,
    checkpoints: int = 20,
) -> list[tuple[float, float]]:
    """Batch reselection variant: utility trajectory at every 5% of the stream.

    Each batch of `window` arrivals is pooled with the retained set and the
    best subset of size at most k is kept: exhaustively when the pool has at
    most 15 items, greedily otherwise. Only the cardinality bound applies;
    coverage is evaluated live at reselection time.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    items = list(items)
    n = len(items)
    measure = SimilarityMeasure(schema)
    model = CoverageModel(schema, measure, cfg)
    needs_cov = cfg.lambda3 > 0.0 and cfg.utility_mode in ("clustering", "hybrid")
    marks = [max(1, round(n * j / checkpoints)) for j in range(1, checkpoints + 1)]
    trajectory: list[tuple[float, float]] = []
    retained: list[Item] = []
    retained_value = 0.0
    processed = 0
    next_mark = 0

    for start in range(0, n, window):
        batch = items[start : start + window]
        if needs_cov:
            for it in batch:
                model.offer(it)
        pool = retained + [it for it in batch if all(it.id != r.id for r in retained)]
        sim_q, covs, pair, jit = _pool_arrays(pool, query, cfg, measure, model)
        if len(pool) <= 15:
            best_idx: tuple[int, ...] = ()
            best_val = 0.0
            for size in range(1, min(spec.k, len(pool)) + 1):
                for combo in itertools.combinations(range(len(pool)), size):
                    v = _subset_value(combo, sim_q, covs, pair, jit, cfg)
                    if v > best_val:
                        best_val, best_idx = v, combo
        else:
            chosen: list[int] = []
            best_val = 0.0
            while len(chosen) < spec.k:
                gains = []
                for i in range(len(pool)):
                    if i in chosen:
                        continue
                    v = _subset_value(chosen + [i], sim_q, covs, pair, jit, cfg)
                    gains.append((v - best_val, pool[i].id, i))
                if not gains:
                    break
                gains.sort(key=lambda t: (-t[0], t[1]))
                if gains[0][0] <= 0 and len(chosen) > 0:
                    break
                chosen.append(gains[0][2])
                best_val = _subset_value(chosen, sim_q, covs, pair, jit, cfg)
            best_idx = tuple(chosen)
        retained = [pool[i] for i in best_idx]
        retained_value = best_val
        processed += len(batch)
        while next_mark < checkpoints and processed >= marks[next_mark]:
            trajectory.append((100.0 * marks[next_mark] / n, retained_value))
            next_mark += 1
    while next_mark < checkpoints:
        trajectory.append((100.0 * marks[next_mark] / n, retained_value))
        next_mark += 1
    return trajectory


DRIFT_GRID = (("normal", "normal"), ("normal", "skewed"), ("skewed", "normal"), ("skewed", "skewed"))


def drift_benchmark(
    gen_template: SynthConfig,
    algorithms: Sequence[str],
    seeds: Sequence[int],
    k: int,
    cfg: UtilityConfig,
    slack: tuple[float, float] = (0.9, 1.1),
) -> list[dict]:
    """Utility under the 2x2 {normal, skewed} feature/label drift grid.

    Every algorithm's final member set is rescored on a shared basis (full
    dataset coverage reservoirs) so utilities are comparable, and deltas are
    reported relative to "ours" on the normal/normal condition. Deterministic
    for a fixed seed list.
    """
    if "ours" not in algorithms:
        raise ValueError("drift benchmark needs 'ours' as the reference algorithm")
    raw: dict[tuple[str, str, str], list[float]] = {}
    for fdist, ldist in DRIFT_GRID:
        for seed in seeds:
            gen = replace(
                gen_template, feature_dist=fdist, label_dist=ldist, seed=int(seed)
            )
            schema = synth_schema(gen)
            items = list(synth_stream(gen))
            query = synth_query(gen)
            spec = synth_bounds(gen, k, slack=slack)
            run_cfg = replace(cfg, seed=int(seed))
            measure = SimilarityMeasure(schema)
            model = build_full_model(items, run_cfg, schema, measure)
            for name in algorithms:
                expl, _ = ALGORITHMS[name](items, query, spec, run_cfg, schema, seed=int(seed))
                members = [m.item for m in expl.members]
                value = utility_value(members, query, run_cfg, measure, model=model)
                raw.setdefault((fdist, ldist, name), []).append(value)
    base = float(np.mean(raw[("normal", "normal", "ours")]))
    rows = []
    for fdist, ldist in DRIFT_GRID:
        for name in algorithms:
            mean_u = float(np.mean(raw[(fdist, ldist, name)]))
            rows.append(
                {
                    "feature_dist": fdist,
                    "label_dist": ldist,
                    "algorithm": name,
                    "mean_utility": mean_u,
                    "delta_pct": 100.0 * (mean_u - base) / base if base else 0.0,
                }
            )
    return rows
