"""One-pass selection engine: swap streaming on the extensibility structure,
preserve sets for lower-bound repair, and final augmentation.

Every arriving item is scored once against the current selection. If the
selection can absorb it, it is inserted; otherwise the cheapest member whose
eviction would restore extensibility is located through the swap index, and
the arrival replaces it only when its marginal gain beats the stored weight
by the configured multiplicative threshold. The first alpha_l arrivals of
each label are kept aside in per-label preserve sets regardless of the
accept/reject outcome, and finalization tops up any label still under its
lower bound from them.

Marginal gains are computed through the utility sketch, so the engine makes
at most two full utility evaluations per arriving item (one for the
candidate value, one to refresh the cached value after a swap). The
sketch-free mode recomputes everything from the raw members on every call
and scans for eviction candidates; it exists for ablation and as a
correctness reference.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable

from .domain import (
    ConstraintSpec,
    Explanation,
    ExplanationMember,
    InfeasibleStream,
    Item,
    Schema,
    UtilityConfig,
    validate_constraints,
    validate_item,
)
from .matroid import ExtensibilityState, SwapIndex
from .similarity import SimilarityMeasure
from .utility import (
    CoverageModel,
    UtilitySketch,
    curvature_estimate,
    mode_value,
    select_swap_threshold,
    utility_breakdown,
    utility_value,
)

ACCEPTED = "accepted"
SWAPPED = "swapped"
REJECTED = "rejected"

WARMUP_TARGET = 512


@dataclass(frozen=True)
class ArrivalOutcome:
    status: str
    evicted: int | None = None


def augment_from_preserve(
    items: list[Item],
    weights: list[float],
    covs: list[float],
    preserve: list[list[Item]],
    lower: tuple[int, ...],
    cov_fn,
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
) -> None:
    """Top up labels below their lower bound from the preserve sets, in place.

    Added members get their marginal gain at augmentation time as weight.
    Preserve items already selected (by id) are skipped.
    """
    chosen_ids = {it.id for it in items}
    counts = [0] * len(lower)
    for it in items:
        counts[it.label - 1] += 1
    for li, need_floor in enumerate(lower):
        need = need_floor - counts[li]
        if need <= 0:
            continue
        for candidate in preserve[li]:
            if need == 0:
                break
            if candidate.id in chosen_ids:
                continue
            cov = cov_fn(candidate)
            gain = utility_value(
                items + [candidate], query, cfg, measure, covs=covs + [cov]
            ) - utility_value(items, query, cfg, measure, covs=covs)
            items.append(candidate)
            covs.append(cov)
            weights.append(gain)
            chosen_ids.add(candidate.id)
            need -= 1


def explanation_from(
    items: list[Item],
    weights: list[float],
    covs: list[float],
    query: Item,
    cfg: UtilityConfig,
    measure: SimilarityMeasure,
    audit_spec: ConstraintSpec,
) -> Explanation:
    """Score a member list from scratch and wrap it with a feasibility flag."""
    sim_q = measure.sims_to(query, items)
    breakdown = utility_breakdown(items, query, cfg, measure, covs=covs)
    members = [
        ExplanationMember(item=it, weight=w, sim_to_query=float(s), coverage=c)
        for it, w, s, c in zip(items, weights, sim_q, covs)
    ]
    return Explanation.build(
        members,
        audit_spec,
        utility=mode_value(breakdown, cfg.utility_mode),
        breakdown=breakdown,
    )


@dataclass
class RunStats:
    """Counters and timings for one run.

    utility_calls counts the streaming loop's full utility evaluations (at
    most two per arriving item); scoring done while building explanations or
    estimating curvature is not part of the per-item contract and is not
    counted here. violation_trace holds the per-arrival count of labels over
    their audited upper bound, when tracing is enabled.
    """

    items_processed: int = 0
    accepted: int = 0
    swapped: int = 0
    rejected: int = 0
    utility_calls: int = 0
    total_nanos: int = 0
    swap_lambda_used: float | None = None
    per_item_nanos: list[int] | None = None
    violation_trace: list[int] | None = None
    stream_upper_violations: int = 0
    final_violations: int | None = None

    @property
    def mean_item_nanos(self) -> float:
        return self.total_nanos / self.items_processed if self.items_processed else 0.0


class QuerySession:
    """Evolving selection state for one query over one stream."""

    def __init__(
        self,
        schema: Schema,
        query: Item,
        spec: ConstraintSpec,
        cfg: UtilityConfig,
        *,
        use_sketch: bool = True,
        audit_spec: ConstraintSpec | None = None,
        collect_trace: bool = False,
        record_per_item: bool = False,
        audit_mode: bool = False,
    ):
        validate_constraints(spec, schema)
        validate_item(schema, query)
        self.schema = schema
        self.query = query
        self.spec = spec
        self.cfg = cfg
        self.audit_spec = audit_spec or spec
        self.measure = SimilarityMeasure(schema)
        self.use_sketch = use_sketch
        self.audit_mode = audit_mode
        self.state = ExtensibilityState.fresh(spec)
        self.index = SwapIndex(schema.label_count)
        self.sketch = UtilitySketch(query, cfg, self.measure, capacity=max(8, spec.k + 1))
        self.coverage_model = CoverageModel(schema, self.measure, cfg)
        self.preserve: list[list[Item]] = [[] for _ in range(schema.label_count)]
        self.stats = RunStats(
            per_item_nanos=[] if record_per_item else None,
            violation_trace=[] if collect_trace else None,
        )
        self._current_value = 0.0
        self._needs_cov = cfg.lambda3 > 0.0 and cfg.utility_mode in ("clustering", "hybrid")
        if cfg.swap_threshold is not None:
            self.swap_lambda: float | None = cfg.swap_threshold
            self._warmup: list[Item] | None = None
        else:
            # provisional threshold until the warm-up prefix yields an estimate
            self.swap_lambda = None
            self._warmup = []
        self.stats.swap_lambda_used = self.swap_lambda if self.swap_lambda is not None else 1.0

    # -- warm-up threshold selection -----------------------------------------

    def _effective_lambda(self) -> float:
        return self.swap_lambda if self.swap_lambda is not None else 1.0

    def _maybe_resolve_lambda(self, item: Item) -> None:
        if self.swap_lambda is not None or self._warmup is None:
            return
        self._warmup.append(item)
        if len(self._warmup) < WARMUP_TARGET:
            return
        curv = curvature_estimate(self._warmup, self.query, self.cfg, self.measure)
        # the rule's limit as curvature approaches 1 is the small-k threshold
        self.swap_lambda = (
            select_swap_threshold(curv) if curv < 1.0 else select_swap_threshold(1.0 - 1e-12)
        )
        self.stats.swap_lambda_used = self.swap_lambda
        self._warmup = None

    # -- sketch-free reference paths ------------------------------------------

    def _scan_counts(self) -> list[int]:
        counts = [0] * self.schema.label_count
        for lbl in self.sketch.labels:
            counts[lbl - 1] += 1
        return counts

    def _scan_state(self) -> ExtensibilityState:
        counts = self._scan_counts()
        cap = sum(max(c, a) for c, a in zip(counts, self.spec.lower))
        return ExtensibilityState(self.spec, counts, cap)

    def _scratch_value(self, members: list[Item]) -> float:
        self.stats.utility_calls += 1
        return utility_value(
            members, self.query, self.cfg, self.measure, model=self.coverage_model
        )

    def _scan_min_good(self, state: ExtensibilityState, arriving_label: int):
        """Brute-force minimum-weight member whose eviction admits the arrival."""
        best = None
        li = arriving_label - 1
        for pos in range(self.sketch.m):
            lbl = self.sketch.labels[pos]
            counts = list(state.counts)
            counts[lbl - 1] -= 1
            counts[li] += 1
            ok = all(c <= b for c, b in zip(counts, self.spec.upper)) and (
                sum(max(c, a) for c, a in zip(counts, self.spec.lower)) <= self.spec.k
            )
            if not ok:
                continue
            key = (self.sketch.weights[pos], self.sketch.ids[pos])
            if best is None or key < best[0]:
                best = (key, pos)
        if best is None:
            return None
        return best[1], best[0][0]

    # -- the per-arrival step --------------------------------------------------

    def process_item(self, item: Item) -> ArrivalOutcome:
        t0 = time.perf_counter_ns()
        validate_item(self.schema, item)
        self._maybe_resolve_lambda(item)
        label = item.label
        li = label - 1

        if len(self.preserve[li]) < self.spec.lower[li]:
            self.preserve[li].append(item)

        if self._needs_cov:
            # the arrival joins its label's reservoir before its own coverage
            # is evaluated, so early items see themselves at full similarity
            self.coverage_model.offer(item)
            cov = self.coverage_model.coverage(item)
        else:
            cov = 0.0

        if self.use_sketch:
            outcome = self._step_sketch(item, label, cov)
        else:
            outcome = self._step_scratch(item, label, cov)

        if self.audit_mode:
            self.state.audit()
            if self.use_sketch:
                self.index.audit(self.state)

        st = self.stats
        st.items_processed += 1
        if outcome.status == ACCEPTED:
            st.accepted += 1
        elif outcome.status == SWAPPED:
            st.swapped += 1
        else:
            st.rejected += 1
        if st.violation_trace is not None:
            counts = self.state.counts if self.use_sketch else self._scan_counts()
            over = sum(1 for c, b in zip(counts, self.audit_spec.upper) if c > b)
            st.violation_trace.append(over)
            st.stream_upper_violations += over
        dt = time.perf_counter_ns() - t0
        st.total_nanos += dt
        if st.per_item_nanos is not None:
            st.per_item_nanos.append(dt)
        return outcome

    def _step_sketch(self, item: Item, label: int, cov: float) -> ArrivalOutcome:
        stats = self.sketch.candidate_stats(item, cov)
        self.stats.utility_calls += 1
        f_new = self.sketch.value_with(stats)
        weight = f_new - self._current_value

        if self.state.can_extend(label):
            self.state.apply_insert(label)
            self.sketch.insert(item, stats, weight)
            self.index.insert(item.id, weight, label, self.state)
            self._current_value = f_new
            return ArrivalOutcome(ACCEPTED)

        candidate = self.index.min_good_member(self.state, label)
        if candidate is None:
            return ArrivalOutcome(REJECTED)
        victim_id, victim_weight = candidate
        if weight < (1.0 + self._effective_lambda()) * victim_weight:
            return ArrivalOutcome(REJECTED)
        pos = self.sketch.position_of(victim_id)
        victim_label = self.sketch.labels[pos]
        self.state.apply_evict(victim_label)
        self.index.evict(victim_id, self.state)
        self.sketch.evict(pos)
        self.state.apply_insert(label)
        # the cached similarity row was taken against the pre-eviction set
        stats = self.sketch.candidate_stats(item, cov)
        self.sketch.insert(item, stats, weight)
        self.index.insert(item.id, weight, label, self.state)
        self.stats.utility_calls += 1
        self._current_value = self.sketch.value()
        return ArrivalOutcome(SWAPPED, evicted=victim_id)

    def _step_scratch(self, item: Item, label: int, cov: float) -> ArrivalOutcome:
        members = list(self.sketch.items)
        f_old = self._scratch_value(members)
        f_new = self._scratch_value(members + [item])
        weight = f_new - f_old
        state = self._scan_state()
        if state.can_extend(label):
            self.sketch.ids.append(item.id)
            self.sketch.items.append(item)
            self.sketch.labels.append(label)
            self.sketch.weights.append(weight)
            self.sketch.m += 1
            return ArrivalOutcome(ACCEPTED)
        found = self._scan_min_good(state, label)
        if found is None:
            return ArrivalOutcome(REJECTED)
        pos, victim_weight = found
        if weight < (1.0 + self._effective_lambda()) * victim_weight:
            return ArrivalOutcome(REJECTED)
        victim_id = self.sketch.ids[pos]
        for seq in (self.sketch.ids, self.sketch.items, self.sketch.labels, self.sketch.weights):
            seq.pop(pos)
        self.sketch.m -= 1
        self.sketch.ids.append(item.id)
        self.sketch.items.append(item)
        self.sketch.labels.append(label)
        self.sketch.weights.append(weight)
        self.sketch.m += 1
        return ArrivalOutcome(SWAPPED, evicted=victim_id)

    # -- explanation assembly ---------------------------------------------------

    def snapshot(self) -> Explanation:
        """Non-destructive explanation with lower-bound augmentation applied to a copy."""
        items = list(self.sketch.items)
        weights = list(self.sketch.weights)
        if self.use_sketch:
            covs = [float(self.sketch.covs[i]) for i in range(self.sketch.m)]
        else:
            covs = [
                self.coverage_model.coverage(it) if self._needs_cov else 0.0 for it in items
            ]
        cov_fn = self.coverage_model.coverage if self._needs_cov else (lambda it: 0.0)
        augment_from_preserve(
            items, weights, covs, self.preserve, self.spec.lower,
            cov_fn, self.query, self.cfg, self.measure,
        )
        return explanation_from(
            items, weights, covs, self.query, self.cfg, self.measure, self.audit_spec
        )

    def finalize(self) -> Explanation:
        """Snapshot that insists the stream supplied every lower bound."""
        for li in range(self.schema.label_count):
            if len(self.preserve[li]) < self.spec.lower[li]:
                raise InfeasibleStream(
                    f"label {li + 1} had {len(self.preserve[li])} arrivals, "
                    f"needs at least {self.spec.lower[li]}"
                )
        return self.snapshot()

    def retained_item_count(self) -> int:
        """Items currently held: members, preserve sets, and the warm-up buffer."""
        held = self.sketch.m + sum(len(p) for p in self.preserve)
        if self._warmup is not None:
            held += len(self._warmup)
        return held


def run_stream(
    items: Iterable[Item],
    query: Item,
    spec: ConstraintSpec,
    cfg: UtilityConfig,
    schema: Schema,
    **session_kwargs,
) -> tuple[Explanation, RunStats]:
    """Drive a session over a whole stream and finalize."""
    session = QuerySession(schema, query, spec, cfg, **session_kwargs)
    for item in items:
        session.process_item(item)
    explanation = session.finalize()
    return explanation, session.stats
