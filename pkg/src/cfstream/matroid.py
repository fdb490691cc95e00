"""Extensibility bookkeeping and the priority-queue index for minimum-weight eviction.

A partial selection S is extensible (some feasible superset exists) iff
every per-label count stays within its upper bound and the reserved capacity
C = sum_l max(c_l, alpha_l) stays within k. Both conditions are maintained
incrementally so membership checks are O(1).

When S + e is not extensible, the arriving label determines which labels are
"good" (evicting one of their members restores extensibility):

  (i)   c_l = beta_l            -> only the arriving label
  (ii)  C < k or c_l < alpha_l  -> every label
  (iii) otherwise               -> the arriving label plus labels above their
                                   lower bound

Three heap families locate the minimum-weight good member in O(log k)
amortized: a global heap over S, one heap per label, and a heap over labels
currently above their lower bound keyed by their label-local minimum. All
heaps are lazy: stale entries are dropped or refreshed when they surface.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

from .domain import (
    ConstraintSpec,
    IllegalEvict,
    IllegalInsert,
    InconsistentIndex,
    UnknownLabel,
)


@dataclass
class ExtensibilityState:
    """Per-label counts c_l and the reserved-capacity sum C for one selection."""

    spec: ConstraintSpec
    counts: list[int]
    capacity_use: int

    @classmethod
    def fresh(cls, spec: ConstraintSpec) -> "ExtensibilityState":
        return cls(spec=spec, counts=[0] * len(spec.lower), capacity_use=sum(spec.lower))

    def _idx(self, label: int) -> int:
        if not 1 <= label <= len(self.counts):
            raise UnknownLabel(f"label {label} outside 1..{len(self.counts)}")
        return label - 1

    def can_extend(self, label: int) -> bool:
        """True iff adding one item of this label keeps the selection extensible."""
        i = self._idx(label)
        c = self.counts[i]
        a = self.spec.lower[i]
        if c < a:
            return True
        return c < self.spec.upper[i] and self.capacity_use < self.spec.k

    def apply_insert(self, label: int) -> None:
        i = self._idx(label)
        if not self.can_extend(label):
            raise IllegalInsert(f"inserting label {label} would break extensibility")
        self.counts[i] += 1
        if self.counts[i] > self.spec.lower[i]:
            self.capacity_use += 1

    def apply_evict(self, label: int) -> None:
        i = self._idx(label)
        if self.counts[i] < 1:
            raise IllegalEvict(f"no members of label {label} to evict")
        if self.counts[i] > self.spec.lower[i]:
            self.capacity_use -= 1
        self.counts[i] -= 1

    def audit(self) -> None:
        expected = sum(max(c, a) for c, a in zip(self.counts, self.spec.lower))
        if expected != self.capacity_use:
            raise InconsistentIndex(
                f"capacity_use drifted: stored {self.capacity_use}, recomputed {expected}"
            )

    def is_extensible(self) -> bool:
        return (
            all(c <= b for c, b in zip(self.counts, self.spec.upper))
            and self.capacity_use <= self.spec.k
        )

    def copy(self) -> "ExtensibilityState":
        return ExtensibilityState(self.spec, list(self.counts), self.capacity_use)


class GoodLabelCase(Enum):
    ONLY_ARRIVING = "only-arriving"
    ALL = "all"
    ARRIVING_OR_OVER_LOWER = "arriving-or-over-lower"


def good_labels(state: ExtensibilityState, arriving_label: int) -> GoodLabelCase:
    """Case tag describing the good-label set; never materializes the set itself."""
    i = state._idx(arriving_label)
    c = state.counts[i]
    if c == state.spec.upper[i]:
        return GoodLabelCase.ONLY_ARRIVING
    if state.capacity_use < state.spec.k or c < state.spec.lower[i]:
        return GoodLabelCase.ALL
    return GoodLabelCase.ARRIVING_OR_OVER_LOWER


class _CountingKey:
    """Heap key that counts its own comparisons; used for complexity probes."""

    __slots__ = ("weight", "id", "index")

    def __init__(self, weight: float, item_id: int, index: "SwapIndex"):
        self.weight = weight
        self.id = item_id
        self.index = index

    def __lt__(self, other: "_CountingKey") -> bool:
        self.index.comparisons += 1
        return (self.weight, self.id) < (other.weight, other.id)

    def __eq__(self, other) -> bool:
        return (self.weight, self.id) == (other.weight, other.id)


class SwapIndex:
    """Lazy heap triple over the current members, keyed by stored weight.

    Weight ties break toward the smaller (older) item id. Callers must update
    the ExtensibilityState before the corresponding index call so lower-bound
    crossings are observed consistently.
    """

    def __init__(self, label_count: int, count_comparisons: bool = False):
        self.global_heap: list = []
        self.label_heaps: list[list] = [[] for _ in range(label_count)]
        self.over_lower_heap: list[tuple[float, int, int]] = []
        self.live: dict[int, tuple[float, int]] = {}
        self.comparisons = 0
        self._counting = count_comparisons

    def __len__(self) -> int:
        return len(self.live)

    def _key(self, weight: float, item_id: int):
        if self._counting:
            return _CountingKey(weight, item_id, self)
        return (weight, item_id)

    @staticmethod
    def _unkey(entry) -> tuple[float, int]:
        if isinstance(entry, tuple):
            return entry[0], entry[1]
        return entry.weight, entry.id

    def insert(self, item_id: int, weight: float, label: int, state: ExtensibilityState) -> None:
        if item_id in self.live:
            raise InconsistentIndex(f"member {item_id} already indexed")
        self.live[item_id] = (weight, label)
        entry = self._key(weight, item_id)
        heapq.heappush(self.global_heap, entry)
        heapq.heappush(self.label_heaps[label - 1], entry)
        self._refresh_over_lower(label, state)

    def evict(self, item_id: int, state: ExtensibilityState) -> None:
        if item_id not in self.live:
            raise IllegalEvict(f"member {item_id} is not indexed")
        _, label = self.live.pop(item_id)
        self._refresh_over_lower(label, state)

    def _peek(self, heap: list) -> tuple[float, int] | None:
        while heap:
            weight, item_id = self._unkey(heap[0])
            current = self.live.get(item_id)
            if current is not None and current[0] == weight:
                return weight, item_id
            heapq.heappop(heap)
        return None

    def _refresh_over_lower(self, label: int, state: ExtensibilityState) -> None:
        i = label - 1
        if state.counts[i] > state.spec.lower[i]:
            top = self._peek(self.label_heaps[i])
            if top is not None:
                heapq.heappush(self.over_lower_heap, (top[0], top[1], label))

    def _peek_over_lower(self, state: ExtensibilityState) -> tuple[float, int, int] | None:
        """Best (weight, id, label) among labels above their lower bound."""
        while self.over_lower_heap:
            weight, item_id, label = self.over_lower_heap[0]
            i = label - 1
            if state.counts[i] <= state.spec.lower[i]:
                heapq.heappop(self.over_lower_heap)
                continue
            top = self._peek(self.label_heaps[i])
            if top is None:
                heapq.heappop(self.over_lower_heap)
                continue
            if top != (weight, item_id):
                heapq.heappop(self.over_lower_heap)
                heapq.heappush(self.over_lower_heap, (top[0], top[1], label))
                continue
            return weight, item_id, label
        return None

    def min_good_member(
        self, state: ExtensibilityState, arriving_label: int
    ) -> tuple[int, float] | None:
        """(member id, stored weight) of the cheapest eviction restoring extensibility.

        Returns None when no good member exists.
        """
        case = good_labels(state, arriving_label)
        if case is GoodLabelCase.ONLY_ARRIVING:
            top = self._peek(self.label_heaps[arriving_label - 1])
            return (top[1], top[0]) if top else None
        if case is GoodLabelCase.ALL:
            top = self._peek(self.global_heap)
            return (top[1], top[0]) if top else None
        best: tuple[float, int] | None = self._peek(self.label_heaps[arriving_label - 1])
        over = self._peek_over_lower(state)
        if over is not None and (best is None or (over[0], over[1]) < best):
            best = (over[0], over[1])
        return (best[1], best[0]) if best else None

    def audit(self, state: ExtensibilityState) -> None:
        """Recompute every queue answer from the live set; raises on any drift."""
        by_label: dict[int, list[tuple[float, int]]] = {}
        for item_id, (weight, label) in self.live.items():
            by_label.setdefault(label, []).append((weight, item_id))
        want_global = min(
            ((w, i) for pairs in by_label.values() for w, i in pairs), default=None
        )
        if self._peek(self.global_heap) != want_global:
            raise InconsistentIndex("global heap top does not match live members")
        for label in range(1, len(self.label_heaps) + 1):
            want = min(by_label.get(label, []), default=None)
            if self._peek(self.label_heaps[label - 1]) != want:
                raise InconsistentIndex(f"label heap {label} top does not match live members")
        over = self._peek_over_lower(state)
        over_labels = [
            lbl
            for lbl in by_label
            if state.counts[lbl - 1] > state.spec.lower[lbl - 1]
        ]
        want_over = min(
            ((w, i, lbl) for lbl in over_labels for w, i in [min(by_label[lbl])]),
            default=None,
        )
        if over != want_over:
            raise InconsistentIndex("over-lower heap does not match live members")
        counted = sum(len(v) for v in by_label.values())
        if counted != len(self.live):
            raise InconsistentIndex("live map inconsistent")
