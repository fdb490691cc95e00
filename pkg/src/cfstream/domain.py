"""Shared data model: schemas, stream items, constraint specs, utility configs, explanations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
UTILITY_MODES = ("content", "sampling", "clustering", "hybrid")

# Advisory cap on explanation size (cognitive-load guidance); not enforced.
SUGGESTED_MAX_K = 25


class StreamSelectionError(Exception):
    """Base class for all errors raised by this package."""


class MalformedSpec(StreamSelectionError):
    pass


class InfeasibleConstraints(StreamSelectionError):
    pass


class SchemaMismatch(StreamSelectionError):
    pass


class UnknownLabel(StreamSelectionError):
    pass


class IllegalInsert(StreamSelectionError):
    pass


class IllegalEvict(StreamSelectionError):
    pass


class NoEvictionCandidate(StreamSelectionError):
    pass


class InconsistentIndex(StreamSelectionError):
    pass


class InfeasibleStream(StreamSelectionError):
    pass


class EmptyExplanation(StreamSelectionError):
    pass


class InstanceTooLarge(StreamSelectionError):
    pass


class DeterminantFailure(StreamSelectionError):
    pass


class DegenerateSample(StreamSelectionError):
    pass


class CurvatureOutOfRange(StreamSelectionError):
    pass


class ParseError(StreamSelectionError):
    """A data file could not be parsed; carries the offending row/column."""

    def __init__(self, row: int, column: str, message: str):
        super().__init__(f"row {row}, column {column!r}: {message}")
        self.row = row
        self.column = column


@dataclass(frozen=True)
class FeatureSpec:
    """One feature column: continuous features carry a normalization range."""

    name: str
    kind: str
    min: float | None = None
    max: float | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise MalformedSpec(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CONTINUOUS:
            if self.min is None or self.max is None:
                raise MalformedSpec(f"continuous feature {self.name!r} needs min and max")
            if self.min > self.max:
                raise MalformedSpec(f"feature {self.name!r}: min {self.min} > max {self.max}")


@dataclass(frozen=True)
class Schema:
    """Fixed stream layout: ordered features, a label column, and a dense label set 1..L."""

    features: tuple[FeatureSpec, ...]
    label_column: str
    label_count: int

    def __post_init__(self):
        if not self.features:
            raise MalformedSpec("schema needs at least one feature")
        if self.label_count < 1:
            raise MalformedSpec("label_count must be >= 1")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise MalformedSpec("feature names must be unique")
        if self.label_column in names:
            raise MalformedSpec("label column may not shadow a feature name")

    @property
    def continuous_indices(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.features) if f.kind == CONTINUOUS)

    @property
    def categorical_indices(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.features) if f.kind == CATEGORICAL)

    def to_json_dict(self) -> dict:
        feats = []
        for f in self.features:
            d: dict = {"name": f.name, "kind": f.kind}
            if f.kind == CONTINUOUS:
                d["min"] = f.min
                d["max"] = f.max
            feats.append(d)
        return {"features": feats, "label": {"name": self.label_column, "count": self.label_count}}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Schema":
        try:
            feats = tuple(
                FeatureSpec(
                    name=f["name"],
                    kind=f["kind"],
                    min=f.get("min"),
                    max=f.get("max"),
                )
                for f in doc["features"]
            )
            label = doc["label"]
            return cls(features=feats, label_column=label["name"], label_count=int(label["count"]))
        except (KeyError, TypeError) as exc:
            raise MalformedSpec(f"bad schema document: {exc}") from exc

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True, slots=True)
class Item:
    """One stream element: ordinal id, label in 1..L, and feature values split by kind."""

    id: int
    label: int
    continuous: tuple[float, ...]
    categorical: tuple[str, ...]


def validate_item(schema: Schema, item: Item) -> None:
    if len(item.continuous) != len(schema.continuous_indices):
        raise SchemaMismatch(
            f"item {item.id}: expected {len(schema.continuous_indices)} continuous values, "
            f"got {len(item.continuous)}"
        )
    if len(item.categorical) != len(schema.categorical_indices):
        raise SchemaMismatch(
            f"item {item.id}: expected {len(schema.categorical_indices)} categorical values, "
            f"got {len(item.categorical)}"
        )
    if not 1 <= item.label <= schema.label_count:
        raise SchemaMismatch(
            f"item {item.id}: label {item.label} outside 1..{schema.label_count}"
        )


@dataclass(frozen=True)
class ConstraintSpec:
    """Global cardinality bound k plus per-label lower/upper selection bounds."""

    k: int
    lower: tuple[int, ...]
    upper: tuple[int, ...]

    @classmethod
    def of(cls, k: int, lower: Sequence[int], upper: Sequence[int]) -> "ConstraintSpec":
        return cls(k=k, lower=tuple(int(a) for a in lower), upper=tuple(int(b) for b in upper))

    @classmethod
    def unconstrained(cls, k: int, label_count: int) -> "ConstraintSpec":
        """Cardinality-only spec: no lower bounds, uppers at k."""
        return cls(k=k, lower=(0,) * label_count, upper=(k,) * label_count)

    def without_lower_bounds(self) -> "ConstraintSpec":
        return ConstraintSpec(k=self.k, lower=(0,) * len(self.lower), upper=self.upper)


def validate_constraints(spec: ConstraintSpec, schema: Schema) -> None:
    """Accept iff the spec is well-formed for the schema and a feasible selection can exist."""
    L = schema.label_count
    if spec.k < 1:
        raise MalformedSpec(f"k must be positive, got {spec.k}")
    if len(spec.lower) != L or len(spec.upper) != L:
        raise MalformedSpec(
            f"bounds must have one entry per label ({L}); got {len(spec.lower)}/{len(spec.upper)}"
        )
    if any(a < 0 for a in spec.lower):
        raise MalformedSpec("lower bounds must be non-negative")
    for l, (a, b) in enumerate(zip(spec.lower, spec.upper), start=1):
        if a > b:
            raise MalformedSpec(f"label {l}: lower bound {a} exceeds upper bound {b}")
    if sum(spec.lower) > spec.k:
        raise InfeasibleConstraints(
            f"sum of lower bounds {sum(spec.lower)} exceeds cardinality bound k={spec.k}"
        )


@dataclass
class UtilityConfig:
    """Weights and knobs for the similarity-plus-diversity utility.

    swap_threshold None means "select automatically from the estimated
    curvature after a warm-up prefix".
    """

    lambda1: float = 0.5
    lambda2: float = 0.5
    lambda3: float = 0.5
    swap_threshold: float | None = 1.0
    utility_mode: str = "hybrid"
    diag_jitter: float = 1e-6
    decay: float = 0.5
    reservoir_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise MalformedSpec(f"{name} must be in [0, 1], got {v}")
        if self.swap_threshold is not None and self.swap_threshold <= 0:
            raise MalformedSpec(f"swap_threshold must be positive, got {self.swap_threshold}")
        if self.utility_mode not in UTILITY_MODES:
            raise MalformedSpec(f"utility_mode must be one of {UTILITY_MODES}")
        if self.diag_jitter < 0:
            raise MalformedSpec("diag_jitter must be non-negative")
        if not 0.0 < self.decay < 1.0:
            raise MalformedSpec(f"decay must be in (0, 1), got {self.decay}")
        if self.reservoir_size < 1:
            raise MalformedSpec("reservoir_size must be positive")


@dataclass(frozen=True)
class ExplanationMember:
    """A selected counterfactual with its stored weight and cached scores."""

    item: Item
    weight: float
    sim_to_query: float
    coverage: float = 0.0


@dataclass(frozen=True)
class Explanation:
    """A selected set with per-member weights, utility breakdown, and feasibility flag."""

    members: tuple[ExplanationMember, ...]
    utility: float
    utility_breakdown: tuple[float, float, float]
    label_counts: tuple[int, ...]
    feasible: bool

    @classmethod
    def build(
        cls,
        members: Iterable[ExplanationMember],
        spec: ConstraintSpec,
        utility: float,
        breakdown: tuple[float, float, float],
    ) -> "Explanation":
        members = tuple(sorted(members, key=lambda m: m.item.id))
        counts = [0] * len(spec.lower)
        for m in members:
            counts[m.item.label - 1] += 1
        feasible = len(members) <= spec.k and all(
            a <= c <= b for a, c, b in zip(spec.lower, counts, spec.upper)
        )
        return cls(
            members=members,
            utility=utility,
            utility_breakdown=breakdown,
            label_counts=tuple(counts),
            feasible=feasible,
        )

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(m.item.id for m in self.members)

    def to_json_dict(self, schema: Schema | None = None) -> dict:
        out = {
            "feasible": self.feasible,
            "utility": self.utility,
            "utilityBreakdown": {
                "f1": self.utility_breakdown[0],
                "f2": self.utility_breakdown[1],
                "f3": self.utility_breakdown[2],
            },
            "labelCounts": list(self.label_counts),
            "members": [],
        }
        for m in self.members:
            rec = {
                "id": m.item.id,
                "label": m.item.label,
                "weight": m.weight,
                "simToQuery": m.sim_to_query,
                "coverage": m.coverage,
            }
            if schema is not None:
                rec["features"] = item_feature_dict(schema, m.item)
            else:
                rec["continuous"] = list(m.item.continuous)
                rec["categorical"] = list(m.item.categorical)
            out["members"].append(rec)
        return out


def item_feature_dict(schema: Schema, item: Item) -> dict:
    """Feature values keyed by column name, in schema order."""
    out: dict = {}
    ci = 0
    xi = 0
    for f in schema.features:
        if f.kind == CONTINUOUS:
            out[f.name] = item.continuous[ci]
            ci += 1
        else:
            out[f.name] = item.categorical[xi]
            xi += 1
    return out


def item_from_feature_dict(schema: Schema, values: dict, label: int, item_id: int) -> Item:
    """Inverse of item_feature_dict; raises SchemaMismatch on missing columns."""
    cont: list[float] = []
    cat: list[str] = []
    for f in schema.features:
        if f.name not in values:
            raise SchemaMismatch(f"missing feature {f.name!r}")
        if f.kind == CONTINUOUS:
            try:
                cont.append(float(values[f.name]))
            except (TypeError, ValueError) as exc:
                raise SchemaMismatch(f"feature {f.name!r}: not a number") from exc
        else:
            cat.append(str(values[f.name]))
    item = Item(id=item_id, label=int(label), continuous=tuple(cont), categorical=tuple(cat))
    validate_item(schema, item)
    return item
