"""Dataset loading, bound inference, and the synthetic drift-stream generator."""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from typing import Iterator, Sequence

from .domain import (
    CATEGORICAL,
    CONTINUOUS,
    ConstraintSpec,
    FeatureSpec,
    Item,
    ParseError,
    Schema,
    SchemaMismatch,
    validate_constraints,
)


def load_csv_stream(path, schema: Schema) -> Iterator[Item]:
    """Lazily yield items in row order; holds one row at a time.

    The header must contain the schema's feature columns and the label
    column (extra columns are ignored). Malformed cells raise ParseError
    naming the 1-based data row and the column.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file, expected a header row") from None
        positions: dict[str, int] = {name: i for i, name in enumerate(header)}
        needed = [f.name for f in schema.features] + [schema.label_column]
        missing = [name for name in needed if name not in positions]
        if missing:
            raise SchemaMismatch(f"{path}: header is missing columns {missing}")
        cont_cols = [
            (positions[f.name], f.name) for f in schema.features if f.kind == CONTINUOUS
        ]
        cat_cols = [
            (positions[f.name], f.name) for f in schema.features if f.kind == CATEGORICAL
        ]
        label_pos = positions[schema.label_column]
        for row_idx, row in enumerate(reader):
            if len(row) != len(header):
                raise ParseError(row_idx + 1, "<row>", f"expected {len(header)} cells, got {len(row)}")
            cont = []
            for pos, name in cont_cols:
                try:
                    cont.append(float(row[pos]))
                except ValueError:
                    raise ParseError(row_idx + 1, name, f"not a number: {row[pos]!r}") from None
            cat = tuple(row[pos] for pos, _ in cat_cols)
            try:
                label = int(row[label_pos])
            except ValueError:
                raise ParseError(
                    row_idx + 1, schema.label_column, f"not an integer label: {row[label_pos]!r}"
                ) from None
            if not 1 <= label <= schema.label_count:
                raise ParseError(
                    row_idx + 1,
                    schema.label_column,
                    f"label {label} outside 1..{schema.label_count}",
                )
            yield Item(id=row_idx, label=label, continuous=tuple(cont), categorical=cat)


def write_csv(path, schema: Schema, items) -> None:
    """Write items in schema column order; inverse of load_csv_stream."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in schema.features] + [schema.label_column])
        for item in items:
            row = []
            ci = xi = 0
            for f in schema.features:
                if f.kind == CONTINUOUS:
                    row.append(repr(item.continuous[ci]))
                    ci += 1
                else:
                    row.append(item.categorical[xi])
                    xi += 1
            row.append(str(item.label))
            writer.writerow(row)


def load_query_row(path, schema: Schema) -> Item:
    """Read a single-row CSV as the query item (id -1)."""
    rows = list(load_csv_stream(path, schema))
    if len(rows) != 1:
        raise SchemaMismatch(f"{path}: query file must contain exactly one data row, got {len(rows)}")
    q = rows[0]
    return Item(id=-1, label=q.label, continuous=q.continuous, categorical=q.categorical)


def label_histogram(items) -> dict[int, int]:
    hist: dict[int, int] = {}
    for it in items:
        hist[it.label] = hist.get(it.label, 0) + 1
    return hist


def infer_bounds(
    histogram: dict[int, int] | Sequence[int],
    k: int,
    schema: Schema,
    slack: tuple[float, float] = (0.9, 1.1),
) -> ConstraintSpec:
    """Proportional bounds: alpha = floor(lo * share * k), beta = ceil(hi * share * k)."""
    L = schema.label_count
    if isinstance(histogram, dict):
        counts = [histogram.get(l, 0) for l in range(1, L + 1)]
    else:
        counts = list(histogram)
        if len(counts) != L:
            raise SchemaMismatch(f"histogram must have {L} entries, got {len(counts)}")
    total = sum(counts)
    if total <= 0:
        raise SchemaMismatch("histogram is empty")
    lo, hi = slack
    lower = tuple(math.floor(lo * (c / total) * k) for c in counts)
    upper = tuple(min(k, math.ceil(hi * (c / total) * k)) for c in counts)
    spec = ConstraintSpec(k=k, lower=lower, upper=upper)
    validate_constraints(spec, schema)
    return spec


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic labeled stream with optional mid-stream distribution drift.

    Before the drift point labels follow a fixed geometric-weight categorical
    distribution and features are per-label Gaussian clusters in [0, 1]^dims.
    After it, "normal" keeps both distributions; skewed label drift reverses
    the label probabilities (most frequent swaps with least frequent), and
    skewed feature drift shifts every cluster mean by three cluster standard
    deviations (values stay clamped to the schema range).
    """

    n: int
    label_count: int = 4
    dims: int = 4
    feature_dist: str = "normal"
    label_dist: str = "normal"
    drift_point: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise SchemaMismatch("n must be non-negative")
        if self.label_count < 1 or self.dims < 1:
            raise SchemaMismatch("label_count and dims must be positive")
        for name in ("feature_dist", "label_dist"):
            if getattr(self, name) not in ("normal", "skewed"):
                raise SchemaMismatch(f"{name} must be 'normal' or 'skewed'")

    @property
    def effective_drift_point(self) -> int:
        return self.drift_point if self.drift_point is not None else self.n // 2

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "label_count": self.label_count,
            "dims": self.dims,
            "feature_dist": self.feature_dist,
            "label_dist": self.label_dist,
            "drift_point": self.drift_point,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SynthConfig":
        known = {k: doc[k] for k in doc if k in cls.__dataclass_fields__}
        return cls(**known)


# Clusters overlap heavily (spread comparable to sigma), mirroring mixed
# tabular data where label groups are not feature-separable.
_CLUSTER_SIGMA = 0.15
_CLUSTER_LO = 0.35
_CLUSTER_HI = 0.65
_LABEL_WEIGHT_RATIO = 0.6


def synth_schema(cfg: SynthConfig) -> Schema:
    feats = tuple(
        FeatureSpec(name=f"x{d}", kind=CONTINUOUS, min=0.0, max=1.0) for d in range(cfg.dims)
    )
    return Schema(features=feats, label_column="label", label_count=cfg.label_count)


def _base_label_probs(L: int) -> list[float]:
    weights = [_LABEL_WEIGHT_RATIO**l for l in range(L)]
    total = sum(weights)
    return [w / total for w in weights]


def _cluster_means(cfg: SynthConfig) -> list[list[float]]:
    rng = random.Random(f"{cfg.seed}:clusters")
    return [
        [rng.uniform(_CLUSTER_LO, _CLUSTER_HI) for _ in range(cfg.dims)]
        for _ in range(cfg.label_count)
    ]


def synth_stream(cfg: SynthConfig) -> Iterator[Item]:
    """Seeded item iterator; identical replays for identical configs."""
    rng = random.Random(f"{cfg.seed}:stream")
    probs = _base_label_probs(cfg.label_count)
    cums = [sum(probs[: i + 1]) for i in range(cfg.label_count)]
    skew_probs = list(reversed(probs))
    skew_cums = [sum(skew_probs[: i + 1]) for i in range(cfg.label_count)]
    means = _cluster_means(cfg)
    shifted = [[min(1.0, mu + 3.0 * _CLUSTER_SIGMA) for mu in row] for row in means]
    drift = cfg.effective_drift_point

    for i in range(cfg.n):
        drifted = i >= drift
        cum = skew_cums if (drifted and cfg.label_dist == "skewed") else cums
        u = rng.random()
        label = cfg.label_count
        for li, edge in enumerate(cum):
            if u < edge:
                label = li + 1
                break
        mu = shifted[label - 1] if (drifted and cfg.feature_dist == "skewed") else means[label - 1]
        values = tuple(
            min(1.0, max(0.0, rng.gauss(mu[d], _CLUSTER_SIGMA))) for d in range(cfg.dims)
        )
        yield Item(id=i, label=label, continuous=values, categorical=())


def synth_query(cfg: SynthConfig) -> Item:
    """A deterministic query near the most frequent pre-drift cluster."""
    rng = random.Random(f"{cfg.seed}:query")
    means = _cluster_means(cfg)
    values = tuple(
        min(1.0, max(0.0, rng.gauss(means[0][d], _CLUSTER_SIGMA))) for d in range(cfg.dims)
    )
    return Item(id=-1, label=1, continuous=values, categorical=())


def synth_bounds(cfg: SynthConfig, k: int, slack: tuple[float, float] = (0.9, 1.1)) -> ConstraintSpec:
    """Proportional bounds from the generator's pre-drift label distribution."""
    probs = _base_label_probs(cfg.label_count)
    pseudo = {l + 1: max(1, round(p * max(cfg.n, 1))) for l, p in enumerate(probs)}
    return infer_bounds(pseudo, k, synth_schema(cfg), slack=slack)
