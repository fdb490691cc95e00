"""Mixed-type similarity in [0, 1] and the split transport-cost components."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .domain import CONTINUOUS, Item, Schema, SchemaMismatch


class SimilarityMeasure:
    """Gower-style similarity over a schema's mixed continuous/categorical features.

    Continuous features contribute 1 - |a - b| / (max - min) after clamping
    values into the schema range; categorical features contribute 1 on equality
    and 0 otherwise. The result is the weighted mean over features, so
    sim(a, a) = 1, sim is symmetric, and sim(a, b) is always in [0, 1].
    dist(a, b) = 1 - sim(a, b).

    Out-of-range continuous values (stream drift past the schema range) are
    clamped before differencing, which keeps similarity bounded. Constant
    features (min == max) contribute zero distance.
    """

    def __init__(self, schema: Schema, weights: Sequence[float] | None = None):
        self.schema = schema
        n = len(schema.features)
        if weights is None:
            weights = [1.0] * n
        if len(weights) != n:
            raise SchemaMismatch(f"expected {n} feature weights, got {len(weights)}")
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise SchemaMismatch("feature weights must be non-negative with positive sum")
        self._weights = [float(w) for w in weights]

        cont = schema.continuous_indices
        cat = schema.categorical_indices
        self._cont_lo = np.array([schema.features[i].min for i in cont], dtype=float)
        ranges = np.array(
            [schema.features[i].max - schema.features[i].min for i in cont], dtype=float
        )
        # constant feature: zero range, defined to contribute zero distance
        self._cont_span = np.where(ranges > 0, ranges, 1.0)
        self._cont_const = ranges == 0
        self._w_cont = np.array([self._weights[i] for i in cont], dtype=float)
        self._w_cat = np.array([self._weights[i] for i in cat], dtype=float)
        self._w_total = float(np.sum(self._w_cont) + np.sum(self._w_cat))
        self._n_cont = len(cont)
        self._n_cat = len(cat)

    # -- scalar paths -------------------------------------------------------

    def _check(self, item: Item) -> None:
        if len(item.continuous) != self._n_cont or len(item.categorical) != self._n_cat:
            raise SchemaMismatch(f"item {item.id} does not match the schema layout")

    def sim(self, a: Item, b: Item) -> float:
        self._check(a)
        self._check(b)
        ea = self.encode_continuous(a)
        eb = self.encode_continuous(b)
        acc = float(np.dot(self._w_cont, 1.0 - np.abs(ea - eb))) if self._n_cont else 0.0
        for w, xa, xb in zip(self._w_cat, a.categorical, b.categorical):
            if xa == xb:
                acc += w
        return acc / self._w_total

    def dist(self, a: Item, b: Item) -> float:
        return 1.0 - self.sim(a, b)

    def transport_components(self, e: Item, q: Item) -> tuple[float, float]:
        """(d_con, d_cat): l1 over normalized continuous values, mismatch count over categoricals."""
        self._check(e)
        self._check(q)
        d_con = (
            float(np.sum(np.abs(self.encode_continuous(e) - self.encode_continuous(q))))
            if self._n_cont
            else 0.0
        )
        d_cat = float(sum(1 for xa, xb in zip(e.categorical, q.categorical) if xa != xb))
        return d_con, d_cat

    # -- vector paths used by the engine and benchmark harnesses -------------

    def encode_continuous(self, item: Item) -> np.ndarray:
        """Continuous values normalized into [0, 1] (clamped; constant features map to 0)."""
        if self._n_cont == 0:
            return np.empty(0, dtype=float)
        v = (np.asarray(item.continuous, dtype=float) - self._cont_lo) / self._cont_span
        v = np.clip(v, 0.0, 1.0)
        if self._cont_const.any():
            v = np.where(self._cont_const, 0.0, v)
        return v

    def encode_categorical(self, item: Item) -> np.ndarray:
        return np.array(item.categorical, dtype=object)

    def sim_row(
        self, cont: np.ndarray, cat: np.ndarray, cont_m: np.ndarray, cat_m: np.ndarray
    ) -> np.ndarray:
        """Similarities between one encoded item and m encoded rows."""
        m = cont_m.shape[0] if self._n_cont else cat_m.shape[0]
        acc = np.zeros(m, dtype=float)
        if self._n_cont:
            acc += (1.0 - np.abs(cont_m - cont)) @ self._w_cont
        if self._n_cat:
            acc += (cat_m == cat) @ self._w_cat
        return acc / self._w_total

    def pair_matrix(self, items: Sequence[Item]) -> np.ndarray:
        """Full pairwise similarity matrix (unit diagonal)."""
        m = len(items)
        out = np.ones((m, m), dtype=float)
        if m == 0:
            return out
        cont_m = np.stack([self.encode_continuous(it) for it in items]) if self._n_cont else None
        cat_m = (
            np.stack([self.encode_categorical(it) for it in items]) if self._n_cat else None
        )
        for i in range(m):
            row = self.sim_row(
                cont_m[i] if cont_m is not None else np.empty(0),
                cat_m[i] if cat_m is not None else np.empty(0, dtype=object),
                cont_m if cont_m is not None else np.empty((m, 0)),
                cat_m if cat_m is not None else np.empty((m, 0), dtype=object),
            )
            out[i, :] = row
        np.fill_diagonal(out, 1.0)
        return out

    def sims_to(self, query: Item, items: Sequence[Item]) -> np.ndarray:
        if not items:
            return np.empty(0, dtype=float)
        cont_m = np.stack([self.encode_continuous(it) for it in items]) if self._n_cont else np.empty((len(items), 0))
        cat_m = (
            np.stack([self.encode_categorical(it) for it in items])
            if self._n_cat
            else np.empty((len(items), 0), dtype=object)
        )
        return self.sim_row(
            self.encode_continuous(query), self.encode_categorical(query), cont_m, cat_m
        )
