"""Tri-order embedding sets and the hexagram cross-distance taxonomy.

A query set q and gallery set g each hold embeddings of one source sample at
orders 0, 1 and 2. Of the C(6,2) = 15 node pairs, the 9 joining q to g are
usable for ranking; the 6 pairs within one source are excluded.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import SchemaError, UsageError
from .synthcam import SampleRecord


class CrossDistanceId(enum.Enum):
    D1 = 1
    D2 = 2
    D3 = 3
    D4 = 4
    D5 = 5
    D6 = 6
    D7 = 7
    D8 = 8
    D9 = 9
    D10 = 10
    D11 = 11
    D12 = 12
    D13 = 13
    D14 = 14
    D15 = 15

    @property
    def label(self) -> str:
        return f"d{self.value}"


D = CrossDistanceId
VALID_IDS = (D.D1, D.D2, D.D3, D.D8, D.D9, D.D10, D.D11, D.D14, D.D15)
EXCLUDED_IDS = (D.D4, D.D5, D.D6, D.D7, D.D12, D.D13)

# (query order, gallery order) for each usable distance
ORDER_PAIRS = {
    D.D1: (0, 0),
    D.D2: (0, 1),
    D.D3: (1, 0),
    D.D8: (0, 2),
    D.D9: (2, 0),
    D.D10: (1, 1),
    D.D11: (2, 2),
    D.D14: (1, 2),
    D.D15: (2, 1),
}
MIRROR = {
    D.D1: D.D1,
    D.D10: D.D10,
    D.D11: D.D11,
    D.D2: D.D3,
    D.D3: D.D2,
    D.D8: D.D9,
    D.D9: D.D8,
    D.D14: D.D15,
    D.D15: D.D14,
}


def enumerate_valid_ids() -> list[CrossDistanceId]:
    return list(VALID_IDS)


def _check_valid(cid: CrossDistanceId) -> None:
    if cid in EXCLUDED_IDS:
        raise UsageError(f"{cid.label} links two samples of the same source; same-source pair excluded in testing")
    if cid not in ORDER_PAIRS:
        raise UsageError(f"unknown cross distance {cid!r}")


@dataclass(frozen=True)
class Combination:
    ids: tuple[CrossDistanceId, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.ids:
            raise UsageError("a combination needs at least one cross distance")
        for cid in self.ids:
            _check_valid(cid)
        if len(set(self.ids)) != len(self.ids):
            raise UsageError("repeated cross distance in combination")
        if self.weights is not None and len(self.weights) != len(self.ids):
            raise UsageError("one weight per cross distance")

    @classmethod
    def of(cls, *ids: CrossDistanceId) -> "Combination":
        return cls(tuple(sorted(ids, key=VALID_IDS.index)) if all(i in VALID_IDS for i in ids)
                   else tuple(ids))

    def weight_of(self, k: int) -> float:
        return 1.0 if self.weights is None else self.weights[k]

    def mirror(self) -> "Combination":
        return Combination(tuple(MIRROR[c] for c in self.ids), self.weights)

    def __str__(self) -> str:
        return "+".join(c.label for c in self.ids)


_TOKEN = re.compile(r"^d(\d+)$")


def parse_combination(text: str) -> Combination:
    """Parse ``d1+d2+d10`` (case-insensitive, whitespace-tolerant)."""
    tokens = [t.strip().lower() for t in text.split("+")]
    if not tokens or any(not t for t in tokens):
        raise UsageError(f"malformed combination {text!r}")
    ids = []
    for tok in tokens:
        m = _TOKEN.match(tok.replace(" ", ""))
        if not m or not 1 <= int(m.group(1)) <= 15:
            raise UsageError(f"unknown cross distance {tok!r} in {text!r}")
        ids.append(CrossDistanceId(int(m.group(1))))
    return Combination.of(*ids)


@dataclass
class TriOrderSet:
    identity_id: int
    side: str | None
    e0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    source_sample_id: int = -1
    camera_id: int = -1

    def order(self, k: int) -> np.ndarray:
        return (self.e0, self.e1, self.e2)[k]


def build_tri_order_set(
    embed: Callable[[np.ndarray], np.ndarray], records: Sequence[SampleRecord]
) -> TriOrderSet:
    """Embed the order-0/1/2 records of one source sample."""
    by_order: dict[int, SampleRecord] = {}
    for r in records:
        if r.order in by_order:
            raise SchemaError(f"two order-{r.order} records for one source")
        by_order[r.order] = r
    for k in (0, 1, 2):
        if k not in by_order:
            raise SchemaError(f"missing order-{k} record")
    sources = {r.source_sample_id for r in records}
    if len(sources) != 1:
        raise SchemaError(f"records come from several sources: {sorted(sources)}")
    if len({r.identity_id for r in records}) != 1:
        raise SchemaError("records disagree on identity")
    r0 = by_order[0]
    embs = [np.asarray(embed(by_order[k].features), dtype=np.float64) for k in (0, 1, 2)]
    if not embs[0].shape == embs[1].shape == embs[2].shape:
        raise SchemaError("embeddings differ in dimension")
    return TriOrderSet(r0.identity_id, r0.side, *embs, r0.source_sample_id, r0.camera_id)


def build_tri_order_sets(
    embed_batch: Callable[[np.ndarray], np.ndarray], records: Iterable[SampleRecord]
) -> list[TriOrderSet]:
    """Group records by source and embed each order in one batched call.

    Sources lacking any order are rejected. Output is ordered by source id.
    """
    groups: dict[int, dict[int, SampleRecord]] = {}
    for r in records:
        g = groups.setdefault(r.source_sample_id, {})
        if r.order in g:
            raise SchemaError(f"source {r.source_sample_id} has two order-{r.order} records")
        g[r.order] = r
    srcs = sorted(groups)
    for s in srcs:
        missing = [k for k in (0, 1, 2) if k not in groups[s]]
        if missing:
            raise SchemaError(f"source {s} lacks order(s) {missing}")
        if len({r.identity_id for r in groups[s].values()}) != 1:
            raise SchemaError(f"source {s} records disagree on identity")
    if not srcs:
        return []
    embs = [
        np.asarray(embed_batch(np.array([groups[s][k].features for s in srcs])), dtype=np.float64)
        for k in (0, 1, 2)
    ]
    out = []
    for i, s in enumerate(srcs):
        r0 = groups[s][0]
        out.append(TriOrderSet(r0.identity_id, r0.side, embs[0][i], embs[1][i], embs[2][i],
                               s, r0.camera_id))
    return out


def cross_distance(q: TriOrderSet, g: TriOrderSet, cid: CrossDistanceId) -> float:
    _check_valid(cid)
    a, b = ORDER_PAIRS[cid]
    return float(np.linalg.norm(q.order(a) - g.order(b)))


def fuse(q: TriOrderSet, g: TriOrderSet, combination: Combination) -> float:
    """Weighted (default: plain) sum of the selected cross distances."""
    total = 0.0
    for k, cid in enumerate(combination.ids):
        total += combination.weight_of(k) * cross_distance(q, g, cid)
    return total


def _stack(sets: Sequence[TriOrderSet], k: int) -> np.ndarray:
    return np.array([s.order(k) for s in sets])


def fused_distance_matrix(
    queries: Sequence[TriOrderSet], gallery: Sequence[TriOrderSet], combination: Combination
) -> np.ndarray:
    """All query-gallery fused distances at once; row i is query i."""
    out = np.zeros((len(queries), len(gallery)))
    if not len(queries) or not len(gallery):
        return out
    for k, cid in enumerate(combination.ids):
        a, b = ORDER_PAIRS[cid]
        Q, G = _stack(queries, a), _stack(gallery, b)
        diff = Q[:, None, :] - G[None, :, :]
        out += combination.weight_of(k) * np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out
