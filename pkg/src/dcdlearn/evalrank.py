"""Ranking evaluation: AP/mAP, CMC, combination ablation and lambda sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .configio import atomic_write_text
from .errors import DataError, UsageError
from .multiorder import Combination, TriOrderSet, fused_distance_matrix, parse_combination

ABLATION_COMBINATIONS = [
    "d1", "d2", "d8", "d10", "d11",
    "d1+d2", "d1+d8", "d1+d10", "d1+d11",
    "d1+d2+d8", "d1+d2+d10", "d1+d2+d11",
    "d1+d2+d8+d10", "d1+d2+d8+d11",
    "d1+d2+d8+d10+d11",
]


@dataclass
class QueryResult:
    query_id: int
    query_identity: int
    gallery_ids: np.ndarray  # ranked, best first
    distances: np.ndarray
    positives: np.ndarray  # bool per ranked entry

    @property
    def num_positives(self) -> int:
        return int(self.positives.sum())

    def first_positive_rank(self) -> int | None:
        hits = np.flatnonzero(self.positives)
        return int(hits[0]) + 1 if len(hits) else None


@dataclass
class EvalProtocol:
    max_rank: int = 10
    query_side: str = "X"

    @property
    def gallery_side(self) -> str:
        return "Y" if self.query_side == "X" else "X"


@dataclass
class EvalReport:
    combination: str
    mAP: float
    cmc: list[float]
    num_queries: int
    num_skipped: int = 0
    config: dict = field(default_factory=dict)

    @property
    def rank1(self) -> float:
        return self.cmc[0]


def _rank_from_distances(query: TriOrderSet, gallery: Sequence[TriOrderSet], dist: np.ndarray):
    keep = [i for i, g in enumerate(gallery) if g.source_sample_id != query.source_sample_id]
    if not keep:
        raise UsageError("gallery is empty")
    ids = np.array([gallery[i].source_sample_id for i in keep])
    d = dist[keep]
    order = np.lexsort((ids, d))
    pos = np.array([gallery[keep[i]].identity_id == query.identity_id for i in order], dtype=bool)
    return QueryResult(query.source_sample_id, query.identity_id, ids[order], d[order], pos)


def rank_gallery(
    query: TriOrderSet, gallery: Sequence[TriOrderSet], combination: Combination
) -> QueryResult:
    """Sort the gallery by fused distance; ties go to the lower sample id.

    Entries sharing the query's source are dropped.
    """
    if not gallery:
        raise UsageError("gallery is empty")
    dist = fused_distance_matrix([query], gallery, combination)[0]
    return _rank_from_distances(query, gallery, dist)


def compute_ap(result: QueryResult) -> float | None:
    """Mean of j / rank_j over positives; None when the query has no positive."""
    ranks = np.flatnonzero(result.positives) + 1
    if len(ranks) == 0:
        return None
    j = np.arange(1, len(ranks) + 1)
    return float(np.mean(j / ranks))


def compute_cmc(results: Sequence[QueryResult], max_rank: int = 10) -> list[float]:
    """cmc[k-1] = share of queries whose first positive sits at rank <= k.

    Queries without any positive are left out.
    """
    firsts = [r.first_positive_rank() for r in results]
    firsts = [f for f in firsts if f is not None]
    if not firsts:
        return [0.0] * max_rank
    firsts_arr = np.array(firsts)
    return [float(np.mean(firsts_arr <= k)) for k in range(1, max_rank + 1)]


def evaluate(
    test_sets: Sequence[TriOrderSet],
    combination: Combination | str,
    protocol: EvalProtocol | None = None,
    config: dict | None = None,
) -> EvalReport:
    """Query-side sets against the other side's gallery."""
    protocol = protocol or EvalProtocol()
    if isinstance(combination, str):
        combination = parse_combination(combination)
    queries = sorted((s for s in test_sets if s.side == protocol.query_side),
                     key=lambda s: s.source_sample_id)
    gallery = sorted((s for s in test_sets if s.side == protocol.gallery_side),
                     key=lambda s: s.source_sample_id)
    if not queries or not gallery:
        raise DataError(
            f"evaluation needs sets on both sides (got {len(queries)} query, {len(gallery)} gallery)"
        )
    dist = fused_distance_matrix(queries, gallery, combination)
    results = [_rank_from_distances(q, gallery, dist[i]) for i, q in enumerate(queries)]
    aps = [compute_ap(r) for r in results]
    valid = [a for a in aps if a is not None]
    kept = [r for r, a in zip(results, aps) if a is not None]
    mAP = float(np.mean(valid)) if valid else 0.0
    return EvalReport(
        combination=str(combination),
        mAP=mAP,
        cmc=compute_cmc(kept, protocol.max_rank),
        num_queries=len(valid),
        num_skipped=len(aps) - len(valid),
        config=dict(config or {}),
    )


def ablate_combinations(
    test_sets: Sequence[TriOrderSet],
    combinations: Sequence[Combination | str] | None = None,
    protocol: EvalProtocol | None = None,
    config: dict | None = None,
) -> list[EvalReport]:
    combos = [parse_combination(c) if isinstance(c, str) else c
              for c in (combinations or ABLATION_COMBINATIONS)]
    return [evaluate(test_sets, c, protocol, config) for c in combos]


@dataclass
class SweepRow:
    lam: float
    rank1: float
    mAP: float


def sweep_lambda(
    train_and_eval: Callable[[float], EvalReport], lambdas: Sequence[float]
) -> list[SweepRow]:
    """Retrain from scratch per lambda via the closure; one row each."""
    if not lambdas:
        raise UsageError("lambda list is empty")
    rows = []
    for lam in lambdas:
        report = train_and_eval(float(lam))
        rows.append(SweepRow(float(lam), report.rank1, report.mAP))
    return rows


# --- report files -------------------------------------------------------------


def _header_comment(meta: dict | None) -> str:
    if not meta:
        return ""
    return "# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n"


def reports_to_csv(reports: Sequence[EvalReport], max_rank: int = 10, meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_header_comment(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["combination", "num_queries", "mAP"] + [f"rank{k}" for k in range(1, max_rank + 1)])
    for r in reports:
        w.writerow([r.combination, r.num_queries, repr(r.mAP)] + [repr(v) for v in r.cmc[:max_rank]])
    return buf.getvalue()


def read_reports_csv(path_or_text: str, from_text: bool = False) -> list[dict]:
    text = path_or_text if from_text else open(path_or_text, encoding="utf-8").read()
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def reports_to_markdown(reports: Sequence[EvalReport], ranks: Sequence[int] = (1, 5, 10)) -> str:
    head = ["combination", "queries", "mAP (%)"] + [f"Rank-{k} (%)" for k in ranks]
    rows = [
        [r.combination, str(r.num_queries), f"{100 * r.mAP:.1f}"]
        + [f"{100 * r.cmc[k - 1]:.1f}" if k <= len(r.cmc) else "-" for k in ranks]
        for r in reports
    ]
    widths = [max(len(head[i]), *(len(row[i]) for row in rows)) if rows else len(head[i])
              for i in range(len(head))]

    def line(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |\n"

    out = line(head) + "|" + "|".join("-" * (w + 2) for w in widths) + "|\n"
    return out + "".join(line(r) for r in rows)


def write_reports(prefix, reports: Sequence[EvalReport], meta: dict | None = None,
                  max_rank: int = 10) -> tuple[str, str]:
    """Write ``<prefix>.csv`` and ``<prefix>.md``; returns both paths."""
    csv_path, md_path = f"{prefix}.csv", f"{prefix}.md"
    atomic_write_text(csv_path, reports_to_csv(reports, max_rank, meta))
    atomic_write_text(md_path, _header_comment(meta).replace("# ", "<!-- ", 1).rstrip("\n")
                      + (" -->\n\n" if meta else "") + reports_to_markdown(reports))
    return csv_path, md_path


def sweep_to_csv(rows: Sequence[SweepRow], meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_header_comment(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "rank1", "mAP"])
    for r in rows:
        w.writerow([repr(r.lam), repr(r.rank1), repr(r.mAP)])
    return buf.getvalue()
