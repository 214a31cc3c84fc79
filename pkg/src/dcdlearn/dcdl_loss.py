"""Multi-order batch-hard triplet loss plus per-batch center loss."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .numerics import MlpParams, Rng, mlp_backward, mlp_forward
from .synthcam import SampleRecord


@dataclass
class TripletConfig:
    margin_mode: str = "hinge"
    margin: float = 0.3
    lam: float = 0.001

    def __post_init__(self):
        if self.margin_mode not in ("hinge", "softplus"):
            raise ConfigError("margin_mode must be 'hinge' or 'softplus'")
        if self.margin_mode == "hinge" and not np.isfinite(self.margin):
            raise ConfigError("hinge margin must be finite")
        if self.margin < 0 or self.lam < 0:
            raise ConfigError("margin and lambda must be >= 0")


@dataclass
class Batch:
    features: np.ndarray  # n x d_f
    labels: np.ndarray  # identity per row
    orders: np.ndarray
    sources: np.ndarray
    sample_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def lineage_index(
    records: Sequence[SampleRecord], orders: Sequence[int] = (0, 1, 2)
) -> dict[int, list[tuple[str | None, list[SampleRecord]]]]:
    """identity -> [(side, records in ``orders`` order)] for every complete lineage."""
    by_source: dict[int, dict[int, SampleRecord]] = defaultdict(dict)
    for r in records:
        by_source[r.source_sample_id][r.order] = r
    out: dict[int, list] = defaultdict(list)
    for src in sorted(by_source):
        group = by_source[src]
        if all(k in group for k in orders):
            r0 = group.get(0, group[orders[0]])
            out[r0.identity_id].append((r0.side, [group[k] for k in orders]))
    return dict(out)


def all_identities(records: Sequence[SampleRecord]) -> list[int]:
    return sorted({r.identity_id for r in records})


def sample_batch(
    records: Sequence[SampleRecord] | dict,
    K: int,
    rng: Rng,
    orders: Sequence[int] = (0, 1, 2),
    sources_per_identity: int = 2,
    identities: Sequence[int] | None = None,
) -> Batch:
    """Draw K identities without replacement, then their source lineages.

    With two sources per identity, one X-side and one Y-side lineage are
    taken whenever the identity has both. ``records`` may be a prebuilt
    :func:`lineage_index` (pass ``identities`` with it).
    """
    if K < 1:
        raise ConfigError("K must be >= 1")
    if isinstance(records, dict):
        index = records
        idents = sorted(identities if identities is not None else index)
    else:
        index = lineage_index(records, orders)
        idents = all_identities(records)
    if K > len(idents):
        raise DataError(f"batch needs {K} identities but only {len(idents)} exist")
    eligible = [i for i in idents if len(index.get(i, ())) >= sources_per_identity]
    if K > len(eligible):
        bad = next(i for i in idents if len(index.get(i, ())) < sources_per_identity)
        raise DataError(
            f"identity {bad} has {len(index.get(bad, ()))} complete lineage(s); "
            f"need {sources_per_identity} for {K}-identity batches"
        )
    rows: list[SampleRecord] = []
    for ident in rng.sample(eligible, K):
        lineages = index[ident]
        by_side = defaultdict(list)
        for k, (side, _) in enumerate(lineages):
            by_side[side].append(k)
        picked: list[int] = []
        if sources_per_identity == 2 and len(by_side.get("X", ())) and len(by_side.get("Y", ())):
            picked = [by_side["X"][rng.integers(len(by_side["X"]))],
                      by_side["Y"][rng.integers(len(by_side["Y"]))]]
        else:
            picked = rng.sample(range(len(lineages)), sources_per_identity)
        for k in picked:
            rows.extend(lineages[k][1])
    return Batch(
        features=np.array([r.features for r in rows]),
        labels=np.array([r.identity_id for r in rows]),
        orders=np.array([r.order for r in rows]),
        sources=np.array([r.source_sample_id for r in rows]),
        sample_ids=np.array([r.sample_id for r in rows]),
    )


def pairwise_distance_matrix(E: np.ndarray) -> np.ndarray:
    E = np.asarray(E, dtype=np.float64)
    diff = E[:, None, :] - E[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _check_labels(labels: np.ndarray) -> None:
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise DataError("triplet loss needs at least two identities in the batch")
    if np.any(counts < 2):
        raise DataError(f"identity {uniq[np.argmin(counts)]} has a single sample in the batch")


def hardest_pairs(
    E: np.ndarray, labels: np.ndarray, dist: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per anchor: (hardest positive index, distance, hardest negative index, distance).

    Ties resolve to the lowest sample index.
    """
    labels = np.asarray(labels)
    dist = pairwise_distance_matrix(E) if dist is None else dist
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(len(labels), dtype=bool)
    p_idx = np.argmax(np.where(pos, dist, -np.inf), axis=1)
    n_idx = np.argmin(np.where(~same, dist, np.inf), axis=1)
    rows = np.arange(len(labels))
    return p_idx, dist[rows, p_idx], n_idx, dist[rows, n_idx]


def _pair_grad(grad: np.ndarray, E: np.ndarray, a: np.ndarray, b: np.ndarray,
               d: np.ndarray, coef: np.ndarray) -> None:
    """Accumulate coef * d||E_a - E_b|| into grad (zero where the points coincide)."""
    safe = np.where(d > 0, d, 1.0)
    u = (E[a] - E[b]) / safe[:, None] * (d > 0)[:, None] * coef[:, None]
    np.add.at(grad, a, u)
    np.add.at(grad, b, -u)


def batch_hard_triplet_loss(
    E: np.ndarray, labels, config: TripletConfig
) -> tuple[float, np.ndarray]:
    """Mean over anchors of the hinge or softplus batch-hard term; gradient w.r.t. E."""
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels)
    _check_labels(labels)
    p_idx, hp, n_idx, hn = hardest_pairs(E, labels)
    z = hp - hn
    if config.margin_mode == "hinge":
        terms = np.maximum(0.0, config.margin + z)
        dterm = (config.margin + z > 0).astype(np.float64)
    else:
        terms = np.logaddexp(0.0, z)
        dterm = 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic sigmoid
    n = len(labels)
    coef = dterm / n
    grad = np.zeros_like(E)
    anchors = np.arange(n)
    _pair_grad(grad, E, anchors, p_idx, hp, coef)
    _pair_grad(grad, E, anchors, n_idx, hn, -coef)
    return float(terms.mean()), grad


def batch_centers(E: np.ndarray, labels) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    out = {}
    for l in np.unique(labels):
        rows = E[labels == l]
        # shifted mean: exact when all rows are equal
        out[int(l)] = rows[0] + (rows - rows[0]).mean(axis=0)
    return out


def batch_center_loss(E: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """0.5 * sum over samples of ||e - c_label||^2 with per-batch means c.

    Treating the centers as constants gives the exact gradient here: the
    deviations of each identity sum to zero, so the center's own
    contribution cancels.
    """
    E = np.asarray(E, dtype=np.float64)
    if len(E) == 0:
        raise DataError("center loss needs a non-empty batch")
    labels = np.asarray(labels)
    centers = batch_centers(E, labels)
    C = np.array([centers[int(l)] for l in labels])
    dev = E - C
    return float(0.5 * np.sum(dev * dev)), dev


def dcdl_objective(
    batch: Batch, params: MlpParams, config: TripletConfig
) -> tuple[float, MlpParams, dict[str, float]]:
    """Triplet + lambda * center loss through the embedding network."""
    E = mlp_forward(params, batch.features)
    trip, g_trip = batch_hard_triplet_loss(E, batch.labels, config)
    if config.lam > 0:
        cen, g_cen = batch_center_loss(E, batch.labels)
    else:
        cen, g_cen = 0.0, np.zeros_like(E)
    loss = trip + config.lam * cen
    grads, _ = mlp_backward(params, batch.features, g_trip + config.lam * g_cen)
    return float(loss), grads, {"triplet": trip, "center": cen}
