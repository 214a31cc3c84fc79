import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcdlearn.errors import SchemaError, UsageError
from dcdlearn.multiorder import (
    EXCLUDED_IDS,
    MIRROR,
    ORDER_PAIRS,
    Combination,
    CrossDistanceId as D,
    TriOrderSet,
    build_tri_order_set,
    build_tri_order_sets,
    cross_distance,
    enumerate_valid_ids,
    fuse,
    fused_distance_matrix,
    parse_combination,
)
from dcdlearn.numerics import Rng
from dcdlearn.synthcam import SampleRecord


def random_set(rng, dim=5, ident=0, src=0):
    return TriOrderSet(ident, "X", rng.normals(dim), rng.normals(dim), rng.normals(dim), src)


def test_node_pair_census():
    # six nodes (q0,q1,q2,g0,g1,g2): 15 pairs, 9 cross the query/gallery divide
    nodes = [("q", k) for k in range(3)] + [("g", k) for k in range(3)]
    pairs = list(itertools.combinations(nodes, 2))
    crossing = [(a, b) for a, b in pairs if a[0] != b[0]]
    assert len(pairs) == 15 and len(crossing) == 9
    assert sorted(ORDER_PAIRS.values()) == sorted((a[1], b[1]) for a, b in crossing)


def test_enumerate_valid_ids():
    ids = enumerate_valid_ids()
    assert len(ids) == 9 and len(set(ids)) == 9
    assert not set(ids) & set(EXCLUDED_IDS)
    assert len(EXCLUDED_IDS) == 6


@pytest.mark.parametrize("cid", EXCLUDED_IDS)
def test_excluded_ids_raise(cid):
    with pytest.raises(UsageError, match="same-source pair excluded in testing"):
        Combination.of(cid)
    with pytest.raises(UsageError, match=cid.label):
        parse_combination(cid.label)


def test_parse_combination():
    c = parse_combination("d1+d2+d10")
    assert c.ids == (D.D1, D.D2, D.D10)
    assert parse_combination(" D10 + d1+D2 ") == c
    assert str(c) == "d1+d2+d10"
    for bad in ("", "d1+", "x3", "d16", "d1+d1"):
        with pytest.raises(UsageError):
            parse_combination(bad)


def test_mirror_is_involution():
    for cid in enumerate_valid_ids():
        assert MIRROR[MIRROR[cid]] == cid
        a, b = ORDER_PAIRS[cid]
        assert ORDER_PAIRS[MIRROR[cid]] == (b, a)


def test_swap_symmetry_1000_pairs():
    rng = Rng(0)
    ids = enumerate_valid_ids()
    for _ in range(1000):
        q, g = random_set(rng), random_set(rng)
        k = 1 + rng.integers(len(ids))
        combo = Combination.of(*rng.sample(ids, k))
        assert fuse(q, g, combo) == pytest.approx(fuse(g, q, combo.mirror()), abs=1e-12)


def test_identity_sets_all_distances_coincide():
    rng = Rng(1)
    e_q, e_g = rng.normals(4), rng.normals(4)
    q = TriOrderSet(0, "X", e_q, e_q, e_q)
    g = TriOrderSet(1, "Y", e_g, e_g, e_g)
    vals = {cross_distance(q, g, cid) for cid in enumerate_valid_ids()}
    assert len(vals) == 1


def test_weighted_fuse():
    rng = Rng(2)
    q, g = random_set(rng), random_set(rng)
    c = Combination((D.D1, D.D2), (2.0, 0.5))
    assert fuse(q, g, c) == pytest.approx(2 * cross_distance(q, g, D.D1) + 0.5 * cross_distance(q, g, D.D2))


def test_distance_matrix_matches_pairwise():
    rng = Rng(3)
    qs = [random_set(rng) for _ in range(4)]
    gs = [random_set(rng) for _ in range(6)]
    c = parse_combination("d1+d8+d14")
    M = fused_distance_matrix(qs, gs, c)
    for i, q in enumerate(qs):
        for j, g in enumerate(gs):
            assert M[i, j] == pytest.approx(fuse(q, g, c), abs=1e-12)


@given(st.floats(0.01, 100.0), st.integers(0, 1000))
@settings(max_examples=40)
def test_positive_scaling(scale, seed):
    rng = Rng(seed)
    q, g = random_set(rng), random_set(rng)
    c = parse_combination("d1+d2+d10")
    scaled = [TriOrderSet(s.identity_id, s.side, scale * s.e0, scale * s.e1, scale * s.e2) for s in (q, g)]
    assert fuse(*scaled, c) == pytest.approx(scale * fuse(q, g, c), rel=1e-12)


def lineage(src, ident, side="X", dim=3, seed=0):
    rng = Rng(seed + src)
    return [SampleRecord(src + 100 * k, ident, 0, side, k, src, rng.normals(dim)) for k in range(3)]


def test_build_tri_order_set():
    recs = lineage(1, 7)
    s = build_tri_order_set(lambda v: 2 * v, recs)
    assert s.identity_id == 7 and s.source_sample_id == 1
    assert np.array_equal(s.e1, 2 * recs[1].features)
    with pytest.raises(SchemaError):
        build_tri_order_set(lambda v: v, recs[:2])
    with pytest.raises(SchemaError):
        build_tri_order_set(lambda v: v, recs[:2] + lineage(2, 7)[2:])


def test_build_tri_order_sets_batched_matches_single():
    recs = lineage(0, 1) + lineage(1, 2, "Y") + lineage(2, 1)
    batched = build_tri_order_sets(lambda a: a * 3.0, recs[::-1])
    assert [s.source_sample_id for s in batched] == [0, 1, 2]
    for s in batched:
        single = build_tri_order_set(lambda v: v * 3.0, [r for r in recs if r.source_sample_id == s.source_sample_id])
        assert all(np.array_equal(s.order(k), single.order(k)) for k in range(3))
    with pytest.raises(SchemaError):
        build_tri_order_sets(lambda a: a, recs[:-1])
