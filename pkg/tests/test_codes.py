import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pascalnc.codes import (
    CodeSpec,
    ColumnPolicy,
    Generation,
    ScheduleSplit,
    Scheme,
    build_generator,
    columns_csv,
    encode,
    generator_csv,
    make_code,
    mds_score,
    pascal_column_ids,
    pascal_columns,
    pascal_entry,
    random_code,
    random_column,
    read_generator_csv,
    recode_random,
    reencode_pascal,
    select_columns,
    signaling_overhead,
    signaling_symbols,
)
from pascalnc.gf import DecoderState, batch_decode, field_new, mat_inverse, mat_mul, mat_rank

from oracles import rank_by_minors

GF256 = field_new(8)


# -- Pascal matrix -------------------------------------------------------------


def test_pascal_entry_examples():
    assert pascal_entry(256, 0, 5) == 1
    assert pascal_entry(256, 1, 1) == 2
    assert pascal_entry(256, 5, 5) == 252


def test_pascal_entry_range():
    with pytest.raises(IndexError):
        pascal_entry(256, 256, 0)
    with pytest.raises(IndexError):
        pascal_entry(256, 0, -1)


@settings(max_examples=300)
@given(st.integers(0, 255), st.integers(0, 255))
def test_pascal_entry_is_binomial_mod_q(i, j):
    assert pascal_entry(256, i, j) == math.comb(i + j, j) % 256


def test_pascal_recurrence_whole_matrix():
    q = 256
    P = np.array([[pascal_entry(q, i, j) for j in range(q)] for i in range(q)])
    assert np.all(P[0] == 1) and np.all(P[:, 0] == 1)
    assert np.array_equal(P[1:, 1:], (P[:-1, 1:] + P[1:, :-1]) % q)
    # zeros do occur for large indices
    assert (P == 0).any()


def test_pascal_columns_examples():
    assert pascal_columns(GF256, 4, [0]).ravel().tolist() == [1, 1, 1, 1]
    assert pascal_columns(GF256, 3, [1]).ravel().tolist() == [1, 2, 3]
    with pytest.raises(IndexError):
        pascal_columns(GF256, 3, [256])
    with pytest.raises(ValueError):
        pascal_columns(GF256, 3, [])


# -- column selection ----------------------------------------------------------


def test_sequential_columns():
    assert select_columns(GF256, 4, 4) == [1, 2, 3, 4]
    assert select_columns(field_new(2), 2, 4) == [1, 2, 3, 0]
    with pytest.raises(ValueError):
        select_columns(field_new(2), 2, 5)


def test_random_columns_reproducible_and_distinct():
    a = select_columns(GF256, 8, 20, ColumnPolicy("random", 3))
    b = select_columns(GF256, 8, 20, "random:3")
    assert a == b and len(set(a)) == 20
    assert a != select_columns(GF256, 8, 20, "random:4")


def _mds_score_oracle(gf, K, C):
    """Exhaustive rank check of every K-column subset of [I | C]."""
    G = np.concatenate([np.eye(K, dtype=gf.dtype), C], axis=1)
    N = G.shape[1]
    subsets = list(itertools.combinations(range(N), K))
    good = sum(rank_by_minors(G[:, list(s)].tolist(), gf.poly) == K for s in subsets)
    return good / len(subsets)


def test_mds_score_matches_oracle_small():
    rng = np.random.default_rng(0)
    for K, n in [(2, 2), (3, 2), (4, 2), (3, 3)]:
        for _ in range(3):
            C = GF256.random((K, n), rng)
            C[rng.random((K, n)) < 0.3] = 0
            assert mds_score(GF256, C) == pytest.approx(_mds_score_oracle(GF256, K, C), abs=1e-15)


def test_mds_score_sampled_close_to_exhaustive():
    C = pascal_columns(GF256, 10, list(range(1, 11)))
    exact = mds_score(GF256, C)
    sampled = mds_score(GF256, C, samples=20_000, exhaustive_limit=0)
    assert abs(exact - sampled) < 0.02


def test_optimized_at_least_sequential():
    seq = pascal_columns(GF256, 4, select_columns(GF256, 4, 2))
    ids = select_columns(GF256, 4, 2, "optimized:0:8")
    opt = pascal_columns(GF256, 4, ids)
    assert mds_score(GF256, opt) >= mds_score(GF256, seq)
    assert _mds_score_oracle(GF256, 4, opt) >= _mds_score_oracle(GF256, 4, seq)


def test_optimized_small_field_improves():
    # over GF(8) the sequential columns 1..4 are not MDS for K=4
    f = field_new(3)
    seq = mds_score(f, pascal_columns(f, 4, select_columns(f, 4, 4)))
    opt = mds_score(f, pascal_columns(f, 4, select_columns(f, 4, 4, "optimized:1:32")))
    assert opt >= seq


# -- generators ----------------------------------------------------------------


def test_split():
    s = ScheduleSplit.of(4, 6)
    assert (s.K1, s.K2, s.nc1, s.nc2) == (2, 2, 1, 1)
    s = ScheduleSplit.of(5, 12)
    assert (s.K1, s.K2, s.nc1, s.nc2) == (3, 2, 4, 3)


@given(st.integers(2, 60), st.integers(1, 60))
def test_split_invariants(K, extra):
    s = ScheduleSplit.of(K, K + extra)
    assert s.K1 + s.K2 == K and s.nc1 + s.nc2 == extra
    assert s.K1 >= s.K2 and s.nc1 >= s.nc2


def test_codespec_validation():
    with pytest.raises(ValueError):
        CodeSpec("pascalnc", 4, 4)
    with pytest.raises(ValueError):
        CodeSpec("pascalnc-s", 1, 4)
    with pytest.raises(ValueError):
        CodeSpec("pascalnc", 2, 300)
    with pytest.raises(ValueError):
        CodeSpec("snc", 2, 4, signaling="none")
    with pytest.raises(ValueError):
        CodeSpec("bogus", 2, 4)
    assert CodeSpec("snc", 2, 4).signaling == "seeds"
    assert CodeSpec("pascalnc", 2, 4).signaling == "none"


def test_pascalnc_s_layout_fig_example():
    G = build_generator(CodeSpec("pascalnc-s", 4, 6))
    e = np.eye(4, dtype=np.uint8)
    assert np.array_equal(G[:, 0], e[0]) and np.array_equal(G[:, 1], e[1])
    assert G[:, 2].tolist() == [1, 2, 0, 0]  # column 2 of Pascal, first K1 symbols
    assert np.array_equal(G[:, 3], e[2]) and np.array_equal(G[:, 4], e[3])
    assert G[:, 5].tolist() == [1, 3, 6, 10]


def test_pascalnc_layout():
    G = build_generator(CodeSpec("pascalnc", 4, 6))
    assert np.array_equal(G[:, :4], np.eye(4, dtype=np.uint8))
    assert G[:, 4].tolist() == [1, 2, 3, 4] and G[:, 5].tolist() == [1, 3, 6, 10]


@pytest.mark.parametrize("scheme", list(Scheme))
@pytest.mark.parametrize("K,N", [(2, 3), (4, 6), (5, 12), (7, 9)])
def test_identity_pattern_and_block_structure(scheme, K, N):
    spec = CodeSpec(scheme, K, N)
    code = make_code(spec)
    G = code.G
    assert G.shape == (K, N)
    sys_cols = [t for t, j in enumerate(code.systematic) if j is not None]
    assert [code.systematic[t] for t in sys_cols] == list(range(K))
    assert np.array_equal(G[:, sys_cols], np.eye(K, dtype=G.dtype))
    if scheme.scheduled:
        sp = spec.split
        assert code.systematic[: sp.K1] == list(range(sp.K1))
        first_coded = G[:, sp.K1 : sp.K1 + sp.nc1]
        assert not first_coded[sp.K1 :].any()
    else:
        assert code.systematic[:K] == list(range(K))


def test_scheduled_second_block_avoids_first_ids():
    ids = pascal_column_ids(CodeSpec("pascalnc-s", 6, 14))
    assert len(set(ids)) == len(ids)


def test_snc_reconstruct_from_seed():
    spec = CodeSpec("snc", 2, 4, coeff_seed=17)
    G = build_generator(spec)
    for t, desc in enumerate(make_code(spec).descriptors):
        if desc is None:
            continue
        seed, seq = desc
        assert np.array_equal(random_column(GF256, spec, seq, seed), G[:, t])


def test_seed_determinism():
    spec = CodeSpec("snc-s", 5, 11, coeff_seed=3)
    assert np.array_equal(random_code(GF256, spec, 9).G, random_code(GF256, spec, 9).G)
    assert not np.array_equal(random_code(GF256, spec, 9).G, random_code(GF256, spec, 10).G)


def test_coefficient_descriptors():
    spec = CodeSpec("snc", 3, 5, signaling="coefficients")
    code = make_code(spec)
    for t in code.coded_columns:
        assert list(code.descriptors[t]) == code.G[:, t].tolist()


def test_generator_csv_round_trip():
    G = build_generator(CodeSpec("pascalnc-s", 5, 9))
    assert np.array_equal(read_generator_csv(generator_csv(G)), G)
    assert columns_csv([1, 2]) == "position,column_id\n0,1\n1,2\n"


# -- encode / decode -------------------------------------------------------------


@pytest.mark.parametrize("scheme", list(Scheme))
def test_systematic_identity(scheme):
    rng = np.random.default_rng(1)
    spec = CodeSpec(scheme, 5, 9)
    code = make_code(spec)
    X = GF256.random((3, 5), rng)
    pkts = encode(GF256, Generation(X, 4), code)
    assert [p.tx_slot for p in pkts] == list(range(1, 10))
    got = {p.systematic: p.payload for p in pkts if p.systematic is not None}
    assert np.array_equal(np.stack([got[j] for j in range(5)], axis=1), X)
    for p in pkts:
        assert p.generation_id == 4


def test_encode_k1_scalar_multiples():
    rng = np.random.default_rng(2)
    X = GF256.random((4, 1), rng)
    for p in encode(GF256, Generation(X), make_code(CodeSpec("snc", 1, 4))):
        c = int(p.coeff[0])
        assert np.array_equal(p.payload, GF256.mul(c, X[:, 0]))


def test_encode_dimension_mismatch():
    with pytest.raises(ValueError):
        encode(GF256, Generation(np.zeros((2, 3), np.uint8)), make_code(CodeSpec("snc", 2, 4)))


def test_any_three_innovative_decode():
    rng = np.random.default_rng(3)
    code = make_code(CodeSpec("snc", 3, 5, coeff_seed=5))
    X = GF256.random((2, 3), rng)
    pkts = encode(GF256, Generation(X), code)
    for sub in itertools.combinations(pkts, 3):
        A = np.stack([p.coeff for p in sub])
        if mat_rank(GF256, A) < 3:
            continue
        Y = np.stack([p.payload for p in sub])  # rows: packets
        assert np.array_equal(mat_mul(GF256, mat_inverse(GF256, A), Y).T, X)


def test_mds_score_one_decodes_any_k():
    # exhaustive: when every K-subset is invertible, every K packets decode X
    rng = np.random.default_rng(4)
    for K, N in [(3, 6), (4, 8), (6, 12)]:
        spec = CodeSpec("pascalnc", K, N, column_policy="optimized:0:4")
        code = make_code(spec)
        C = code.G[:, K:]
        assert mds_score(GF256, C) == 1.0
        X = GF256.random((2, K), rng)
        pkts = encode(GF256, Generation(X), code)
        for sub in itertools.combinations(range(N), K):
            rec = batch_decode(GF256, [pkts[t].coeff for t in sub], [pkts[t].payload for t in sub], K)
            assert sorted(rec) == list(range(K))
            assert all(np.array_equal(rec[j], X[:, j]) for j in rec)


# -- relaying --------------------------------------------------------------------


def test_reencode_all_equals_encode():
    rng = np.random.default_rng(5)
    code = make_code(CodeSpec("pascalnc-s", 4, 8))
    X = GF256.random((3, 4), rng)
    src = encode(GF256, Generation(X), code)
    out = reencode_pascal(GF256, code, [(j, X[:, j]) for j in range(4)])
    for a, b in zip(src, out):
        assert np.array_equal(a.payload, b.payload) and np.array_equal(a.coeff, b.coeff)


def test_reencode_nothing_recovered():
    code = make_code(CodeSpec("pascalnc", 3, 6))
    assert reencode_pascal(GF256, code, []) == [None] * 6


def test_reencode_first_subblock_only():
    rng = np.random.default_rng(6)
    spec = CodeSpec("pascalnc-s", 4, 8)
    code = make_code(spec)
    sp = spec.split
    X = GF256.random((2, 4), rng)
    out = reencode_pascal(GF256, code, [(j, X[:, j]) for j in range(sp.K1)])
    first = list(range(sp.K1 + sp.nc1))
    assert all(out[t] is not None for t in first)
    assert all(out[t] is None for t in range(len(first), 8))


def test_reencode_unknown_index():
    with pytest.raises(IndexError):
        reencode_pascal(GF256, make_code(CodeSpec("pascalnc", 3, 6)), [(5, np.zeros(1, np.uint8))])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["pascalnc", "pascalnc-s"]))
def test_reencode_conservation(seed, scheme):
    """A node hearing every re-encoded packet recovers exactly the relay's set."""
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 7))
    N = K + int(rng.integers(1, 7))
    code = make_code(CodeSpec(scheme, K, N))
    X = GF256.random((2, K), rng)
    src = encode(GF256, Generation(X), code)
    relay = DecoderState(GF256, K, 2)
    for p in src:
        if rng.random() < 0.5:
            relay.absorb(p.coeff, p.payload)
    rec = relay.recovered()
    out = reencode_pascal(GF256, code, rec)
    dest = DecoderState(GF256, K, 2)
    for p in out:
        if p is not None:
            dest.absorb(p.coeff, p.payload)
    assert dest.recovered_indices() == [j for j, _ in rec]
    for j, x in dest.recovered():
        assert np.array_equal(x, X[:, j])


def test_recode_properties():
    rng = np.random.default_rng(7)
    code = make_code(CodeSpec("snc", 4, 8))
    X = GF256.random((3, 4), rng)
    pkts = encode(GF256, Generation(X), code)
    one = recode_random(GF256, pkts[:1], 3, 11)
    for p in one:
        assert mat_rank(GF256, np.stack([p.coeff, pkts[0].coeff])) <= 1
    buf = [pkts[4], pkts[5], pkts[0]]
    out = recode_random(GF256, buf, 4, 12)
    B = np.stack([p.coeff for p in buf])
    for p in out:
        assert mat_rank(GF256, np.vstack([B, p.coeff])) == mat_rank(GF256, B)
        # payload stays consistent with the composed coefficients
        assert np.array_equal(p.payload, GF256.combine(p.coeff, X.T))
    assert mat_rank(GF256, np.stack([p.coeff for p in out])) <= mat_rank(GF256, B)
    again = recode_random(GF256, buf, 4, 12)
    assert all(np.array_equal(a.coeff, b.coeff) for a, b in zip(out, again))
    with pytest.raises(ValueError):
        recode_random(GF256, [], 2, 0)


# -- signaling -------------------------------------------------------------------


def test_overhead_examples():
    assert signaling_overhead(CodeSpec("snc", 30, 50), 6, 1500) == pytest.approx(0.4, abs=1e-12)
    assert signaling_overhead(CodeSpec("snc", 30, 50), 10, 1500) == pytest.approx(2 / 3, abs=1e-12)
    assert f"{signaling_overhead(CodeSpec('snc', 30, 50), 10, 1500):.2f}" == "0.67"
    assert signaling_overhead(CodeSpec("pascalnc-s", 30, 50, column_policy="optimized"), 6, 1500) == 0.0
    spec = CodeSpec("snc", 31, 50, signaling="coefficients")
    assert signaling_overhead(spec, 6, 1500) == pytest.approx(100 * 31 / 1500)
    assert signaling_symbols(CodeSpec("pascalnc", 3, 6, signaling="column_ids"), 4) == 2
    with pytest.raises(ValueError):
        signaling_overhead(spec, 6, 0)
