import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from multikg.evaluation import (EvaluationError, RankingReport, alignment_eval, link_prediction_eval,
                                rank_batch, rank_entity, similarity_matrix, typing_eval)
from multikg.kgdata import KnownFilter
from multikg.models import ModelKind, init_params

rank_lists = st.lists(st.integers(1, 500), min_size=1, max_size=60)


def random_kg_case(seed, tag="DistMult", n_e=30, n_r=3):
    """Random KG plus a model with small integer parameters, so score ties are common."""
    rng = np.random.default_rng(seed)
    tri = np.unique(rng.integers(0, [n_e, n_r, n_e], size=(120, 3)), axis=0)
    rng.shuffle(tri)
    train, test = tri[:90], tri[90:]
    P = init_params(ModelKind(tag, "L1"), 4, n_e, n_r, seed=seed)
    for name in P.tables:
        P.tables[name][:] = rng.integers(-1, 2, size=P.tables[name].shape)
    return P, train, test


def brute_ranks(P, test, known):
    tables = {k: v.tolist() for k, v in P.tables.items()}
    out = []
    for h, r, t in test.tolist():
        head_s = [oracles.score(P.kind, tables, e, r, t) for e in range(P.n_entities)]
        tail_s = [oracles.score(P.kind, tables, h, r, e) for e in range(P.n_entities)]
        hf = [e for e in range(P.n_entities) if (e, r, t) in known]
        tf = [e for e in range(P.n_entities) if (h, r, e) in known]
        out += [oracles.brute_rank(head_s, h, hf), oracles.brute_rank(tail_s, t, tf)]
    return np.array(out, dtype=float)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("tag", ["DistMult", "TransE"])
def test_ranks_match_enumeration(seed, tag):
    P, train, test = random_kg_case(seed, tag)
    known = {tuple(x) for x in train.tolist()}
    kf = KnownFilter(train, P.n_entities, P.n_relations)
    filtered = link_prediction_eval(P, test, kf).ranks
    raw = link_prediction_eval(P, test, None).ranks
    np.testing.assert_array_equal(filtered, brute_ranks(P, test, known))
    np.testing.assert_array_equal(raw, brute_ranks(P, test, set()))


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("tag", ["RotatE", "HolE", "TransH", "Analogy"])
def test_ranks_match_enumeration_continuous(seed, tag):
    # rounding differs between routes for these models, so parameters are
    # continuous and exact ties have probability zero
    P, train, test = random_kg_case(seed, tag)
    rng = np.random.default_rng(seed + 100)
    for name in P.tables:
        P.tables[name][:] = rng.normal(size=P.tables[name].shape)
    known = {tuple(x) for x in train.tolist()}
    kf = KnownFilter(train, P.n_entities, P.n_relations)
    np.testing.assert_array_equal(link_prediction_eval(P, test, kf).ranks, brute_ranks(P, test, known))
    np.testing.assert_array_equal(link_prediction_eval(P, test, None).ranks, brute_ranks(P, test, set()))


def test_ties_present_in_oracle_cases():
    # the enumeration comparison above only exercises the tie policy if ties happen
    P, _, test = random_kg_case(0)
    tables = {k: v.tolist() for k, v in P.tables.items()}
    h, r, t = test[0].tolist()
    s = [oracles.score(P.kind, tables, h, r, e) for e in range(P.n_entities)]
    assert len(set(s)) < len(s)


def test_mid_rank_examples():
    assert rank_entity([0.5, 0.5, 0.5, 0.5], 0) == 2.0
    assert rank_entity([3.0, 2.0, 1.0], 2) == 3.0
    assert rank_entity([3.0, 2.0, 1.0], 2, filter_ids=[0, 2]) == 2.0
    assert rank_entity([1.0], 0) == 1.0


def test_rank_errors():
    with pytest.raises(EvaluationError):
        rank_entity([1.0, 2.0], 5)
    with pytest.raises(EvaluationError, match="NaN"):
        rank_entity([1.0, np.nan], 0)
    with pytest.raises(EvaluationError):
        RankingReport([])
    with pytest.raises(EvaluationError):
        RankingReport([0, 1])


@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_filtered_rank_never_exceeds_raw(seed, n):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 5, size=n).astype(float)
    truth = int(rng.integers(n))
    filt = rng.choice(n, size=int(rng.integers(0, n)), replace=False)
    assert rank_entity(s, truth, filt) <= rank_entity(s, truth)


@given(st.integers(0, 2**32 - 1))
def test_rank_invariant_under_monotone_map(seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(-3, 4, size=25).astype(float)
    truth = int(rng.integers(25))
    for f in (np.exp, lambda x: 3 * x - 7, np.arctan, lambda x: x ** 3):
        assert rank_entity(f(s), truth) == rank_entity(s, truth)


@given(rank_lists)
def test_metric_identities(ranks):
    rep = RankingReport(ranks, ks=(1, 3, 10, 100))
    h = [rep.hits_at(k) for k in (1, 3, 10, 100, 1000)]
    assert all(a <= b for a, b in zip(h, h[1:]))
    # Jensen: E[1/X] >= 1/E[X]
    assert rep.mrr >= 1.0 / rep.mr - 1e-15
    assert 0.0 < rep.mrr <= 1.0 and rep.mr >= 1.0


def test_report_json_shape(tmp_path):
    rep = RankingReport([1, 2, 4, 20], task="lp", filter="train")
    d = json.loads(rep.to_json())
    assert set(d) == {"task", "hits", "mr", "mrr", "n_queries", "filter"}
    assert d["hits"] == {"1": 0.25, "3": 0.5, "10": 0.75}
    assert d["mr"] == 6.75 and d["n_queries"] == 4
    assert d["mrr"] == pytest.approx((1 + 0.5 + 0.25 + 0.05) / 4)
    rep.write_ranks(tmp_path / "r.tsv")
    assert (tmp_path / "r.tsv").read_text().splitlines()[3] == "3\t20"


@pytest.mark.parametrize("workers,chunk", [(2, 3), (4, 1), (3, 7)])
def test_sharded_equals_serial(workers, chunk):
    P, train, test = random_kg_case(3, "TransE")
    kf = KnownFilter(train, P.n_entities, P.n_relations)
    serial = link_prediction_eval(P, test, kf)
    par = link_prediction_eval(P, test, kf, workers=workers, chunk=chunk)
    assert serial.to_json() == par.to_json()
    np.testing.assert_array_equal(serial.ranks, par.ranks)


def test_candidate_restriction():
    P, train, test = random_kg_case(5)
    cand = np.unique(test[:, [0, 2]])
    rep = link_prediction_eval(P, test, None, candidates=cand)
    full = link_prediction_eval(P, test, None)
    assert (rep.ranks <= full.ranks).all()
    assert rep.ranks.max() <= len(cand)
    with pytest.raises(EvaluationError, match="candidate"):
        link_prediction_eval(P, test, None, candidates=cand[1:])


def test_typing_ranks_types_only():
    P = init_params(ModelKind("DistMult"), 4, 10, 2, seed=0)
    types = np.array([7, 8, 9])
    rep = typing_eval(P, [[0, 8], [1, 9], [2, 7]], 1, types)
    assert rep.task == "et" and rep.ranks.max() <= 3
    assert typing_eval(P, [[0, 8], [3, 8]], 1, [8]).hits_at(1) == 1.0
    with pytest.raises(EvaluationError, match="type vocabulary"):
        typing_eval(P, [[0, 8]], 1, [])


def test_typing_filter_removes_other_known_types():
    P = init_params(ModelKind("DistMult"), 4, 6, 1, seed=2)
    types = [3, 4, 5]
    raw = typing_eval(P, [[0, 3]], 0, types).ranks[0]
    kf = KnownFilter([[0, 0, 4], [0, 0, 5]], 6, 1)
    assert typing_eval(P, [[0, 3]], 0, types, kf).ranks[0] == 1 <= raw


# similarity


@given(st.integers(0, 2**32 - 1))
def test_cosine_self_similarity(seed):
    X = np.random.default_rng(seed).normal(size=(5, 7))
    np.testing.assert_allclose(np.diag(similarity_matrix(X, X)), 1.0, rtol=1e-12)


def test_similarity_kinds():
    X = np.array([[1.0, 0.0], [0.0, 0.0]])
    Y = np.array([[2.0, 0.0], [0.0, 3.0]])
    np.testing.assert_allclose(similarity_matrix(X, Y), [[1, 0], [0, 0]])
    np.testing.assert_allclose(similarity_matrix(X, Y, "inner"), [[2, 0], [0, 0]])
    np.testing.assert_allclose(similarity_matrix(X, Y, "euclidean"), [[-1, -np.sqrt(10)], [-2, -3]])
    with pytest.raises(ValueError, match="dimension"):
        similarity_matrix(X, np.ones((2, 3)))
    with pytest.raises(ValueError, match="unknown"):
        similarity_matrix(X, Y, "jaccard")


@pytest.mark.parametrize("seed", range(10))
def test_csls_matches_two_loop(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(10, 6)), rng.normal(size=(10, 6))
    k = int(rng.integers(1, 6))
    got = similarity_matrix(X, Y, "csls", csls_k=k)
    np.testing.assert_allclose(got, oracles.csls_two_loop(X.tolist(), Y.tolist(), k), rtol=0, atol=1e-10)


def test_csls_identical_orthonormal_sets():
    Q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(6, 6)))
    S = similarity_matrix(Q, Q, "csls", csls_k=1)
    off = S - np.diag(np.diag(S)) - np.eye(6) * 1e9
    assert (np.diag(S) > off.max(1)).all()


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_csls_argmax_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(8, 4)), rng.normal(size=(9, 4))
    a = similarity_matrix(X, Y, "csls", csls_k=3).argmax(1)
    b = similarity_matrix(c * X, c * Y, "csls", csls_k=3).argmax(1)
    np.testing.assert_array_equal(a, b)


# alignment


def test_alignment_identical_embeddings():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(20, 8))
    ent = np.vstack([base, base])
    pairs = np.column_stack([np.arange(20), np.arange(20, 40)])
    # inner product is not maximised by the identical vector, so it is left out
    for kind in ("cosine", "csls", "euclidean"):
        assert alignment_eval(ent, pairs, kind).hits_at(1) == 1.0


def test_alignment_random_mean_rank():
    n, reps = 40, 200
    mrs = []
    for seed in range(reps):
        ent = np.random.default_rng(seed).normal(size=(2 * n, 6))
        pairs = np.column_stack([np.arange(n), np.arange(n, 2 * n)])
        mrs.append(alignment_eval(ent, pairs).mr)
    # each rank is uniform on 1..n, so MR has sd sqrt((n^2-1)/12 / n)
    sd = np.sqrt((n * n - 1) / 12 / n) / np.sqrt(reps)
    assert abs(np.mean(mrs) - (n + 1) / 2) < 3 * sd


def test_alignment_candidates_and_errors():
    ent = np.eye(6)
    pairs = [[0, 3], [1, 4]]
    rep = alignment_eval(ent, pairs, candidates=[3, 4, 5])
    assert rep.n_queries == 2 and rep.task == "ea"
    with pytest.raises(EvaluationError, match="not among"):
        alignment_eval(ent, pairs, candidates=[3, 5])
    with pytest.raises(EvaluationError):
        alignment_eval(ent, np.zeros((0, 2)))
    with pytest.raises(EvaluationError, match="duplicate"):
        alignment_eval(ent, pairs, candidates=[3, 4, 4])


def test_rank_batch_keeps_truth_when_filtered():
    s = np.array([[5.0, 4.0, 3.0]])
    assert rank_batch(s, np.array([2]), [np.array([0, 2])])[0] == 2
