"""Ranking metrics, link prediction / typing / alignment evaluation and
embedding similarity (cosine, inner product, Euclidean, CSLS)."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .models import ModelParams, score_all_heads, score_all_tails

DEFAULT_KS = (1, 3, 10)
SIMILARITIES = ("cosine", "inner", "euclidean", "csls")


class EvaluationError(ValueError):
    pass


@dataclass
class RankingReport:
    ranks: np.ndarray
    task: str = "lp"
    filter: str = "train"
    ks: tuple = DEFAULT_KS
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=np.float64).reshape(-1)
        if len(self.ranks) == 0:
            raise EvaluationError("no queries to aggregate")
        if (self.ranks < 1).any():
            raise EvaluationError("ranks are 1-based")

    @property
    def n_queries(self) -> int:
        return len(self.ranks)

    def hits_at(self, k: int) -> float:
        return float(np.mean(self.ranks <= k))

    @property
    def hits(self) -> dict:
        return {k: self.hits_at(k) for k in self.ks}

    @property
    def mr(self) -> float:
        return float(np.mean(self.ranks))

    @property
    def mrr(self) -> float:
        return float(np.mean(1.0 / self.ranks))

    def to_dict(self) -> dict:
        out = {"task": self.task, "hits": {str(k): v for k, v in self.hits.items()}, "mr": self.mr,
               "mrr": self.mrr, "n_queries": self.n_queries, "filter": self.filter}
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write_ranks(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, r in enumerate(self.ranks):
                fh.write(f"{i}\t{r:g}\n")


# --------------------------------------------------------------------------
# ranking
# --------------------------------------------------------------------------

def rank_entity(scores, truth: int, filter_ids=()) -> float:
    """Mid-rank of ``truth``: 1 + #strictly better + floor(#ties / 2), after
    dropping the candidates in ``filter_ids`` (the truth itself is kept).

    Ranks are whole numbers; the return type is float so that report
    arithmetic stays in one dtype.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not 0 <= truth < len(s):
        raise EvaluationError(f"truth {truth} outside candidate range [0, {len(s)})")
    return float(rank_batch(s[None, :], np.array([truth]), [np.asarray(filter_ids, dtype=np.int64)])[0])


def rank_batch(scores: np.ndarray, truth: np.ndarray, filters=None) -> np.ndarray:
    """Vectorised ``rank_entity`` over rows.  ``filters[b]`` lists candidate
    ids to remove from row ``b`` (may include the truth, which is kept).
    ``scores`` is modified in place when filters are given."""
    B = len(truth)
    if np.isnan(scores).any():
        raise EvaluationError("NaN score during ranking")
    rows = np.arange(B)
    true_s = scores[rows, truth].copy()
    if filters is not None:
        lens = np.fromiter((len(f) for f in filters), dtype=np.int64, count=B)
        if lens.sum():
            cols = np.concatenate([np.asarray(f, dtype=np.int64) for f in filters])
            scores[np.repeat(rows, lens), cols] = -np.inf
        scores[rows, truth] = true_s
    greater = (scores > true_s[:, None]).sum(1)
    ties = (scores == true_s[:, None]).sum(1) - 1
    return 1 + greater + ties // 2


def _mask_columns(scores, candidates, n):
    if candidates is None:
        return
    keep = np.zeros(n, dtype=bool)
    keep[candidates] = True
    scores[:, ~keep] = -np.inf


def _lp_chunk(params, tri, known, candidates, want_heads, want_tails):
    n = params.n_entities
    out = []
    if want_heads:
        s = score_all_heads(params, tri[:, 1], tri[:, 2])
        _mask_columns(s, candidates, n)
        f = [known.heads_of(r, t) for _, r, t in tri] if known is not None else None
        out.append(rank_batch(s, tri[:, 0], f))
    if want_tails:
        s = score_all_tails(params, tri[:, 0], tri[:, 1])
        _mask_columns(s, candidates, n)
        f = [known.tails_of(h, r) for h, r, _ in tri] if known is not None else None
        out.append(rank_batch(s, tri[:, 2], f))
    # interleave per triple: head query then tail query
    return np.stack(out, axis=1).reshape(-1)


def _sharded(fn, triples, chunk, workers):
    pieces = [triples[i:i + chunk] for i in range(0, len(triples), chunk)]
    if workers <= 1 or len(pieces) <= 1:
        parts = [fn(p) for p in pieces]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, pieces))
    return np.concatenate(parts)


def link_prediction_eval(params: ModelParams, test_triples, known=None, *, filter_name: str = "train",
                         candidates=None, directions: str = "both", chunk: int = 256,
                         workers: int = 1, ks=DEFAULT_KS) -> RankingReport:
    """Rank every test triple's head and tail among all entities (or among
    ``candidates``), removing other triples of ``known`` (a ``KnownFilter``;
    ``None`` gives raw ranks).  Sharding across ``workers`` does not change
    the result."""
    tri = np.asarray(test_triples, dtype=np.int64).reshape(-1, 3)
    if len(tri) == 0:
        raise EvaluationError("empty test set")
    heads, tails = directions in ("both", "head"), directions in ("both", "tail")
    if candidates is not None:
        candidates = np.asarray(candidates, dtype=np.int64)
        inside = np.zeros(params.n_entities, dtype=bool)
        inside[candidates] = True
        # only the ranked side has to be a candidate
        ranked = [tri[:, 0]] * heads + [tri[:, 2]] * tails
        if not all(inside[c].all() for c in ranked):
            raise EvaluationError("test triple entity outside the candidate set")

    def run(piece):
        return _lp_chunk(params, piece, known, candidates, heads, tails)

    ranks = _sharded(run, tri, chunk, workers)
    return RankingReport(ranks, "lp", filter_name if known is not None else "raw", tuple(ks))


def typing_eval(params: ModelParams, test_assertions, type_relation: int, type_candidates, known=None,
                *, filter_name: str = "train", chunk: int = 256, workers: int = 1,
                ks=DEFAULT_KS) -> RankingReport:
    """Rank the true type of each ``(instance, type)`` among ``type_candidates``
    only, scoring ``(instance, type_relation, candidate)``."""
    cand = np.asarray(type_candidates, dtype=np.int64)
    if len(cand) == 0:
        raise EvaluationError("empty type vocabulary")
    pairs = np.asarray(test_assertions, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise EvaluationError("no test type assertions")
    tri = np.column_stack([pairs[:, 0], np.full(len(pairs), type_relation), pairs[:, 1]])
    report = link_prediction_eval(params, tri, known, filter_name=filter_name, candidates=cand,
                                  directions="tail", chunk=chunk, workers=workers, ks=ks)
    report.task = "et"
    return report


# --------------------------------------------------------------------------
# similarity and alignment
# --------------------------------------------------------------------------

def _unit(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def _mean_topk(sim, k):
    k = min(k, sim.shape[1])
    part = np.partition(sim, sim.shape[1] - k, axis=1)[:, -k:]
    return part.mean(1)


def similarity_matrix(E1, E2, kind: str = "cosine", csls_k: int = 10) -> np.ndarray:
    """``(m, n)`` similarities; Euclidean is negated so higher means closer."""
    E1 = np.asarray(E1, dtype=np.float64)
    E2 = np.asarray(E2, dtype=np.float64)
    if E1.ndim != 2 or E2.ndim != 2 or E1.shape[1] != E2.shape[1]:
        raise ValueError(f"dimension mismatch: {E1.shape} vs {E2.shape}")
    if kind == "inner":
        return E1 @ E2.T
    if kind == "euclidean":
        sq = (E1 * E1).sum(1)[:, None] + (E2 * E2).sum(1)[None, :] - 2.0 * E1 @ E2.T
        return -np.sqrt(np.maximum(sq, 0.0))
    if kind not in ("cosine", "csls"):
        raise ValueError(f"unknown similarity {kind!r}; expected one of {', '.join(SIMILARITIES)}")
    cos = _unit(E1) @ _unit(E2).T
    if kind == "cosine":
        return cos
    if csls_k < 1:
        raise ValueError("csls_k must be >= 1")
    r1 = _mean_topk(cos, csls_k)
    r2 = _mean_topk(cos.T, csls_k)
    return 2.0 * cos - r1[:, None] - r2[None, :]


def alignment_eval(ent, test_pairs, kind: str = "cosine", *, csls_k: int = 10, candidates=None,
                   ks=DEFAULT_KS) -> RankingReport:
    """Rank each left entity's counterpart among the right-hand entities of
    ``test_pairs`` (or among ``candidates`` when given)."""
    pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise EvaluationError("no alignment pairs to evaluate")
    ent = np.asarray(ent, dtype=np.float64)
    right = pairs[:, 1] if candidates is None else np.asarray(candidates, dtype=np.int64)
    pos = {int(e): i for i, e in enumerate(right)}
    if len(pos) != len(right):
        raise EvaluationError("duplicate candidate entities")
    try:
        truth = np.array([pos[int(e)] for e in pairs[:, 1]])
    except KeyError as exc:
        raise EvaluationError(f"counterpart {exc.args[0]} not among candidates") from None
    sim = similarity_matrix(ent[pairs[:, 0]], ent[right], kind, csls_k)
    return RankingReport(rank_batch(sim, truth), "ea", "none", tuple(ks))
