"""Batching, negative sampling, random-walk paths and neighbourhood subgraphs."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .kgdata import KnowledgeGraph, KnownFilter

SIDES = ("head", "tail", "both")
STRATEGIES = ("uniform", "self_adversarial", "truncated")


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NegSampleConfig:
    strategy: str = "uniform"
    k: int = 1
    corrupt_side: str = "both"
    truncation_ratio: float = 0.1
    temperature: float = 1.0
    # epochs between truncated-sampler index rebuilds
    refresh_every: int = 5

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown negative sampling strategy {self.strategy!r}")
        if self.corrupt_side not in SIDES:
            raise ValueError(f"corrupt_side must be one of {SIDES}, got {self.corrupt_side!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.truncation_ratio <= 1.0:
            raise ValueError(f"truncation ratio must lie in (0, 1], got {self.truncation_ratio}")
        if self.temperature <= 0:
            raise ValueError(f"adversarial temperature must be positive, got {self.temperature}")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")


@dataclass
class Batch:
    """``positives`` is ``(B, 3)``; ``negatives`` is ``(B * k, 3)`` where the
    negatives of positive ``i`` occupy rows ``i*k .. (i+1)*k``."""
    positives: np.ndarray
    negatives: np.ndarray
    k: int
    pair_pos: np.ndarray | None = None
    pair_neg: np.ndarray | None = None

    def __len__(self):
        return len(self.positives)


def worker_rng(seed: int, worker_id: int, epoch: int = 0) -> np.random.Generator:
    """Independent stream for ``(seed, worker, epoch)``."""
    return np.random.default_rng(np.random.SeedSequence([seed, worker_id, epoch]))


def make_batches(triples, batch_size: int, rng: np.random.Generator) -> list:
    """Shuffle and cut into ``ceil(n / batch_size)`` batches (last may be short)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    triples = np.asarray(triples)
    perm = rng.permutation(len(triples))
    return [triples[perm[i:i + batch_size]] for i in range(0, len(triples), batch_size)]


def _draw_sides(side, n, rng):
    """Boolean array: True where the head is replaced."""
    if side == "head":
        return np.ones(n, dtype=bool)
    if side == "tail":
        return np.zeros(n, dtype=bool)
    return rng.random(n) < 0.5


def _corrupt(pos, side, k, draw, known_filter, budget, rng):
    """Shared rejection loop.  ``draw(rows, replace_head, rng)`` proposes
    replacement entities for the given positive rows."""
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    rep = np.repeat(pos, k, axis=0)
    out = rep.copy()
    heads = _draw_sides(side, len(rep), rng)
    pending = np.arange(len(rep))
    tries = np.zeros(len(rep), dtype=np.int64)
    while len(pending):
        cand = draw(rep[pending], heads[pending], rng)
        cur = rep[pending].copy()
        hs = heads[pending]
        cur[hs, 0] = cand[hs]
        cur[~hs, 2] = cand[~hs]
        bad = (cur == rep[pending]).all(1)
        if known_filter is not None:
            bad |= known_filter.contains(cur[:, 0], cur[:, 1], cur[:, 2])
        out[pending[~bad]] = cur[~bad]
        tries[pending] += 1
        pending = pending[bad]
        if len(pending) and tries[pending].max() >= budget:
            row = rep[pending[np.argmax(tries[pending])]]
            raise SamplingError(
                f"no valid corruption of triple {tuple(int(x) for x in row)} after {budget} draws")
        if side == "both" and len(pending):
            heads[pending] = rng.random(len(pending)) < 0.5
    return out


def corrupt_uniform(triple, side: str, k: int, entity_count: int,
                    known_filter: KnownFilter | None, rng: np.random.Generator) -> np.ndarray:
    """``k`` corruptions of each triple with a uniformly drawn replacement.

    Accepts one triple or an ``(m, 3)`` array (giving ``m * k`` rows).  A
    draw is rejected when it recreates the original or is a known positive;
    after ``entity_count * 10`` draws for one slot a ``SamplingError`` is
    raised.
    """
    if entity_count < 2:
        raise ValueError("corruption needs at least two entities")
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")

    def draw(rows, _heads, g):
        return g.integers(0, entity_count, size=len(rows))

    return _corrupt(triple, side, k, draw, known_filter, entity_count * 10, rng)


def self_adversarial_weights(neg_scores, alpha: float) -> np.ndarray:
    """Softmax of ``alpha * scores`` along the last axis."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    s = np.asarray(neg_scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("need at least one score")
    if not np.isfinite(s).all():
        raise ValueError("non-finite negative score")
    # shift before scaling so large scores cannot overflow
    z = alpha * (s - s.max(axis=-1, keepdims=True))
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


class NeighborIndex:
    """Top-``s`` most similar other entities per entity, by cosine similarity
    of the current embeddings.  Rebuilt between epochs, read-only during one."""

    def __init__(self, embeddings, ratio: float, chunk: int = 1024):
        if not 0.0 < ratio <= 1.0:
            raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
        emb = np.asarray(embeddings, dtype=np.float64)
        n = len(emb)
        if n < 2:
            raise ValueError("neighbour index needs at least two entities")
        self.n = n
        self.size = min(n - 1, math.ceil(ratio * n))
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        unit = emb / np.where(norms > 0, norms, 1.0)
        top = np.empty((n, self.size), dtype=np.int64)
        for lo in range(0, n, chunk):
            sim = unit[lo:lo + chunk] @ unit.T
            rows = np.arange(lo, min(lo + chunk, n))
            sim[rows - lo, rows] = -np.inf
            # stable sort: ties keep ascending id order
            top[lo:lo + chunk] = np.argsort(-sim, axis=1, kind="stable")[:, :self.size]
        self.top = top

    def neighbors(self, e: int) -> np.ndarray:
        if not 0 <= e < self.n:
            raise KeyError(f"entity {e} not in neighbour index (size {self.n}); index is stale")
        return self.top[e]


def corrupt_truncated(triple, side: str, k: int, neighbor_index: NeighborIndex, mu: float,
                      rng: np.random.Generator, known_filter: KnownFilter | None = None) -> np.ndarray:
    """Like ``corrupt_uniform`` but the replacement is drawn from the
    ``ceil(mu * N)`` nearest neighbours of the replaced entity.

    ``mu`` must not exceed the ratio the index was built with.
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    pos = np.asarray(triple, dtype=np.int64).reshape(-1, 3)
    n = neighbor_index.n
    s = min(n - 1, math.ceil(mu * n))
    if s > neighbor_index.size:
        raise ValueError(f"index holds {neighbor_index.size} neighbours, {s} requested")
    ents = np.concatenate([pos[:, 0], pos[:, 2]]) if len(pos) else pos[:, 0]
    if len(ents) and ents.max() >= n:
        neighbor_index.neighbors(int(ents.max()))
    top = neighbor_index.top

    def draw(rows, heads, g):
        replaced = np.where(heads, rows[:, 0], rows[:, 2])
        return top[replaced, g.integers(0, s, size=len(rows))]

    # the candidate pool for one slot has s entries
    return _corrupt(pos, side, k, draw, known_filter, max(n, s) * 10, rng)


def make_negatives(pos, cfg: NegSampleConfig, n_entities: int, known_filter, rng,
                   neighbor_index: NeighborIndex | None = None) -> np.ndarray:
    """Dispatch on strategy.  Self-adversarial sampling draws uniformly; the
    weighting happens in the loss."""
    if cfg.strategy == "truncated":
        if neighbor_index is None:
            raise ValueError("truncated sampling needs a neighbour index")
        return corrupt_truncated(pos, cfg.corrupt_side, cfg.k, neighbor_index,
                                 cfg.truncation_ratio, rng, known_filter)
    return corrupt_uniform(pos, cfg.corrupt_side, cfg.k, n_entities, known_filter, rng)


# --------------------------------------------------------------------------
# paths and subgraphs
# --------------------------------------------------------------------------

PATH_KINDS = ("relational", "entity", "relation")


@dataclass(frozen=True)
class Path:
    kind: str
    elements: tuple


@dataclass
class Subgraph:
    center: int
    hops: int
    nodes: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.empty((0, 3), dtype=np.int64))


def _project(walk, kind):
    if kind == "relational":
        return Path(kind, tuple(walk))
    if kind == "entity":
        return Path(kind, tuple(walk[0::2]))
    return Path(kind, tuple(walk[1::2]))


def sample_paths(kg: KnowledgeGraph, kind: str, length: int, count: int,
                 rng: np.random.Generator, retry_budget: int | None = None) -> list:
    """Random walks of ``length`` relation hops along outgoing edges.

    Dead ends are dropped and redrawn; after ``retry_budget`` failed walks
    (default ``100 * count + 1000``) a ``SamplingError`` is raised.
    """
    if kind not in PATH_KINDS:
        raise ValueError(f"path kind must be one of {PATH_KINDS}, got {kind!r}")
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if len(kg.triples) == 0:
        raise ValueError("cannot sample paths from an empty graph")
    if retry_budget is None:
        retry_budget = 100 * count + 1000
    starts = np.unique(kg.triples[:, 0])
    out, failures = [], 0
    while len(out) < count:
        e = int(starts[rng.integers(len(starts))])
        walk = [e]
        for _ in range(length):
            rels, tails = kg.out_edges(e)
            if len(rels) == 0:
                break
            j = rng.integers(len(rels))
            r, e = int(rels[j]), int(tails[j])
            walk += [r, e]
        if len(walk) == 2 * length + 1:
            out.append(_project(walk, kind))
            continue
        failures += 1
        if failures >= retry_budget:
            raise SamplingError(f"no walk of length {length} found within {retry_budget} attempts")
    return out


def sample_subgraph(kg: KnowledgeGraph, center: int, hops: int, max_neighbors_per_hop: int | None,
                    rng: np.random.Generator) -> Subgraph:
    """Breadth-first expansion over incident edges (either direction), keeping
    at most ``max_neighbors_per_hop`` random edges at each frontier node."""
    if not 0 <= center < kg.n_entities:
        raise IndexError(f"center {center} out of range [0, {kg.n_entities})")
    if hops < 1:
        raise ValueError(f"hops must be >= 1, got {hops}")
    depth = {center: 0}
    queue = deque([center])
    while queue:
        u = queue.popleft()
        if depth[u] == hops:
            continue
        adj = kg.adjacency(u)
        if max_neighbors_per_hop is not None and len(adj) > max_neighbors_per_hop:
            adj = [adj[i] for i in sorted(rng.choice(len(adj), max_neighbors_per_hop, replace=False))]
        for _, v, _ in adj:
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    nodes = np.array(sorted(depth), dtype=np.int64)
    tr = kg.triples
    inside = np.isin(tr[:, 0], nodes) & np.isin(tr[:, 2], nodes)
    return Subgraph(center, hops, nodes, tr[inside].copy())
