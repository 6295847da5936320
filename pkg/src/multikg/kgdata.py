"""Triple parsing, vocabularies and single/multi-source dataset construction.

All graphs built here are immutable once constructed.  Triples are stored as
``(n, 3)`` int64 arrays in ``(head, relation, tail)`` order.
"""
from __future__ import annotations

import logging
import os
import re
import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TYPE_RELATION = "rdf:type"
SPLITS = ("train", "valid", "test")


class DataError(ValueError):
    """Raised for malformed input files and inconsistent datasets."""


class RawTriple(NamedTuple):
    head: str
    relation: str
    tail: str


class RawLink(NamedTuple):
    """An entity-alignment link between entity ``ent_a`` of KG ``kg_a`` and
    entity ``ent_b`` of KG ``kg_b``."""
    ent_a: str
    ent_b: str
    split: str = "train"
    kg_a: int = 0
    kg_b: int = 1


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_TTL_LINE = re.compile(r"^<([^<>]+)>\s+<([^<>]+)>\s+<([^<>]+)>\s*\.\s*$")


def _parse_fields(fields, path, lineno, n):
    fields = [f.strip() for f in fields]
    if len(fields) != n or not all(fields):
        raise DataError(f"{path}:{lineno}: expected {n} non-empty fields, got {len(fields)}")
    return fields


def load_triples(path, format: str = "tsv") -> list[RawTriple]:
    """Read relation triples from ``path``.

    ``format`` is ``"tsv"`` (``head<TAB>relation<TAB>tail``) or ``"ttl"``
    (``<s> <p> <o> .`` with angle-bracket IRIs only).  Blank lines and, for
    ttl, ``#`` comments are skipped.  Duplicates are kept.
    """
    if format not in ("tsv", "ttl"):
        raise ValueError(f"unknown triple format {format!r}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if format == "tsv":
                out.append(RawTriple(*_parse_fields(line.split("\t"), path, lineno, 3)))
            else:
                if line.lstrip().startswith("#"):
                    continue
                m = _TTL_LINE.match(line.strip())
                if m is None:
                    raise DataError(f"{path}:{lineno}: not a '<s> <p> <o> .' line")
                out.append(RawTriple(*_parse_fields(m.groups(), path, lineno, 3)))
    return out


def load_links(path, split: str = "train", kg_a: int = 0, kg_b: int = 1) -> list[RawLink]:
    """Read ``entity1<TAB>entity2`` alignment links."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            a, b = _parse_fields(line.split("\t"), path, lineno, 2)
            out.append(RawLink(a, b, split, kg_a, kg_b))
    return out


def load_type_assertions(path) -> list[tuple[str, str]]:
    """Read type assertions as ``(instance, type)`` pairs.

    Accepts ``entity<TAB>rdf:type<TAB>type`` lines as well as the two-column
    ``entity<TAB>type`` layout used by FB15K-ET.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) == 3:
                e, rel, t = _parse_fields(fields, path, lineno, 3)
                if rel != TYPE_RELATION:
                    raise DataError(f"{path}:{lineno}: expected relation {TYPE_RELATION!r}, got {rel!r}")
            else:
                e, t = _parse_fields(fields, path, lineno, 2)
            out.append((e, t))
    return out


def write_triples(path, triples: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")


# --------------------------------------------------------------------------
# vocabularies and graphs
# --------------------------------------------------------------------------

class SymbolTable:
    """Dense bijection between strings and ids ``0..n-1``."""

    def __init__(self, symbols: Iterable[str] = ()):
        self.forward: dict[str, int] = {}
        self.backward: list[str] = []
        for s in symbols:
            self.add(s)

    def add(self, symbol: str) -> int:
        idx = self.forward.get(symbol)
        if idx is None:
            idx = len(self.backward)
            self.forward[symbol] = idx
            self.backward.append(symbol)
        return idx

    def encode(self, symbol: str) -> int:
        try:
            return self.forward[symbol]
        except KeyError:
            raise KeyError(f"unknown symbol {symbol!r}") from None

    def decode(self, idx: int) -> str:
        if not 0 <= idx < len(self.backward):
            raise IndexError(f"id {idx} out of range [0, {len(self.backward)})")
        return self.backward[idx]

    def __len__(self):
        return len(self.backward)

    def __contains__(self, symbol):
        return symbol in self.forward

    def __eq__(self, other):
        return isinstance(other, SymbolTable) and self.backward == other.backward

    def __repr__(self):
        return f"SymbolTable(n={len(self)})"


def _as_triple_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"triples must have shape (n, 3), got {arr.shape}")
    return arr


def dedupe_triples(triples) -> np.ndarray:
    """Drop repeated rows, keeping first occurrences in order."""
    arr = _as_triple_array(triples)
    if len(arr) == 0:
        return arr
    _, first = np.unique(arr, axis=0, return_index=True)
    return arr[np.sort(first)]


class KnownFilter:
    """Membership index over a set of triples.

    Triples are hashed to ``(h * n_r + r) * n_e + t`` and stored sorted, so
    vectorised membership is a binary search.  Per-query candidate lists for
    ranked evaluation are built lazily.
    """

    def __init__(self, triples, n_entities: int, n_relations: int):
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        self.triples = dedupe_triples(triples)
        self.keys = np.unique(self._key(self.triples[:, 0], self.triples[:, 1], self.triples[:, 2]))
        self._tails = None
        self._heads = None

    def _key(self, h, r, t):
        h = np.asarray(h, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        return (h * self.n_relations + r) * self.n_entities + t

    def contains(self, h, r, t):
        """Vectorised membership; returns a bool array (or bool for scalars)."""
        k = self._key(h, r, t)
        if len(self.keys) == 0:
            out = np.zeros(np.shape(k), dtype=bool)
        else:
            pos = np.searchsorted(self.keys, k)
            pos = np.minimum(pos, len(self.keys) - 1)
            out = self.keys[pos] == k
        return bool(out) if np.ndim(out) == 0 else out

    def __contains__(self, triple):
        h, r, t = triple
        return self.contains(h, r, t)

    def __len__(self):
        return len(self.keys)

    def extended(self, *more) -> "KnownFilter":
        parts = [self.triples] + [_as_triple_array(m) for m in more]
        return KnownFilter(np.concatenate(parts), self.n_entities, self.n_relations)

    def _build(self):
        tails, heads = {}, {}
        for h, r, t in self.triples.tolist():
            tails.setdefault((h, r), []).append(t)
            heads.setdefault((r, t), []).append(h)
        self._tails = {k: np.asarray(v, dtype=np.int64) for k, v in tails.items()}
        self._heads = {k: np.asarray(v, dtype=np.int64) for k, v in heads.items()}

    _EMPTY = np.zeros(0, dtype=np.int64)

    def tails_of(self, h: int, r: int) -> np.ndarray:
        if self._tails is None:
            self._build()
        return self._tails.get((int(h), int(r)), self._EMPTY)

    def heads_of(self, r: int, t: int) -> np.ndarray:
        if self._heads is None:
            self._build()
        return self._heads.get((int(r), int(t)), self._EMPTY)


class KnowledgeGraph:
    """Integer-encoded triple store with adjacency and membership indexes.

    Parameters
    ----------
    entities, relations : SymbolTable
        Vocabularies; every id in ``triples`` must be in range.
    triples : array-like of shape (n, 3)
        Duplicates are removed (first occurrence kept).
    """

    def __init__(self, entities: SymbolTable, relations: SymbolTable, triples):
        self.entities = entities
        self.relations = relations
        self.triples = dedupe_triples(triples)
        self.triples.setflags(write=False)
        if len(self.triples):
            if self.triples.min() < 0:
                raise DataError("negative id in triples")
            if self.triples[:, [0, 2]].max() >= len(entities):
                raise DataError("entity id out of range")
            if self.triples[:, 1].max() >= len(relations):
                raise DataError("relation id out of range")
        self._csr = None
        self._filter = None

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __len__(self):
        return len(self.triples)

    @property
    def known_filter(self) -> KnownFilter:
        if self._filter is None:
            self._filter = KnownFilter(self.triples, self.n_entities, self.n_relations)
        return self._filter

    def _adjacency_csr(self):
        # rows: (relation, neighbour, direction) with +1 = outgoing, -1 = incoming
        if self._csr is None:
            h, r, t = self.triples.T
            src = np.concatenate([h, t])
            rel = np.concatenate([r, r])
            dst = np.concatenate([t, h])
            direction = np.concatenate([np.ones(len(h), np.int8), -np.ones(len(h), np.int8)])
            order = np.argsort(src, kind="stable")
            offsets = np.zeros(self.n_entities + 1, dtype=np.int64)
            np.add.at(offsets, src + 1, 1)
            self._csr = (np.cumsum(offsets), rel[order], dst[order], direction[order])
        return self._csr

    def adjacency(self, entity: int) -> list[tuple[int, int, int]]:
        """Incident edges of ``entity`` as ``(relation, neighbour, direction)``."""
        offsets, rel, dst, direction = self._adjacency_csr()
        lo, hi = offsets[entity], offsets[entity + 1]
        return list(zip(rel[lo:hi].tolist(), dst[lo:hi].tolist(), direction[lo:hi].tolist()))

    def out_edges(self, entity: int) -> tuple[np.ndarray, np.ndarray]:
        """Outgoing ``(relations, tails)`` of ``entity``."""
        offsets, rel, dst, direction = self._adjacency_csr()
        lo, hi = offsets[entity], offsets[entity + 1]
        mask = direction[lo:hi] > 0
        return rel[lo:hi][mask], dst[lo:hi][mask]

    def degrees(self) -> np.ndarray:
        offsets = self._adjacency_csr()[0]
        return np.diff(offsets)

    def decode(self, triple) -> RawTriple:
        h, r, t = (int(x) for x in triple)
        return RawTriple(self.entities.decode(h), self.relations.decode(r), self.entities.decode(t))

    def __repr__(self):
        return f"KnowledgeGraph(entities={self.n_entities}, relations={self.n_relations}, triples={len(self)})"


@dataclass
class SplitTriples:
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))

    def __post_init__(self):
        self.train = _as_triple_array(self.train)
        self.valid = _as_triple_array(self.valid)
        self.test = _as_triple_array(self.test)

    def all(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])


@dataclass
class AlignmentSeed:
    """Alignment pairs in joint ids, keyed by split.

    ``pairs[split]`` is an ``(m, 2)`` array of ``(kg_a entity, kg_b entity)``.
    In shared-id mode the train pairs are collapsed, so both columns agree.
    """
    pairs: dict = field(default_factory=dict)

    def get(self, split: str) -> np.ndarray:
        return self.pairs.get(split, np.zeros((0, 2), dtype=np.int64))

    def __len__(self):
        return sum(len(v) for v in self.pairs.values())


@dataclass
class TypeAssertions:
    """``(instance joint id, type id)`` pairs per split, with their own vocabulary."""
    types: SymbolTable
    pairs: dict


@dataclass
class MultiSourceDataset:
    """One or more KGs in a joint id space.

    ``kg_entities[i]`` holds the joint ids of KG ``i``'s entities and
    ``kg_relations[i]`` those of its relations; ``entity_lookup[i]`` maps
    KG ``i``'s surface forms to joint ids.  ``splits[i]`` is KG ``i``'s
    train/valid/test triples in joint ids.
    """
    entities: SymbolTable
    relations: SymbolTable
    splits: list
    kg_entities: list
    kg_relations: list
    entity_lookup: list
    relation_lookup: list
    alignment: AlignmentSeed = field(default_factory=AlignmentSeed)
    id_mode: str = "unique"
    type_assertions: TypeAssertions | None = None
    attribute_triples: list = field(default_factory=list)

    @property
    def n_kgs(self) -> int:
        return len(self.splits)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def graph(self, i: int) -> KnowledgeGraph:
        """Training graph of KG ``i`` (joint ids)."""
        return KnowledgeGraph(self.entities, self.relations, self.splits[i].train)

    def joint_graph(self) -> KnowledgeGraph:
        """Union of all KGs' training triples."""
        train = np.concatenate([s.train for s in self.splits]) if self.splits else np.zeros((0, 3))
        return KnowledgeGraph(self.entities, self.relations, train)

    def relation_surface(self, rel_id: int) -> str:
        """Un-namespaced relation name."""
        return self._relation_surface[rel_id]

    def __post_init__(self):
        surface = [""] * len(self.relations)
        for lookup in self.relation_lookup:
            for name, idx in lookup.items():
                surface[idx] = name
        self._relation_surface = surface


# --------------------------------------------------------------------------
# id construction
# --------------------------------------------------------------------------

def _normalise_raw_kgs(kgs) -> list[dict]:
    out = []
    for kg in kgs:
        if isinstance(kg, dict):
            out.append({s: list(kg.get(s, ())) for s in SPLITS})
        else:
            out.append({"train": list(kg), "valid": [], "test": []})
    return out


def _namespace(i: int, name: str, n_kgs: int) -> str:
    return f"{i}:{name}" if n_kgs > 1 else name


def _collect_symbols(raw):
    """Ordered entity/relation surface forms of one KG, train first."""
    ents, rels = {}, {}
    for split in SPLITS:
        for h, r, t in raw[split]:
            ents.setdefault(h, None)
            ents.setdefault(t, None)
            rels.setdefault(r, None)
    return list(ents), list(rels)


def _encode_splits(raw, ent_lookup, rel_lookup) -> SplitTriples:
    enc = {}
    for split in SPLITS:
        rows = [(ent_lookup[h], rel_lookup[r], ent_lookup[t]) for h, r, t in raw[split]]
        enc[split] = dedupe_triples(rows)
    return SplitTriples(**enc)


def _build(kgs, links, shared: bool) -> MultiSourceDataset:
    raws = _normalise_raw_kgs(kgs)
    if not raws:
        raise DataError("at least one KG is required")
    n_kgs = len(raws)
    symbols = [_collect_symbols(r) for r in raws]

    # provisional unique ids: KG order, then first-appearance order
    provisional = {}
    names = []
    for i, (ents, _) in enumerate(symbols):
        for e in ents:
            provisional[(i, e)] = len(names)
            names.append(_namespace(i, e, n_kgs))

    links = list(links or ())
    for link in links:
        for kg, ent in ((link.kg_a, link.ent_a), (link.kg_b, link.ent_b)):
            if (kg, ent) not in provisional:
                raise DataError(f"alignment pair ({link.ent_a!r}, {link.ent_b!r}) references "
                                f"unknown entity {ent!r} of KG {kg}")

    parent = list(range(len(names)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    if shared:
        for link in links:
            if link.split != "train":
                continue
            a = find(provisional[(link.kg_a, link.ent_a)])
            b = find(provisional[(link.kg_b, link.ent_b)])
            if a != b:
                # canonical representative = smallest member id
                parent[max(a, b)] = min(a, b)

    roots = [find(x) for x in range(len(names))]
    canonical = sorted(set(roots))
    dense = {root: j for j, root in enumerate(canonical)}
    entities = SymbolTable(names[root] for root in canonical)
    joint_of = [dense[r] for r in roots]

    relations = SymbolTable()
    entity_lookup, relation_lookup, kg_entities, kg_relations, splits = [], [], [], [], []
    for i, (ents, rels) in enumerate(symbols):
        e_lookup = {e: joint_of[provisional[(i, e)]] for e in ents}
        r_lookup = {r: relations.add(_namespace(i, r, n_kgs)) for r in rels}
        entity_lookup.append(e_lookup)
        relation_lookup.append(r_lookup)
        kg_entities.append(np.unique(np.fromiter(e_lookup.values(), np.int64, len(e_lookup))))
        kg_relations.append(np.unique(np.fromiter(r_lookup.values(), np.int64, len(r_lookup))))
        splits.append(_encode_splits(raws[i], e_lookup, r_lookup))

    _check_links(links, provisional)
    pairs = {}
    for link in links:
        a = entity_lookup[link.kg_a][link.ent_a]
        b = entity_lookup[link.kg_b][link.ent_b]
        pairs.setdefault(link.split, []).append((a, b))
    alignment = AlignmentSeed({k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in pairs.items()})

    return MultiSourceDataset(
        entities=entities, relations=relations, splits=splits,
        kg_entities=kg_entities, kg_relations=kg_relations,
        entity_lookup=entity_lookup, relation_lookup=relation_lookup,
        alignment=alignment, id_mode="shared" if shared else "unique")


def _check_links(links, provisional) -> None:
    """1-to-1 seeds within each split and side; splits pairwise disjoint."""
    by_split = {}
    for link in links:
        a = provisional[(link.kg_a, link.ent_a)]
        b = provisional[(link.kg_b, link.ent_b)]
        sides, pairs = by_split.setdefault(link.split, ({0: set(), 1: set()}, set()))
        for side, (x, name) in enumerate(((a, link.ent_a), (b, link.ent_b))):
            if x in sides[side]:
                raise DataError(f"entity {name!r} appears in more than one {link.split} pair")
            sides[side].add(x)
        pairs.add((a, b))
    names = sorted(by_split)
    for i, s1 in enumerate(names):
        for s2 in names[i + 1:]:
            if by_split[s1][1] & by_split[s2][1]:
                raise DataError(f"alignment splits {s1!r} and {s2!r} share pairs")


def build_unique_ids(kgs, links: Iterable[RawLink] = ()) -> MultiSourceDataset:
    """Assign every resource its own id; surface forms are namespaced per KG.

    ``kgs`` is a sequence whose items are either a list of ``RawTriple`` (all
    training) or a dict ``{"train": [...], "valid": [...], "test": [...]}``.
    """
    return _build(kgs, links, shared=False)


def build_shared_ids(kgs, links: Iterable[RawLink]) -> MultiSourceDataset:
    """Merge KGs into one joint graph: entities linked by train alignment
    pairs (closed transitively) share an id; relations stay disjoint."""
    return _build(kgs, links, shared=True)


# --------------------------------------------------------------------------
# split hygiene
# --------------------------------------------------------------------------

def _rows_in(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Boolean mask of rows of ``a`` that also occur in ``b``."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros(len(a), dtype=bool)
    width = a.shape[1]
    base = int(max(a.max(), b.max())) + 1
    weights = base ** np.arange(width - 1, -1, -1, dtype=np.int64)
    ka = a @ weights
    kb = np.unique(b @ weights)
    return np.isin(ka, kb)


@dataclass
class SplitReport:
    dropped_valid: int = 0
    dropped_test: int = 0

    @property
    def empty(self) -> bool:
        return self.dropped_valid == 0 and self.dropped_test == 0


def validate_split(split: SplitTriples) -> tuple[SplitTriples, SplitReport]:
    """Check train/valid/test disjointness and drop evaluation triples whose
    entities or relations never occur in training."""
    for a, b in (("train", "valid"), ("train", "test"), ("valid", "test")):
        if _rows_in(getattr(split, a), getattr(split, b)).any():
            raise DataError(f"{a} and {b} splits overlap")
    train = split.train
    seen_e = np.unique(train[:, [0, 2]]) if len(train) else np.zeros(0, np.int64)
    seen_r = np.unique(train[:, 1]) if len(train) else np.zeros(0, np.int64)
    report = SplitReport()
    kept = {}
    for name in ("valid", "test"):
        arr = getattr(split, name)
        ok = np.isin(arr[:, 0], seen_e) & np.isin(arr[:, 2], seen_e) & np.isin(arr[:, 1], seen_r)
        setattr(report, f"dropped_{name}", int((~ok).sum()))
        kept[name] = arr[ok]
    if not report.empty:
        logger.warning("dropped %d valid / %d test triples with entities or relations unseen in train",
                       report.dropped_valid, report.dropped_test)
    return SplitTriples(train, kept["valid"], kept["test"]), report


def random_split(triples, valid_frac: float, test_frac: float, seed: int) -> SplitTriples:
    """Shuffle ``triples`` and carve off validation and test fractions."""
    arr = dedupe_triples(triples)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(arr))
    n_valid = int(round(valid_frac * len(arr)))
    n_test = int(round(test_frac * len(arr)))
    valid = arr[perm[:n_valid]]
    test = arr[perm[n_valid:n_valid + n_test]]
    train = arr[perm[n_valid + n_test:]]
    return SplitTriples(train, valid, test)


def remove_overlap_triples(dataset: MultiSourceDataset, criterion: str = "exact"):
    """Drop training triples that coincide with any KG's valid/test triples.

    With ``criterion="exact"`` two triples coincide when their (shared-id)
    head and tail agree and their relations have the same surface form; with
    ``"entity_pair"`` the relation is ignored.  Returns ``(dataset, removed)``.
    """
    if criterion not in ("exact", "entity_pair"):
        raise ValueError(f"unknown overlap criterion {criterion!r}")
    if dataset.n_kgs > 1 and dataset.id_mode != "shared":
        raise DataError("overlap removal applies to shared-id datasets")

    surface = SymbolTable()
    rel_code = np.array([surface.add(_strip_namespace(name, dataset.n_kgs))
                         for name in dataset.relations.backward], dtype=np.int64)

    def canon(arr):
        if criterion == "entity_pair":
            return arr[:, [0, 2]]
        return np.stack([arr[:, 0], rel_code[arr[:, 1]], arr[:, 2]], axis=1) if len(arr) else arr

    held_out = np.concatenate([canon(np.concatenate([s.valid, s.test])) for s in dataset.splits])
    removed = 0
    new_splits = []
    for s in dataset.splits:
        mask = _rows_in(canon(s.train), held_out) if len(s.train) else np.zeros(0, bool)
        removed += int(mask.sum())
        new_splits.append(SplitTriples(s.train[~mask], s.valid, s.test))
    if removed:
        logger.info("removed %d training triples overlapping held-out triples", removed)
    out = dataclasses.replace(dataset, splits=new_splits)
    return out, removed


def overlap_count(dataset: MultiSourceDataset, criterion: str = "exact") -> int:
    """Number of training triples still overlapping any held-out triple."""
    _, n = remove_overlap_triples(dataset, criterion)
    return n


def _strip_namespace(name: str, n_kgs: int) -> str:
    if n_kgs > 1:
        return name.split(":", 1)[1]
    return name


# --------------------------------------------------------------------------
# dataset directories
# --------------------------------------------------------------------------

def _maybe(path):
    return path if os.path.exists(path) else None


def load_single_kg_dir(path, format: str = "tsv") -> MultiSourceDataset:
    """``train.txt``/``valid.txt``/``test.txt`` layout (FB15K, FB15K-237)."""
    if not os.path.isdir(path):
        raise DataError(f"dataset directory not found: {path}")
    raw = {}
    for split in SPLITS:
        f = _maybe(os.path.join(path, f"{split}.txt"))
        if f is None and split == "train":
            raise DataError(f"missing {os.path.join(path, 'train.txt')}")
        raw[split] = load_triples(f, format) if f else []
    return build_unique_ids([raw])


def _find_split_dir(path, split_dir):
    if split_dir:
        d = os.path.join(path, split_dir)
        if not os.path.exists(os.path.join(d, "train_links")):
            raise DataError(f"no train_links under {d}")
        return d
    for root, _, files in sorted(os.walk(path)):
        if "train_links" in files:
            return root
    return None


def load_openea_dir(path, shared: bool = False, split_dir: str | None = None,
                    lp_splits: tuple[float, float] | None = None, seed: int = 0) -> MultiSourceDataset:
    """OpenEA/DBP15K layout: ``rel_triples_1``, ``rel_triples_2``, ``ent_links``,
    optional ``attr_triples_*`` and a split folder with ``train_links``,
    ``valid_links`` and ``test_links``.

    Without a split folder every link in ``ent_links`` is a train link.
    ``lp_splits=(valid_frac, test_frac)`` additionally carves per-KG link
    prediction splits (used by multi-source link prediction); pre-made splits
    in ``lp_1/`` and ``lp_2/`` (``train.txt``...) take precedence.
    """
    if not os.path.isdir(path):
        raise DataError(f"dataset directory not found: {path}")
    kgs = []
    for i in (1, 2):
        lp_dir = os.path.join(path, f"lp_{i}")
        if os.path.exists(os.path.join(lp_dir, "train.txt")):
            kgs.append({s: load_triples(os.path.join(lp_dir, f"{s}.txt")) if _maybe(os.path.join(lp_dir, f"{s}.txt")) else []
                        for s in SPLITS})
            continue
        f = os.path.join(path, f"rel_triples_{i}")
        if not os.path.exists(f):
            raise DataError(f"missing {f}")
        kgs.append(load_triples(f))
    if lp_splits is not None:
        kgs = [kg if isinstance(kg, dict) else _split_raw(kg, lp_splits, seed + i) for i, kg in enumerate(kgs)]

    sd = _find_split_dir(path, split_dir)
    if sd is not None:
        links = []
        for split in SPLITS:
            f = _maybe(os.path.join(sd, f"{split}_links"))
            if f:
                links.extend(load_links(f, split))
    else:
        f = os.path.join(path, "ent_links")
        if not os.path.exists(f):
            raise DataError(f"missing {f}")
        links = load_links(f, "train")

    ds = (build_shared_ids if shared else build_unique_ids)(kgs, links)
    for i in (1, 2):
        f = _maybe(os.path.join(path, f"attr_triples_{i}"))
        if f:
            ds.attribute_triples.append(load_triples(f))
    return ds


def _split_raw(raw, fracs, seed):
    valid_frac, test_frac = fracs
    rng = np.random.default_rng(seed)
    uniq = list(dict.fromkeys(raw))
    perm = rng.permutation(len(uniq))
    n_valid = int(round(valid_frac * len(uniq)))
    n_test = int(round(test_frac * len(uniq)))
    pick = lambda idx: [uniq[j] for j in idx]
    return {"valid": pick(perm[:n_valid]), "test": pick(perm[n_valid:n_valid + n_test]),
            "train": pick(np.sort(perm[n_valid + n_test:]))}


def load_typing_dir(path) -> MultiSourceDataset:
    """FB15K-ET layout: relational ``train.txt``/``valid.txt``/``test.txt``
    plus ``ET_train.txt``/``ET_valid.txt``/``ET_test.txt`` type assertions."""
    ds = load_single_kg_dir(path)
    types = SymbolTable()
    pairs = {}
    lookup = ds.entity_lookup[0]
    for split in SPLITS:
        f = _maybe(os.path.join(path, f"ET_{split}.txt"))
        if f is None:
            if split == "train":
                raise DataError(f"missing {os.path.join(path, 'ET_train.txt')}")
            continue
        rows, unknown = [], 0
        for e, t in load_type_assertions(f):
            if e not in lookup:
                unknown += 1
                continue
            if split != "train" and t not in types:
                unknown += 1
                continue
            rows.append((lookup[e], types.add(t)))
        if unknown:
            logger.warning("%s: skipped %d assertions with unknown instance or type", f, unknown)
        pairs[split] = np.unique(np.asarray(rows, dtype=np.int64).reshape(-1, 2), axis=0)
    ds.type_assertions = TypeAssertions(types, pairs)
    return ds
