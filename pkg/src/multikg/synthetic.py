"""Small generated datasets in the on-disk layouts the loaders read.

Entities fall into clusters and relation ``r`` links cluster ``c`` to
cluster ``(c * (r + 1) + r) % n_clusters``, so the graphs carry structure
that embedding models can pick up.  The alignment dataset uses a latent
translational graph instead (see ``translational_triples``).
"""
from __future__ import annotations

import os

import numpy as np


def clustered_triples(n_entities=60, n_relations=4, n_triples=400, n_clusters=6, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cluster = np.arange(n_entities) % n_clusters
    members = [np.flatnonzero(cluster == c) for c in range(n_clusters)]
    out = set()
    while len(out) < n_triples:
        h = int(rng.integers(n_entities))
        r = int(rng.integers(n_relations))
        target = (cluster[h] * (r + 1) + r) % n_clusters
        t = int(rng.choice(members[target]))
        if t != h:
            out.add((h, r, t))
    return np.array(sorted(out), dtype=np.int64)


def _write(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write("\t".join(str(x) for x in row) + "\n")


def _named(triples, ent_prefix="e", rel_prefix="r"):
    return [(f"{ent_prefix}{h}", f"{rel_prefix}{r}", f"{ent_prefix}{t}") for h, r, t in triples]


def _split(n, fracs, rng):
    perm = rng.permutation(n)
    n_valid, n_test = int(fracs[0] * n), int(fracs[1] * n)
    return perm[n_valid + n_test:], perm[:n_valid], perm[n_valid:n_valid + n_test]


def write_single_kg(directory, triples=None, fracs=(0.1, 0.1), seed=0, **kw) -> str:
    """``train.txt``/``valid.txt``/``test.txt``."""
    os.makedirs(directory, exist_ok=True)
    triples = clustered_triples(seed=seed, **kw) if triples is None else np.asarray(triples)
    rng = np.random.default_rng(seed + 1)
    tr, va, te = _split(len(triples), fracs, rng)
    for name, idx in (("train", tr), ("valid", va), ("test", te)):
        _write(os.path.join(directory, f"{name}.txt"), _named(triples[np.sort(idx)]))
    return str(directory)


def translational_triples(n_entities=200, n_relations=4, latent_dim=3, seed=0) -> np.ndarray:
    """Entities are random points and relations random offsets in a small
    latent space; ``(h, r, t)`` holds when ``t`` is the entity nearest to
    ``z[h] + v[r]``.  The graph is functional per relation and exactly the
    kind of structure a translational model can fit."""
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n_entities, latent_dim))
    v = rng.normal(size=(n_relations, latent_dim))
    out = []
    for r in range(n_relations):
        d = np.linalg.norm(z[:, None, :] + v[r] - z[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        t = d.argmin(1)
        out.append(np.column_stack([np.arange(n_entities), np.full(n_entities, r), t]))
    return np.unique(np.concatenate(out), axis=0)


def write_duplicated_kg(directory, n_entities=200, n_relations=4, seed=0, train_frac=0.5,
                        valid_frac=0.1) -> str:
    """Two-KG alignment dataset where KG2 is a relabelled copy of KG1.

    Writes ``rel_triples_1``, ``rel_triples_2``, ``ent_links`` and a
    ``721_5fold/1`` split folder with ``train_links``/``valid_links``/``test_links``.
    The graph comes from ``translational_triples``: clustered graphs would
    make entities of one cluster interchangeable, and uniform random graphs
    cannot be fitted by a translational model.
    """
    rng = np.random.default_rng(seed)
    tri = translational_triples(n_entities, n_relations, seed=seed)
    relabel = rng.permutation(n_entities)
    os.makedirs(directory, exist_ok=True)
    _write(os.path.join(directory, "rel_triples_1"), _named(tri, "en/e", "en/r"))
    _write(os.path.join(directory, "rel_triples_2"),
           [(f"de/x{relabel[h]}", f"de/q{r}", f"de/x{relabel[t]}") for h, r, t in tri])
    used = np.unique(tri[:, [0, 2]])
    links = [(f"en/e{e}", f"de/x{relabel[e]}") for e in used]
    _write(os.path.join(directory, "ent_links"), links)
    perm = rng.permutation(len(links))
    n_train, n_valid = int(train_frac * len(links)), int(valid_frac * len(links))
    fold = os.path.join(directory, "721_5fold", "1")
    os.makedirs(fold, exist_ok=True)
    parts = {"train": perm[:n_train], "valid": perm[n_train:n_train + n_valid], "test": perm[n_train + n_valid:]}
    for name, idx in parts.items():
        _write(os.path.join(fold, f"{name}_links"), [links[i] for i in np.sort(idx)])
    return str(directory)


def write_typing_kg(directory, n_entities=60, n_relations=4, n_triples=400, n_clusters=6, seed=0,
                    fracs=(0.1, 0.2)) -> str:
    """Relational splits plus ``ET_*.txt`` assertions: one type per cluster."""
    write_single_kg(directory, clustered_triples(n_entities, n_relations, n_triples, n_clusters, seed),
                    seed=seed)
    rng = np.random.default_rng(seed + 2)
    ents = np.arange(n_entities)
    tr, va, te = _split(n_entities, fracs, rng)
    for name, idx in (("train", tr), ("valid", va), ("test", te)):
        _write(os.path.join(directory, f"ET_{name}.txt"),
               [(f"e{e}", f"/type/t{e % n_clusters}") for e in ents[np.sort(idx)]])
    return str(directory)


def write_multisource(directory, n_entities=80, n_relations=4, n_triples=700, seed=0, link_frac=0.5,
                      keep=0.6, fracs=(0.1, 0.1)) -> str:
    """Two partial views of one underlying graph with per-KG link prediction
    splits in ``lp_1/`` and ``lp_2/``; ``link_frac`` of the shared entities are
    seed-aligned."""
    rng = np.random.default_rng(seed)
    tri = clustered_triples(n_entities, n_relations, n_triples, seed=seed)
    os.makedirs(directory, exist_ok=True)
    views = []
    for i, (ep, rp) in enumerate((("a/e", "r"), ("b/e", "r")), start=1):
        pick = np.sort(rng.permutation(len(tri))[:int(keep * len(tri))])
        view = tri[pick]
        views.append(view)
        named = _named(view, ep, rp)
        _write(os.path.join(directory, f"rel_triples_{i}"), named)
        lp = os.path.join(directory, f"lp_{i}")
        os.makedirs(lp, exist_ok=True)
        tr, va, te = _split(len(named), fracs, np.random.default_rng(seed + 10 + i))
        for name, idx in (("train", tr), ("valid", va), ("test", te)):
            _write(os.path.join(lp, f"{name}.txt"), [named[j] for j in np.sort(idx)])
    common = np.intersect1d(np.unique(views[0][:, [0, 2]]), np.unique(views[1][:, [0, 2]]))
    chosen = np.sort(rng.permutation(common)[:int(link_frac * len(common))])
    _write(os.path.join(directory, "ent_links"), [(f"a/e{e}", f"b/e{e}") for e in chosen])
    return str(directory)
