"""Score functions, analytic gradients, initialisation and constraints.

Every model scores a triple so that *higher is more plausible*; translational
models return negated distances.  Parameters live in named tables whose first
axis is indexed by entity or relation id, so gradients are sparse: a list of
``(table, row_ids, row_grads)`` entries.

Complex-valued vectors (ComplEx, RotatE and the complex block of Analogy) are
stored as ``[real half | imaginary half]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels

TAGS = ("TransE", "TransH", "TransR", "TransD", "RESCAL", "DistMult",
        "ComplEx", "HolE", "Analogy", "SimplE", "RotatE")
TRANSLATIONAL = ("TransE", "TransH", "TransR", "TransD")
_BY_LOWER = {t.lower(): t for t in TAGS}


@dataclass(frozen=True)
class ModelKind:
    """Model tag plus distance options.

    ``norm`` is ``"L1"`` or ``"L2"``.  For RotatE, L1 is the sum of complex
    moduli.  ``squared`` turns the L2 distance into its square.
    """
    tag: str
    norm: str = "L2"
    squared: bool = False

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown model {self.tag!r}; expected one of {', '.join(TAGS)}")
        if self.norm not in ("L1", "L2"):
            raise ValueError(f"norm must be 'L1' or 'L2', got {self.norm!r}")
        if self.squared and self.norm != "L2":
            raise ValueError("squared distance requires the L2 norm")

    @classmethod
    def parse(cls, name: str, norm: str | None = None, squared: bool = False) -> "ModelKind":
        tag = _BY_LOWER.get(name.lower())
        if tag is None:
            raise ValueError(f"unknown model {name!r}; expected one of {', '.join(TAGS)}")
        if norm is None:
            norm = "L1" if tag == "RotatE" else "L2"
        return cls(tag, norm.upper(), squared)

    @property
    def translational(self) -> bool:
        return self.tag in TRANSLATIONAL

    @property
    def distance_mode(self) -> int:
        if self.tag == "RotatE" and self.norm == "L1":
            return kernels.CMOD
        if self.norm == "L1":
            return kernels.L1
        return kernels.L2SQ if self.squared else kernels.L2


@dataclass
class ModelParams:
    """Embedding tables of one model.

    ``tables`` maps a table name to an array whose first axis is indexed by
    the id space named in ``index`` (``"entity"`` or ``"relation"``).
    """
    kind: ModelKind
    tables: dict
    index: dict
    n_entities: int
    n_relations: int
    dim: int
    meta: dict = field(default_factory=dict)

    @property
    def ent(self) -> np.ndarray:
        return self.tables["ent"]

    @property
    def rel(self) -> np.ndarray:
        return self.tables["rel"]

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, {k: v.copy() for k, v in self.tables.items()}, dict(self.index),
                           self.n_entities, self.n_relations, self.dim, dict(self.meta))

    def equal(self, other: "ModelParams") -> bool:
        """Bitwise equality of every table."""
        return (self.kind == other.kind and self.tables.keys() == other.tables.keys()
                and all(np.array_equal(self.tables[k], other.tables[k]) for k in self.tables))


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------

def _complex_split(dim: int) -> int:
    """Width of Analogy's complex block (even, about half of ``dim``)."""
    return (dim // 2) // 2 * 2


def table_layout(kind: ModelKind, n_e: int, n_r: int, dim: int, rel_dim: int | None = None):
    """``{name: (index, shape)}`` for every table of ``kind``."""
    tag = kind.tag
    if tag in ("ComplEx", "RotatE") and dim % 2:
        raise ValueError(f"{tag} needs an even dimension, got {dim}")
    if dim < 1:
        raise ValueError(f"dimension must be positive, got {dim}")
    if tag == "Analogy" and dim < 3:
        raise ValueError("Analogy needs dim >= 3")
    layout = {"ent": ("entity", (n_e, dim))}
    if tag == "TransR":
        d_r = rel_dim or dim
        layout["rel"] = ("relation", (n_r, d_r))
        layout["proj"] = ("relation", (n_r, d_r, dim))
    elif tag == "RESCAL":
        layout["rel"] = ("relation", (n_r, dim, dim))
    elif tag == "RotatE":
        layout["rel"] = ("relation", (n_r, dim // 2))
    else:
        layout["rel"] = ("relation", (n_r, dim))
    if tag == "TransH":
        layout["norm_vec"] = ("relation", (n_r, dim))
    elif tag == "TransD":
        layout["ent_proj"] = ("entity", (n_e, dim))
        layout["rel_proj"] = ("relation", (n_r, dim))
    elif tag == "SimplE":
        layout["ent_tail"] = ("entity", (n_e, dim))
        layout["rel_inv"] = ("relation", (n_r, dim))
    return layout


def init_params(kind: ModelKind, dim: int, n_entities: int, n_relations: int, seed: int,
                rel_dim: int | None = None) -> ModelParams:
    """Uniform ``[-6/sqrt(d), 6/sqrt(d)]`` initialisation, deterministic in ``seed``.

    Translational models get unit-norm entity rows; TransH normals are unit
    vectors; TransR projections start at the identity; RESCAL matrices use
    the bound of their flattened width; RotatE phases are uniform on
    ``[-pi, pi)``.
    """
    if isinstance(kind, str):
        kind = ModelKind.parse(kind)
    layout = table_layout(kind, n_entities, n_relations, dim, rel_dim)
    rng = np.random.default_rng(seed)
    tables, index = {}, {}
    for name, (idx, shape) in layout.items():
        width = int(np.prod(shape[1:]))
        bound = 6.0 / np.sqrt(width)
        tables[name] = rng.uniform(-bound, bound, size=shape)
        index[name] = idx
    if kind.translational:
        tables["ent"] = _unit_rows(tables["ent"])
    if kind.tag == "TransH":
        tables["norm_vec"] = _unit_rows(tables["norm_vec"])
        _orthogonalise(tables["rel"], tables["norm_vec"], np.arange(n_relations))
    elif kind.tag == "TransR":
        d_r, d_e = layout["proj"][1][1:]
        tables["proj"] = np.broadcast_to(np.eye(d_r, d_e), layout["proj"][1]).copy()
    elif kind.tag == "RotatE":
        tables["rel"] = rng.uniform(-np.pi, np.pi, size=layout["rel"][1])
    return ModelParams(kind, tables, index, n_entities, n_relations, dim,
                       {"rel_dim": rel_dim or dim})


def _unit_rows(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    # leave rows that are already unit up to rounding, so repeated calls are no-ops
    done = (n == 0) | (np.abs(n - 1.0) <= 1e-12)
    return x / np.where(done, 1.0, n)


def _orthogonalise(rel, normals, ids):
    w = normals[ids]
    r = rel[ids]
    dot = (w * r).sum(1, keepdims=True)
    dot[np.abs(dot) <= 1e-12] = 0.0
    rel[ids] = r - dot * w


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------

def _dist_grad(v, mode):
    """Per-row ``-dist(v)`` and its gradient with respect to ``v``."""
    if mode == kernels.L1:
        return -np.abs(v).sum(1), -np.sign(v)
    if mode == kernels.L2SQ:
        return -(v * v).sum(1), -2.0 * v
    if mode == kernels.CMOD:
        half = v.shape[1] // 2
        mod = np.sqrt(v[:, :half] ** 2 + v[:, half:] ** 2)
        inv = np.divide(1.0, mod, out=np.zeros_like(mod), where=mod > 0)
        return -mod.sum(1), -np.concatenate([v[:, :half] * inv, v[:, half:] * inv], axis=1)
    n = np.sqrt((v * v).sum(1))
    inv = np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)
    return -n, -v * inv[:, None]


def _split(x):
    half = x.shape[-1] // 2
    return x[..., :half], x[..., half:]


def _corr(a, b):
    """Circular correlation ``c_k = sum_i a_i b_{(i+k) mod d}`` (row-wise)."""
    d = a.shape[-1]
    return np.fft.irfft(np.conj(np.fft.rfft(a)) * np.fft.rfft(b), n=d)


def _conv(a, b):
    d = a.shape[-1]
    return np.fft.irfft(np.fft.rfft(a) * np.fft.rfft(b), n=d)


def _groups(ids):
    """Yield ``(value, positions)`` for each distinct value in ``ids``."""
    order = np.argsort(ids, kind="stable")
    vals, starts = np.unique(ids[order], return_index=True)
    ends = np.append(starts[1:], len(ids))
    for v, s, e in zip(vals, starts, ends):
        yield int(v), order[s:e]


# --------------------------------------------------------------------------
# per-model scorers
# --------------------------------------------------------------------------

class _Scorer:
    """Batched scoring.  ``grad`` returns ``(scores, entries)`` where each entry
    is ``(table, ids, rows)`` holding d(score_b)/d(table[ids[b]])."""

    def score(self, P, h, r, t):
        raise NotImplementedError

    def grad(self, P, h, r, t):
        raise NotImplementedError

    def tails(self, P, h, r):
        raise NotImplementedError

    def heads(self, P, r, t):
        raise NotImplementedError


class _Translational(_Scorer):
    """Shared plumbing: ``score = -dist(project(h) + r - project(t))``."""

    def project_all(self, P, rel_id):
        raise NotImplementedError

    def project(self, P, ent_ids, rel_ids):
        raise NotImplementedError

    def translation(self, P, rel_ids):
        return P.tables["rel"][rel_ids]

    def score(self, P, h, r, t):
        v = self.project(P, h, r) + self.translation(P, r) - self.project(P, t, r)
        return _dist_grad(v, P.kind.distance_mode)[0]

    def tails(self, P, h, r):
        out = np.empty((len(h), P.n_entities))
        q = self.project(P, h, r) + self.translation(P, r)
        for rel_id, pos in _groups(r):
            out[pos] = kernels.distance_scores(q[pos], self.project_all(P, rel_id), P.kind.distance_mode)
        return out

    def heads(self, P, r, t):
        out = np.empty((len(t), P.n_entities))
        q = self.project(P, t, r) - self.translation(P, r)
        for rel_id, pos in _groups(r):
            out[pos] = kernels.distance_scores(q[pos], self.project_all(P, rel_id), P.kind.distance_mode)
        return out


class TransE(_Translational):
    def project_all(self, P, rel_id):
        return P.ent

    def project(self, P, ent_ids, rel_ids):
        return P.ent[ent_ids]

    def grad(self, P, h, r, t):
        E, R = P.ent, P.rel
        s, g = _dist_grad(E[h] + R[r] - E[t], P.kind.distance_mode)
        return s, [("ent", h, g), ("rel", r, g), ("ent", t, -g)]


class TransH(_Translational):
    def project_all(self, P, rel_id):
        w = P.tables["norm_vec"][rel_id]
        return P.ent - np.outer(P.ent @ w, w)

    def project(self, P, ent_ids, rel_ids):
        x = P.ent[ent_ids]
        w = P.tables["norm_vec"][rel_ids]
        return x - (w * x).sum(1, keepdims=True) * w

    def grad(self, P, h, r, t):
        E = P.ent
        w = P.tables["norm_vec"][r]
        x = E[h] - E[t]
        wx = (w * x).sum(1, keepdims=True)
        s, g = _dist_grad(x - wx * w + P.rel[r], P.kind.distance_mode)
        gw = (g * w).sum(1, keepdims=True)
        dx = g - gw * w
        return s, [("ent", h, dx), ("ent", t, -dx), ("rel", r, g),
                   ("norm_vec", r, -gw * x - wx * g)]


class TransR(_Translational):
    def project_all(self, P, rel_id):
        return P.ent @ P.tables["proj"][rel_id].T

    def project(self, P, ent_ids, rel_ids):
        return np.einsum("bij,bj->bi", P.tables["proj"][rel_ids], P.ent[ent_ids])

    def grad(self, P, h, r, t):
        E = P.ent
        M = P.tables["proj"][r]
        x = E[h] - E[t]
        s, g = _dist_grad(np.einsum("bij,bj->bi", M, x) + P.rel[r], P.kind.distance_mode)
        dx = np.einsum("bij,bi->bj", M, g)
        return s, [("ent", h, dx), ("ent", t, -dx), ("rel", r, g),
                   ("proj", r, np.einsum("bi,bj->bij", g, x))]


class TransD(_Translational):
    def project_all(self, P, rel_id):
        rp = P.tables["rel_proj"][rel_id]
        a = (P.tables["ent_proj"] * P.ent).sum(1)
        return P.ent + np.outer(a, rp)

    def project(self, P, ent_ids, rel_ids):
        x = P.ent[ent_ids]
        a = (P.tables["ent_proj"][ent_ids] * x).sum(1, keepdims=True)
        return x + a * P.tables["rel_proj"][rel_ids]

    def grad(self, P, h, r, t):
        E, Ep = P.ent, P.tables["ent_proj"]
        rp = P.tables["rel_proj"][r]
        hv, tv, hp, tp = E[h], E[t], Ep[h], Ep[t]
        a = (hp * hv).sum(1, keepdims=True)
        b = (tp * tv).sum(1, keepdims=True)
        s, g = _dist_grad(hv + a * rp + P.rel[r] - tv - b * rp, P.kind.distance_mode)
        gr = (rp * g).sum(1, keepdims=True)
        return s, [("ent", h, g + gr * hp), ("ent_proj", h, gr * hv),
                   ("ent", t, -g - gr * tp), ("ent_proj", t, -gr * tv),
                   ("rel", r, g), ("rel_proj", r, (a - b) * g)]


class RotatE(_Scorer):
    def _rotate(self, P, x, r, conj=False):
        theta = P.rel[r]
        c, s = np.cos(theta), np.sin(theta)
        if conj:
            s = -s
        xr, xi = _split(x)
        return np.concatenate([xr * c - xi * s, xr * s + xi * c], axis=1)

    def score(self, P, h, r, t):
        v = self._rotate(P, P.ent[h], r) - P.ent[t]
        return _dist_grad(v, P.kind.distance_mode)[0]

    def grad(self, P, h, r, t):
        E = P.ent
        theta = P.rel[r]
        c, sn = np.cos(theta), np.sin(theta)
        hr, hi = _split(E[h])
        v = np.concatenate([hr * c - hi * sn, hr * sn + hi * c], axis=1) - E[t]
        s, g = _dist_grad(v, P.kind.distance_mode)
        gr, gi = _split(g)
        dh = np.concatenate([gr * c + gi * sn, -gr * sn + gi * c], axis=1)
        dtheta = gr * (-hr * sn - hi * c) + gi * (hr * c - hi * sn)
        return s, [("ent", h, dh), ("ent", t, -g), ("rel", r, dtheta)]

    def tails(self, P, h, r):
        return kernels.distance_scores(self._rotate(P, P.ent[h], r), P.ent, P.kind.distance_mode)

    def heads(self, P, r, t):
        return kernels.distance_scores(self._rotate(P, P.ent[t], r, conj=True), P.ent, P.kind.distance_mode)


class RESCAL(_Scorer):
    def score(self, P, h, r, t):
        return np.einsum("bi,bij,bj->b", P.ent[h], P.rel[r], P.ent[t])

    def grad(self, P, h, r, t):
        E, M = P.ent, P.rel[r]
        hv, tv = E[h], E[t]
        s = np.einsum("bi,bij,bj->b", hv, M, tv)
        return s, [("ent", h, np.einsum("bij,bj->bi", M, tv)),
                   ("ent", t, np.einsum("bij,bi->bj", M, hv)),
                   ("rel", r, np.einsum("bi,bj->bij", hv, tv))]

    def tails(self, P, h, r):
        return np.einsum("bij,bi->bj", P.rel[r], P.ent[h]) @ P.ent.T

    def heads(self, P, r, t):
        return np.einsum("bij,bj->bi", P.rel[r], P.ent[t]) @ P.ent.T


class DistMult(_Scorer):
    def score(self, P, h, r, t):
        return (P.ent[h] * P.rel[r] * P.ent[t]).sum(1)

    def grad(self, P, h, r, t):
        hv, rv, tv = P.ent[h], P.rel[r], P.ent[t]
        return (hv * rv * tv).sum(1), [("ent", h, rv * tv), ("rel", r, hv * tv), ("ent", t, hv * rv)]

    def tails(self, P, h, r):
        return (P.ent[h] * P.rel[r]) @ P.ent.T

    def heads(self, P, r, t):
        return (P.rel[r] * P.ent[t]) @ P.ent.T


def _complex_parts(hv, rv, tv):
    """ComplEx score and partial derivatives on ``[re | im]`` vectors."""
    hr, hi = _split(hv)
    rr, ri = _split(rv)
    tr, ti = _split(tv)
    s = (hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr).sum(1)
    dh = np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=1)
    dr = np.concatenate([hr * tr + hi * ti, hr * ti - hi * tr], axis=1)
    dt = np.concatenate([hr * rr - hi * ri, hi * rr + hr * ri], axis=1)
    return s, dh, dr, dt


class ComplEx(_Scorer):
    def score(self, P, h, r, t):
        return _complex_parts(P.ent[h], P.rel[r], P.ent[t])[0]

    def grad(self, P, h, r, t):
        s, dh, dr, dt = _complex_parts(P.ent[h], P.rel[r], P.ent[t])
        return s, [("ent", h, dh), ("rel", r, dr), ("ent", t, dt)]

    def tails(self, P, h, r):
        hr, hi = _split(P.ent[h])
        rr, ri = _split(P.rel[r])
        return np.concatenate([hr * rr - hi * ri, hi * rr + hr * ri], axis=1) @ P.ent.T

    def heads(self, P, r, t):
        rr, ri = _split(P.rel[r])
        tr, ti = _split(P.ent[t])
        return np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=1) @ P.ent.T


class HolE(_Scorer):
    def score(self, P, h, r, t):
        return (P.rel[r] * _corr(P.ent[h], P.ent[t])).sum(1)

    def grad(self, P, h, r, t):
        hv, rv, tv = P.ent[h], P.rel[r], P.ent[t]
        ht = _corr(hv, tv)
        return (rv * ht).sum(1), [("ent", h, _corr(rv, tv)), ("rel", r, ht), ("ent", t, _conv(rv, hv))]

    def tails(self, P, h, r):
        return _conv(P.rel[r], P.ent[h]) @ P.ent.T

    def heads(self, P, r, t):
        return _corr(P.rel[r], P.ent[t]) @ P.ent.T


class Analogy(_Scorer):
    """DistMult on the leading real block plus ComplEx on the trailing block."""

    def _cut(self, P):
        return P.dim - _complex_split(P.dim)

    def score(self, P, h, r, t):
        k = self._cut(P)
        hv, rv, tv = P.ent[h], P.rel[r], P.ent[t]
        return (hv[:, :k] * rv[:, :k] * tv[:, :k]).sum(1) + _complex_parts(hv[:, k:], rv[:, k:], tv[:, k:])[0]

    def grad(self, P, h, r, t):
        k = self._cut(P)
        hv, rv, tv = P.ent[h], P.rel[r], P.ent[t]
        s, dh, dr, dt = _complex_parts(hv[:, k:], rv[:, k:], tv[:, k:])
        s = s + (hv[:, :k] * rv[:, :k] * tv[:, :k]).sum(1)
        dh = np.concatenate([rv[:, :k] * tv[:, :k], dh], axis=1)
        dr = np.concatenate([hv[:, :k] * tv[:, :k], dr], axis=1)
        dt = np.concatenate([hv[:, :k] * rv[:, :k], dt], axis=1)
        return s, [("ent", h, dh), ("rel", r, dr), ("ent", t, dt)]

    def tails(self, P, h, r):
        k = self._cut(P)
        hv, rv = P.ent[h], P.rel[r]
        hr, hi = _split(hv[:, k:])
        rr, ri = _split(rv[:, k:])
        w = np.concatenate([hv[:, :k] * rv[:, :k], hr * rr - hi * ri, hi * rr + hr * ri], axis=1)
        return w @ P.ent.T

    def heads(self, P, r, t):
        k = self._cut(P)
        rv, tv = P.rel[r], P.ent[t]
        rr, ri = _split(rv[:, k:])
        tr, ti = _split(tv[:, k:])
        w = np.concatenate([rv[:, :k] * tv[:, :k], rr * tr + ri * ti, rr * ti - ri * tr], axis=1)
        return w @ P.ent.T


class SimplE(_Scorer):
    """``ent`` holds head-role vectors, ``ent_tail`` tail-role vectors."""

    def score(self, P, h, r, t):
        Eh, Et = P.ent, P.tables["ent_tail"]
        R, Ri = P.rel, P.tables["rel_inv"]
        return 0.5 * ((Eh[h] * R[r] * Et[t]).sum(1) + (Eh[t] * Ri[r] * Et[h]).sum(1))

    def grad(self, P, h, r, t):
        Eh, Et = P.ent, P.tables["ent_tail"]
        rv, riv = P.rel[r], P.tables["rel_inv"][r]
        hh, ht, th, tt = Eh[h], Et[h], Eh[t], Et[t]
        s = 0.5 * ((hh * rv * tt).sum(1) + (th * riv * ht).sum(1))
        return s, [("ent", h, 0.5 * rv * tt), ("ent_tail", t, 0.5 * hh * rv), ("rel", r, 0.5 * hh * tt),
                   ("ent", t, 0.5 * riv * ht), ("ent_tail", h, 0.5 * th * riv), ("rel_inv", r, 0.5 * th * ht)]

    def tails(self, P, h, r):
        Eh, Et = P.ent, P.tables["ent_tail"]
        w1 = Eh[h] * P.rel[r]
        w2 = P.tables["rel_inv"][r] * Et[h]
        return 0.5 * (w1 @ Et.T + w2 @ Eh.T)

    def heads(self, P, r, t):
        Eh, Et = P.ent, P.tables["ent_tail"]
        w1 = P.rel[r] * Et[t]
        w2 = Eh[t] * P.tables["rel_inv"][r]
        return 0.5 * (w1 @ Eh.T + w2 @ Et.T)


SCORERS = {cls.__name__: cls() for cls in (TransE, TransH, TransR, TransD, RESCAL, DistMult,
                                           ComplEx, HolE, Analogy, SimplE, RotatE)}


# --------------------------------------------------------------------------
# public functional API
# --------------------------------------------------------------------------

def _ids(P, h, r, t=None):
    h = np.atleast_1d(np.asarray(h, dtype=np.int64))
    r = np.atleast_1d(np.asarray(r, dtype=np.int64))
    for name, arr, hi in (("entity", h, P.n_entities), ("relation", r, P.n_relations)):
        if arr.size and (arr.min() < 0 or arr.max() >= hi):
            raise IndexError(f"{name} id out of range [0, {hi})")
    if t is None:
        return h, r
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if t.size and (t.min() < 0 or t.max() >= P.n_entities):
        raise IndexError(f"entity id out of range [0, {P.n_entities})")
    return h, r, t


def score_batch(P: ModelParams, h, r, t) -> np.ndarray:
    h, r, t = _ids(P, h, r, t)
    return SCORERS[P.kind.tag].score(P, h, r, t)


def score(P: ModelParams, triple) -> float:
    """Plausibility of a single ``(h, r, t)``."""
    h, r, t = triple
    return float(score_batch(P, [h], [r], [t])[0])


def grad_batch(P: ModelParams, h, r, t):
    """Scores and per-triple gradient entries ``[(table, ids, rows), ...]``."""
    h, r, t = _ids(P, h, r, t)
    return SCORERS[P.kind.tag].grad(P, h, r, t)


def accumulate(entries, seeds=None) -> dict:
    """Sum gradient entries (optionally scaled per triple by ``seeds``) into
    ``{table: (unique_ids, rows)}``."""
    acc = {}
    for name, ids, rows in entries:
        if seeds is not None:
            rows = rows * np.asarray(seeds).reshape((-1,) + (1,) * (rows.ndim - 1))
        acc.setdefault(name, []).append((ids, rows))
    out = {}
    for name, parts in acc.items():
        ids = np.concatenate([p[0] for p in parts])
        rows = np.concatenate([p[1] for p in parts])
        uniq, inv = np.unique(ids, return_inverse=True)
        g = np.zeros((len(uniq),) + rows.shape[1:])
        np.add.at(g, inv, rows)
        out[name] = (uniq, g)
    return out


def grad(P: ModelParams, triple) -> dict:
    """Sparse gradient of ``score(triple)``: ``{table: (ids, rows)}``."""
    h, r, t = triple
    _, entries = grad_batch(P, [h], [r], [t])
    return accumulate(entries)


def score_all_tails(P: ModelParams, h, r) -> np.ndarray:
    """Scores of ``(h, r, e)`` for every entity ``e``; batched over ``h, r``."""
    scalar = np.ndim(h) == 0
    h, r = _ids(P, h, r)
    out = SCORERS[P.kind.tag].tails(P, h, r)
    return out[0] if scalar else out


def score_all_heads(P: ModelParams, r, t) -> np.ndarray:
    """Scores of ``(e, r, t)`` for every entity ``e``; batched over ``r, t``."""
    scalar = np.ndim(t) == 0
    t, r = _ids(P, t, r)
    out = SCORERS[P.kind.tag].heads(P, r, t)
    return out[0] if scalar else out


def apply_constraints(P: ModelParams, touched: dict | None = None) -> None:
    """Project parameters back onto their constraint sets, in place.

    ``touched`` maps table names to row ids; ``None`` means every row.
    Translational models keep entity rows inside the unit ball; TransH also
    renormalises hyperplane normals and removes the normal component from
    the translation.
    """
    kind = P.kind
    if not kind.translational:
        return

    def rows(name):
        if touched is None:
            return np.arange(P.tables[name].shape[0])
        return np.asarray(touched.get(name, ()), dtype=np.int64)

    ent_ids = rows("ent")
    if len(ent_ids):
        E = P.tables["ent"]
        x = E[ent_ids]
        n = np.sqrt((x * x).sum(1))
        # rows already on the sphere up to rounding are left alone
        big = n > 1.0 + 1e-12
        E[ent_ids[big]] = x[big] / n[big, None]
    if kind.tag == "TransH":
        rel_ids = np.union1d(rows("rel"), rows("norm_vec"))
        if len(rel_ids):
            W = P.tables["norm_vec"]
            W[rel_ids] = _unit_rows(W[rel_ids])
            _orthogonalise(P.tables["rel"], W, rel_ids)


# --------------------------------------------------------------------------
# embedding export
# --------------------------------------------------------------------------

EMB_MAGIC = b"MUKG"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIQQ")


def export_tsv(path, matrix) -> None:
    """``id<TAB>v1<TAB>...<TAB>vd`` per row, ``repr``-exact floats."""
    matrix = np.asarray(matrix, dtype=np.float64).reshape(len(matrix), -1)
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(matrix):
            fh.write(str(i) + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def read_tsv(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for expect, line in enumerate(fh):
            fields = line.rstrip("\n").split("\t")
            if int(fields[0]) != expect:
                raise ValueError(f"{path}: expected id {expect}, got {fields[0]}")
            rows.append([float(v) for v in fields[1:]])
    return np.asarray(rows, dtype=np.float64)


def export_binary(path, matrix) -> None:
    """Little-endian block: magic ``MUKG``, u32 version, u64 n, u64 d, n*d float64."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8").reshape(len(matrix), -1)
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes())


def encode_matrix(matrix) -> bytes:
    matrix = np.ascontiguousarray(matrix, dtype="<f8").reshape(len(matrix), -1)
    return _EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, matrix.shape[0], matrix.shape[1]) + matrix.tobytes()


def decode_matrix(buf: bytes, offset: int = 0):
    """Parse one binary block at ``offset``; returns ``(matrix, next_offset)``."""
    if len(buf) - offset < _EMB_HEADER.size:
        raise ValueError("truncated embedding block header")
    magic, version, n, d = _EMB_HEADER.unpack_from(buf, offset)
    if magic != EMB_MAGIC:
        raise ValueError(f"bad embedding magic {magic!r}")
    if version != EMB_VERSION:
        raise ValueError(f"unsupported embedding version {version}")
    start = offset + _EMB_HEADER.size
    end = start + 8 * n * d
    if end > len(buf):
        raise ValueError("truncated embedding block")
    return np.frombuffer(buf[start:end], dtype="<f8").reshape(n, d).astype(np.float64), end


def read_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    matrix, end = decode_matrix(buf)
    if end != len(buf):
        raise ValueError(f"{path}: {len(buf) - end} trailing bytes")
    return matrix
