"""Pure numpy implementations of the hot kernels.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
extension is unavailable or ``MULTIKG_PURE_PYTHON=1``.
"""
import numpy as np

# distance modes shared with the compiled module
L1, L2, L2SQ, CMOD = 0, 1, 2, 3
SGD, ADAGRAD = 0, 1

_CHUNK_BYTES = 32 * 2**20


def _dist(diff, mode):
    if mode == L1:
        return np.abs(diff).sum(-1)
    if mode == L2:
        return np.sqrt((diff * diff).sum(-1))
    if mode == L2SQ:
        return (diff * diff).sum(-1)
    if mode == CMOD:
        half = diff.shape[-1] // 2
        return np.sqrt(diff[..., :half] ** 2 + diff[..., half:] ** 2).sum(-1)
    raise ValueError(f"unknown distance mode {mode}")


def distance_scores(Q, E, mode):
    """Negated distances ``-dist(Q[b] - E[j])`` as a ``(len(Q), len(E))`` array."""
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    E = np.ascontiguousarray(E, dtype=np.float64)
    out = np.empty((Q.shape[0], E.shape[0]), dtype=np.float64)
    step = max(1, _CHUNK_BYTES // max(1, E.size * 8))
    for lo in range(0, Q.shape[0], step):
        diff = Q[lo:lo + step, None, :] - E[None, :, :]
        out[lo:lo + step] = -_dist(diff, mode)
    return out


def _vec_dist_grad(v, mode):
    """Per-row score ``-dist(v)`` and its gradient with respect to ``v``."""
    if mode == L1:
        return -np.abs(v).sum(1), -np.sign(v)
    if mode == L2SQ:
        return -(v * v).sum(1), -2.0 * v
    if mode != L2:
        raise ValueError("TransE kernel supports L1, L2 and squared L2 only")
    n = np.sqrt((v * v).sum(1))
    safe = np.where(n > 0, n, 1.0)
    return -n, -v / safe[:, None] * (n > 0)[:, None]


def transe_batch_update(ent, rel, ent_acc, rel_acc, pos, neg, k, margin, lr, mode, optimizer, eps):
    """One margin-ranking step of TransE on a batch, in place.

    ``pos`` is ``(B, 3)``; ``neg`` is ``(B * k, 3)`` with the negatives of
    positive ``i`` in rows ``i*k:(i+1)*k``.  Gradients are taken at the
    parameters as they were at batch start, summed over all violated pairs,
    applied with SGD or Adagrad on the touched rows, and touched entity rows
    are then projected onto the unit ball.  Returns the summed hinge loss.
    """
    B = pos.shape[0]
    if B == 0:
        return 0.0
    pos_rep = np.repeat(pos, k, axis=0)
    vp = ent[pos_rep[:, 0]] + rel[pos_rep[:, 1]] - ent[pos_rep[:, 2]]
    vn = ent[neg[:, 0]] + rel[neg[:, 1]] - ent[neg[:, 2]]
    sp, gp = _vec_dist_grad(vp, mode)
    sn, gn = _vec_dist_grad(vn, mode)
    hinge = margin - sp + sn
    active = hinge > 0
    loss = float(hinge[active].sum())
    if not active.any():
        return loss
    # only rows of violated pairs count as touched
    pos_rep, neg = pos_rep[active], neg[active]
    # dL/ds_p = -1, dL/ds_n = +1; descent uses dL/dtheta
    gp = -gp[active]
    gn = gn[active]
    ids_e = np.concatenate([pos_rep[:, 0], pos_rep[:, 2], neg[:, 0], neg[:, 2]])
    rows_e = np.concatenate([gp, -gp, gn, -gn])
    ids_r = np.concatenate([pos_rep[:, 1], neg[:, 1]])
    rows_r = np.concatenate([gp, gn])
    touched_e = _apply(ent, ent_acc, ids_e, rows_e, lr, optimizer, eps)
    _apply(rel, rel_acc, ids_r, rows_r, lr, optimizer, eps)
    rows = ent[touched_e]
    norms = np.sqrt((rows * rows).sum(1))
    # slack keeps the projection idempotent under rounding
    big = norms > 1.0 + 1e-12
    if big.any():
        ent[touched_e[big]] = rows[big] / norms[big, None]
    return loss


def _apply(table, acc, ids, rows, lr, optimizer, eps):
    uniq, inv = np.unique(ids, return_inverse=True)
    g = np.zeros((len(uniq), table.shape[1]))
    np.add.at(g, inv, rows)
    if optimizer == SGD:
        table[uniq] -= lr * g
    elif optimizer == ADAGRAD:
        acc[uniq] += g * g
        table[uniq] -= lr * g / (np.sqrt(acc[uniq]) + eps)
    else:
        raise ValueError(f"unknown optimizer code {optimizer}")
    return uniq
