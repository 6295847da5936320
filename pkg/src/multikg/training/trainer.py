"""Epoch loop with sparse updates and lock-free multi-worker execution."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..models import ModelParams, accumulate, apply_constraints, grad_batch
from ..sampling import (NegSampleConfig, NeighborIndex, make_batches, make_negatives,
                        self_adversarial_weights, worker_rng)
from .checkpoint import Checkpoint
from .losses import LossConfig, compute_loss
from .optim import Optimizer

PARALLEL_MODES = ("hogwild", "sync")


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 1000
    workers: int = 1
    parallel: str = "hogwild"
    seed: int = 0
    # use the compiled TransE update when the setup allows it
    use_kernel: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.parallel not in PARALLEL_MODES:
            raise ValueError(f"parallel must be one of {PARALLEL_MODES}, got {self.parallel!r}")


@dataclass
class AlignmentTerm:
    """Cross-KG objective on seed pairs, added to the triple loss with ``weight``.

    ``kind="pair"`` pulls aligned embeddings together (squared distance);
    ``kind="margin"`` ranks each pair above ``k`` corrupted counterparts
    drawn from ``candidates`` under ``-||e1 - e2||``.
    """
    pairs: np.ndarray
    kind: str = "pair"
    weight: float = 5.0
    k: int = 1
    margin: float = 1.0
    candidates: np.ndarray | None = None

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.kind not in ("pair", "margin"):
            raise ValueError(f"alignment loss must be 'pair' or 'margin', got {self.kind!r}")
        if self.kind == "margin" and (self.candidates is None or len(self.candidates) < 2):
            raise ValueError("margin alignment loss needs at least two candidate entities")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    seconds: float
    n_positives: int


def _scaled(entries, seeds):
    """Scale per-score gradient entries by ``seeds``; rows with a zero seed are
    dropped so they do not count as touched."""
    keep = seeds != 0
    s = seeds[keep]
    out = []
    for name, ids, rows in entries:
        rows = rows[keep]
        out.append((name, ids[keep], rows * s.reshape((-1,) + (1,) * (rows.ndim - 1))))
    return out


class Trainer:
    """Owns the parameters and optimizer state of one training run.

    Batches are drawn from a per-epoch shuffle and dealt round-robin to
    workers.  Each worker samples with its own stream derived from
    ``(seed, worker, epoch)``, so an epoch is a pure function of the state at
    its start when ``workers == 1`` (or in ``sync`` mode).
    """

    def __init__(self, params: ModelParams, triples, neg: NegSampleConfig, loss: LossConfig,
                 optimizer: Optimizer, known_filter, config: TrainerConfig = TrainerConfig(),
                 alignment: AlignmentTerm | None = None):
        self.params = params
        self.triples = np.ascontiguousarray(triples, dtype=np.int64).reshape(-1, 3)
        if len(self.triples) == 0:
            raise ValueError("no training triples")
        self.neg = neg
        self.loss = loss
        self.optimizer = optimizer
        self.known_filter = known_filter
        self.config = config
        self.alignment = alignment
        self.epoch = 0
        self._index = None
        # called with the trainer at the start of every epoch
        self.epoch_hook = None
        if neg.strategy == "self_adversarial" and loss.kind != "nce_self_adversarial":
            raise ValueError("self-adversarial sampling needs the nce_self_adversarial loss")
        if loss.kind == "mean_squared":
            raise ValueError("mean_squared is an alignment loss, not a triple loss")
        # allocate optimizer state up front so worker threads never race on it
        if optimizer.kind != "sgd" or self.kernel_eligible:
            for name, table in params.tables.items():
                if optimizer.kind == "adagrad":
                    optimizer._slot("G", name, table)
                elif optimizer.kind == "adam":
                    optimizer._slot("m", name, table)
                    optimizer._slot("v", name, table)
                    optimizer._slot("t", name, table, per_row=True)

    @property
    def kernel_eligible(self) -> bool:
        kind = self.params.kind
        return (self.config.use_kernel and kind.tag == "TransE" and self.loss.kind == "marginal_ranking"
                and self.optimizer.kind in ("sgd", "adagrad") and self.neg.strategy == "uniform"
                and self.alignment is None and self.config.parallel == "hogwild")

    # ------------------------------------------------------------------

    def _negatives(self, pos, rng):
        return make_negatives(pos, self.neg, self.params.n_entities, self.known_filter, rng, self._index)

    def batch_gradients(self, pos, pairs, rng):
        """Loss value and accumulated descent gradients for one batch, computed
        at the current parameters (nothing is written)."""
        P, k = self.params, self.neg.k
        neg = self._negatives(pos, rng)
        ps, pe = grad_batch(P, pos[:, 0], pos[:, 1], pos[:, 2])
        ns, ne = grad_batch(P, neg[:, 0], neg[:, 1], neg[:, 2])
        ns = ns.reshape(len(pos), k)
        weights = None
        if self.neg.strategy == "self_adversarial":
            weights = self_adversarial_weights(ns, self.neg.temperature)
        res = compute_loss(self.loss, ps, ns, weights)
        value = res.value
        entries = _scaled(pe, res.pos_seed) + _scaled(ne, res.neg_seed.reshape(-1))
        if pairs is not None and len(pairs):
            a_value, a_entries = self._alignment_gradients(pairs, rng)
            value += a_value
            entries += a_entries
        return value, accumulate(entries)

    def _alignment_gradients(self, pairs, rng):
        A, E = self.alignment, self.params.ent
        diff = E[pairs[:, 0]] - E[pairs[:, 1]]
        if A.kind == "pair":
            res = compute_loss(LossConfig("mean_squared"), -(diff * diff).sum(1))
            # d(-||x - y||^2)/dx = -2 (x - y)
            g = -2.0 * diff * (A.weight * res.pos_seed)[:, None]
            return A.weight * res.value, [("ent", pairs[:, 0], g), ("ent", pairs[:, 1], -g)]
        cand = A.candidates
        rep = np.repeat(pairs, A.k, axis=0)
        neg = rep.copy()
        pending = np.arange(len(rep))
        while len(pending):
            neg[pending, 1] = cand[rng.integers(0, len(cand), size=len(pending))]
            pending = pending[neg[pending, 1] == rep[pending, 1]]
        sp, gp = _l2_score_grad(diff)
        sn, gn = _l2_score_grad(E[neg[:, 0]] - E[neg[:, 1]])
        res = compute_loss(LossConfig("marginal_ranking", margin=A.margin), sp, sn.reshape(len(pairs), A.k))
        w = A.weight
        entries = _scaled([("ent", pairs[:, 0], gp), ("ent", pairs[:, 1], -gp)], w * res.pos_seed)
        entries += _scaled([("ent", neg[:, 0], gn), ("ent", neg[:, 1], -gn)], w * res.neg_seed.reshape(-1))
        return w * res.value, entries

    def apply(self, grads):
        touched = self.optimizer.step(self.params.tables, grads)
        apply_constraints(self.params, touched)

    def _kernel_step(self, pos, rng):
        P, opt = self.params, self.optimizer
        neg = np.ascontiguousarray(self._negatives(pos, rng))
        if opt.kind == "adagrad":
            ent_acc, rel_acc, code = opt.state["G"]["ent"], opt.state["G"]["rel"], kernels.ADAGRAD
        else:
            ent_acc = rel_acc = np.zeros((1, P.dim))
            code = kernels.SGD
        loss = kernels.transe_batch_update(P.tables["ent"], P.tables["rel"], ent_acc, rel_acc,
                                           np.ascontiguousarray(pos), neg, self.neg.k, self.loss.margin,
                                           opt.lr, P.kind.distance_mode, code, opt.eps)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss in TransE batch update")
        return loss

    # ------------------------------------------------------------------

    def snapshot(self, config: dict, extra: dict | None = None) -> Checkpoint:
        """Checkpoint of the current state.  The sampling streams are a
        function of ``(seed, epoch)``, so those two numbers are the RNG state."""
        return Checkpoint(self.params, self.optimizer, config,
                          {"seed": self.config.seed, "epoch": self.epoch}, dict(extra or {}))

    def restore(self, ckpt: Checkpoint) -> None:
        """Continue from ``ckpt``; the next epoch run is ``ckpt.rng["epoch"]``."""
        if ckpt.rng.get("seed") != self.config.seed:
            raise ValueError(f"checkpoint seed {ckpt.rng.get('seed')} differs from trainer seed {self.config.seed}")
        if ckpt.params.kind != self.params.kind or ckpt.params.tables.keys() != self.params.tables.keys():
            raise ValueError("checkpoint holds a different model")
        self.params = ckpt.params
        self.optimizer = ckpt.optimizer
        self.epoch = int(ckpt.rng["epoch"])
        # the truncated sampler index is rebuilt from the restored embeddings
        self._index = None

    def _plan(self, epoch):
        cfg = self.config
        batches = make_batches(self.triples, cfg.batch_size, worker_rng(cfg.seed, 0, epoch))
        pair_chunks = [None] * len(batches)
        if self.alignment is not None and len(self.alignment.pairs):
            perm = worker_rng(cfg.seed, 1 << 20, epoch).permutation(len(self.alignment.pairs))
            pair_chunks = [self.alignment.pairs[c] for c in np.array_split(perm, len(batches))]
        return batches, pair_chunks

    def train_epoch(self) -> EpochStats:
        """One pass over the training triples; returns mean loss per positive."""
        start = time.perf_counter()
        if self.epoch_hook is not None:
            self.epoch_hook(self)
        epoch = self.epoch
        cfg = self.config
        if self.neg.strategy == "truncated" and (self._index is None or epoch % self.neg.refresh_every == 0):
            self._index = NeighborIndex(self.params.ent, self.neg.truncation_ratio)
        batches, pair_chunks = self._plan(epoch)
        W = min(cfg.workers, len(batches))
        rngs = [worker_rng(cfg.seed, w + 1, epoch) for w in range(W)]
        if cfg.parallel == "sync":
            total = self._run_sync(batches, pair_chunks, rngs)
        elif W == 1:
            total = self._run_worker(batches, pair_chunks, rngs[0])
        else:
            with ThreadPoolExecutor(max_workers=W) as pool:
                futures = [pool.submit(self._run_worker, batches[w::W], pair_chunks[w::W], rngs[w])
                           for w in range(W)]
                total = sum(f.result() for f in futures)
        if self.kernel_eligible:
            for name in ("ent", "rel"):
                if not np.isfinite(self.params.tables[name]).all():
                    raise FloatingPointError(f"non-finite values in parameter table {name!r}")
        self.epoch += 1
        n = len(self.triples)
        return EpochStats(epoch, total / n, time.perf_counter() - start, n)

    def _run_worker(self, batches, pair_chunks, rng):
        total = 0.0
        fast = self.kernel_eligible
        for pos, pairs in zip(batches, pair_chunks):
            if fast:
                total += self._kernel_step(pos, rng)
            else:
                value, grads = self.batch_gradients(pos, pairs, rng)
                self.apply(grads)
                total += value
        return total

    def _run_sync(self, batches, pair_chunks, rngs):
        """Workers compute gradients of a round against the same parameters;
        one applier then applies them in worker order."""
        W, total = len(rngs), 0.0
        with ThreadPoolExecutor(max_workers=W) as pool:
            for lo in range(0, len(batches), W):
                jobs = [pool.submit(self.batch_gradients, batches[lo + w], pair_chunks[lo + w], rngs[w])
                        for w in range(min(W, len(batches) - lo))]
                # wait for the whole round before writing anything
                results = [job.result() for job in jobs]
                for value, grads in results:
                    self.apply(grads)
                    total += value
        return total


def _l2_score_grad(v):
    n = np.sqrt((v * v).sum(1))
    inv = np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)
    return -n, -v * inv[:, None]
