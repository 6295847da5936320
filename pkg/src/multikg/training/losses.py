"""Training objectives over plausibility scores.

Each loss returns its value together with the seeds ``dL/ds`` for every
score it consumed.  Scores follow the higher-is-better convention, so the
trainer multiplies score gradients by these seeds and descends; this is the
only place where the sign flips.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("marginal_ranking", "limit_based", "nce_self_adversarial", "mean_squared")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "marginal_ranking"
    margin: float = 1.0
    # limit-based: positives should score above pos_limit, negatives below neg_limit
    pos_limit: float = -0.5
    neg_limit: float = -2.0
    balance: float = 0.5
    # NCE offset; None means "use margin"
    offset: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.neg_limit > self.pos_limit:
            raise ValueError("limit-based loss needs neg_limit <= pos_limit")
        if self.balance < 0:
            raise ValueError("balance must be >= 0")

    @property
    def gamma0(self) -> float:
        return self.margin if self.offset is None else self.offset


@dataclass
class LossResult:
    value: float
    pos_seed: np.ndarray
    neg_seed: np.ndarray


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def compute_loss(cfg: LossConfig, pos_scores, neg_scores=None, neg_weights=None) -> LossResult:
    """Loss value and seeds.

    ``pos_scores`` has shape ``(B,)`` and ``neg_scores`` ``(B, k)``.  Marginal
    ranking pairs every positive with each of its own negatives.
    ``neg_weights`` (same shape as ``neg_scores``, rows summing to one) is
    only accepted by the NCE loss; without it NCE weights negatives ``1/k``.

    ``mean_squared`` reads ``pos_scores`` as negated squared distances of
    aligned pairs (``-||e1 - e2||^2``), so its value is the summed squared
    distance; it takes no negatives.
    """
    sp = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    if np.isnan(sp).any():
        raise FloatingPointError("NaN positive score")
    if cfg.kind == "mean_squared":
        if neg_scores is not None and np.size(neg_scores):
            raise ValueError("mean_squared takes no negatives")
        return LossResult(float(-sp.sum()), -np.ones_like(sp), np.zeros((len(sp), 0)))
    if neg_scores is None:
        raise ValueError(f"{cfg.kind} needs negative scores")
    sn = np.asarray(neg_scores, dtype=np.float64)
    if sn.ndim == 1:
        sn = sn.reshape(len(sp), -1)
    if sn.shape[0] != len(sp):
        raise ValueError(f"{len(sp)} positives but {sn.shape[0]} negative rows")
    if np.isnan(sn).any():
        raise FloatingPointError("NaN negative score")
    if neg_weights is not None and cfg.kind != "nce_self_adversarial":
        raise ValueError("negative weights are only used by the NCE loss")

    if cfg.kind == "marginal_ranking":
        hinge = cfg.margin - sp[:, None] + sn
        active = hinge > 0
        return LossResult(float(hinge[active].sum()), -active.sum(1).astype(np.float64),
                          active.astype(np.float64))

    if cfg.kind == "limit_based":
        hp = cfg.pos_limit - sp
        hn = sn - cfg.neg_limit
        ap, an = hp > 0, hn > 0
        value = hp[ap].sum() + cfg.balance * hn[an].sum()
        return LossResult(float(value), -ap.astype(np.float64), cfg.balance * an.astype(np.float64))

    g0 = cfg.gamma0
    if neg_weights is None:
        w = np.full(sn.shape, 1.0 / sn.shape[1])
    else:
        w = np.asarray(neg_weights, dtype=np.float64).reshape(sn.shape)
    # -log sigmoid(x) = log(1 + exp(-x))
    value = np.logaddexp(0.0, -(sp - g0)).sum() + (w * np.logaddexp(0.0, -(g0 - sn))).sum()
    pos_seed = -_sigmoid(-(sp - g0))
    neg_seed = w * _sigmoid(sn - g0)
    return LossResult(float(value), pos_seed, neg_seed)
