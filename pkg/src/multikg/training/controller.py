"""Validation-driven training loop with early stopping."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

from .optim import Optimizer


@dataclass(frozen=True)
class EarlyStopConfig:
    max_epochs: int = 500
    interval: int = 10
    patience: int = 3
    # evaluate once before training so the first interval has a baseline
    eval_at_start: bool = True

    def __post_init__(self):
        if self.max_epochs < 0 or self.interval < 1 or self.patience < 1:
            raise ValueError("need max_epochs >= 0, interval >= 1 and patience >= 1")


@dataclass
class ControllerResult:
    best_metric: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    history: list = field(default_factory=list)


class TrainLog:
    """JSON-lines epoch log; each record is also kept in memory."""

    def __init__(self, path=None):
        self.path = path
        self.records = []
        if path is not None:
            open(path, "w").close()

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _snapshot(trainer):
    opt = trainer.optimizer
    clone = Optimizer(opt.kind, opt.lr, opt.eps, opt.beta1, opt.beta2)
    clone.load_state_arrays({k: v.copy() for k, v in opt.state_arrays().items()})
    return trainer.params.copy(), clone, trainer.epoch


def controller_run(trainer, evaluate: Callable[[object], float], cfg: EarlyStopConfig,
                   log: TrainLog | None = None,
                   on_best: Callable[[object], None] | None = None) -> ControllerResult:
    """Train until ``cfg.max_epochs`` or ``cfg.patience`` consecutive
    validation checks without strict improvement, then restore the best state.

    ``evaluate(params)`` returns the monitored metric (higher is better).  It
    runs every ``cfg.interval`` epochs and after the final epoch.
    ``on_best(trainer)`` is called whenever a new best is recorded.
    """
    log = log or TrainLog()
    best, best_state, best_epoch = float("-inf"), None, trainer.epoch
    bad, history, stopped = 0, [], False

    def check():
        nonlocal best, best_state, best_epoch, bad
        metric = float(evaluate(trainer.params))
        history.append((trainer.epoch, metric))
        if metric > best:
            best, best_state, best_epoch, bad = metric, _snapshot(trainer), trainer.epoch, 0
            if on_best is not None:
                on_best(trainer)
        else:
            bad += 1
        return metric

    if cfg.eval_at_start:
        check()
    start = trainer.epoch
    while trainer.epoch < cfg.max_epochs:
        stats = trainer.train_epoch()
        record = {"epoch": stats.epoch + 1, "loss": stats.loss, "seconds": round(stats.seconds, 6)}
        done = trainer.epoch - start
        if done % cfg.interval == 0 or trainer.epoch == cfg.max_epochs:
            record["valid_mrr"] = check()
        log.write(record)
        if bad >= cfg.patience:
            stopped = True
            break
    if best_state is None:
        best_state, best_epoch = _snapshot(trainer), trainer.epoch
        if not history:
            best = float("nan")
    epochs_run = trainer.epoch - start
    trainer.params, trainer.optimizer, trainer.epoch = best_state
    return ControllerResult(best, best_epoch, epochs_run, stopped, history)
