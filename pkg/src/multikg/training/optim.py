"""Sparse row-wise optimizers.

Gradients arrive as ``{table: (unique_row_ids, rows)}`` for the loss being
minimised.  Only the listed rows change.  State arrays are allocated lazily
the first time a table receives a gradient.
"""
from __future__ import annotations

import numpy as np

KINDS = ("sgd", "adagrad", "adam")
DEFAULT_LR = {"sgd": 0.01, "adagrad": 0.1, "adam": 0.001}
DEFAULT_EPS = {"sgd": 0.0, "adagrad": 1e-10, "adam": 1e-8}


class Optimizer:
    def __init__(self, kind: str = "adagrad", lr: float | None = None, eps: float | None = None,
                 beta1: float = 0.9, beta2: float = 0.999):
        if kind not in KINDS:
            raise ValueError(f"unknown optimizer {kind!r}; expected one of {', '.join(KINDS)}")
        self.kind = kind
        self.lr = DEFAULT_LR[kind] if lr is None else float(lr)
        self.eps = DEFAULT_EPS[kind] if eps is None else float(eps)
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        self.beta1, self.beta2 = beta1, beta2
        # adagrad: {"G": {table: arr}}; adam: {"m":…, "v":…, "t": {table: per-row int}}
        self.state: dict = {}

    def _slot(self, slot, name, like, per_row=False):
        tables = self.state.setdefault(slot, {})
        if name not in tables:
            shape = like.shape[:1] if per_row else like.shape
            tables[name] = np.zeros(shape, dtype=np.int64 if per_row else np.float64)
        return tables[name]

    def step(self, tables: dict, grads: dict) -> dict:
        """Apply one descent step in place; returns ``{table: touched ids}``.

        Every new row is checked before anything is written, so a
        non-finite update raises ``FloatingPointError`` and leaves the
        parameters untouched.
        """
        updates = {}
        for name, (ids, g) in grads.items():
            theta = tables[name]
            if self.kind == "sgd":
                updates[name] = (ids, theta[ids] - self.lr * g, None)
            elif self.kind == "adagrad":
                G = self._slot("G", name, theta)
                acc = G[ids] + g * g
                updates[name] = (ids, theta[ids] - self.lr * g / (np.sqrt(acc) + self.eps), [(G, acc)])
            else:
                m = self._slot("m", name, theta)
                v = self._slot("v", name, theta)
                t = self._slot("t", name, theta, per_row=True)
                mi = self.beta1 * m[ids] + (1 - self.beta1) * g
                vi = self.beta2 * v[ids] + (1 - self.beta2) * g * g
                ti = t[ids] + 1
                shape = (-1,) + (1,) * (g.ndim - 1)
                mhat = mi / (1 - self.beta1 ** ti).reshape(shape)
                vhat = vi / (1 - self.beta2 ** ti).reshape(shape)
                new = theta[ids] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
                updates[name] = (ids, new, [(m, mi), (v, vi), (t, ti)])
        for name, (ids, new, _) in updates.items():
            if not np.isfinite(new).all():
                raise FloatingPointError(f"non-finite update to parameter table {name!r}")
        for name, (ids, new, slots) in updates.items():
            tables[name][ids] = new
            for arr, val in slots or ():
                arr[ids] = val
        return {name: ids for name, (ids, _, _) in updates.items()}

    # checkpoint support ---------------------------------------------------

    def state_arrays(self) -> dict:
        """Flat ``{"slot/table": array}`` view of the state."""
        return {f"{slot}/{name}": arr for slot, tables in sorted(self.state.items())
                for name, arr in sorted(tables.items())}

    def load_state_arrays(self, arrays: dict) -> None:
        self.state = {}
        for key, arr in arrays.items():
            slot, name = key.split("/", 1)
            self.state.setdefault(slot, {})[name] = arr

    def describe(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "eps": self.eps, "beta1": self.beta1, "beta2": self.beta2}
