"""Task drivers: link prediction, entity alignment, entity typing and
multi-source link prediction, plus run-directory output."""
from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import models
from .config import TaskSpec
from .evaluation import alignment_eval, link_prediction_eval, typing_eval
from .kgdata import (DataError, KnownFilter, load_openea_dir, load_single_kg_dir,
                     load_typing_dir, overlap_count, remove_overlap_triples, validate_split)
from .sampling import NegSampleConfig
from .training import (AlignmentTerm, Checkpoint, EarlyStopConfig, LossConfig, Optimizer, TrainLog,
                       Trainer, TrainerConfig, controller_run)
from .training.checkpoint import encode_checkpoint

logger = logging.getLogger(__name__)


def _filter(splits, name, n_e, n_r):
    """Known-triple filter for evaluation; ``splits`` is ``(train, valid, test)``."""
    if name == "raw":
        return None
    take = {"train": 1, "train+valid": 2, "train+valid+test": 3}[name]
    return KnownFilter(np.concatenate([np.asarray(s).reshape(-1, 3) for s in splits[:take]]), n_e, n_r)


def _cap(arr, limit, seed):
    if limit <= 0 or len(arr) <= limit:
        return arr
    idx = np.sort(np.random.default_rng([seed, 7]).permutation(len(arr))[:limit])
    return arr[idx]


def _remap(triples, ent_ids, rel_ids, n_e, n_r):
    """Re-express joint-id triples in the compact ids ``0..len(ent_ids)``."""
    e = np.full(n_e, -1, np.int64)
    e[ent_ids] = np.arange(len(ent_ids))
    r = np.full(n_r, -1, np.int64)
    r[rel_ids] = np.arange(len(rel_ids))
    out = np.column_stack([e[triples[:, 0]], r[triples[:, 1]], e[triples[:, 2]]])
    if (out < 0).any():
        raise DataError("triple references an entity outside its KG")
    return out


# --------------------------------------------------------------------------
# tasks
# --------------------------------------------------------------------------

class LinkPredictionTask:
    name = "lp"

    def __init__(self, spec: TaskSpec, train, valid, test, n_entities, n_relations, entity_names=None,
                 candidates=None):
        self.spec = spec
        self.train, self.valid, self.test = train, valid, test
        self.n_entities, self.n_relations = n_entities, n_relations
        self.entity_names = entity_names
        self.candidates = candidates
        self.known_train = KnownFilter(train, n_entities, n_relations)
        self.alignment = None

    @classmethod
    def load(cls, spec):
        ds = load_single_kg_dir(spec["data"])
        split, _ = validate_split(ds.splits[0])
        return cls(spec, split.train, split.valid, split.test, ds.n_entities, ds.n_relations,
                   ds.entities.backward)

    def _eval(self, params, triples, filter_name, limit=0):
        known = _filter((self.train, self.valid, self.test), filter_name, self.n_entities, self.n_relations)
        triples = _cap(triples, limit, self.spec["seed"])
        return link_prediction_eval(params, triples, known, filter_name=filter_name, candidates=self.candidates,
                                    chunk=self.spec["eval.chunk"], workers=self.spec["eval.workers"])

    def valid_metric(self, params):
        return self._eval(params, self.valid, "train", self.spec["control.valid_max"]).mrr

    def has_valid(self):
        return len(self.valid) > 0

    def report(self, params, filter_name=None) -> dict:
        rep = self._eval(params, self.test, filter_name or self.spec["eval.filter"])
        return rep.to_dict()


class EntityAlignmentTask:
    name = "ea"

    def __init__(self, spec, ds):
        self.spec = spec
        self.ds = ds
        self.train = np.concatenate([s.train for s in ds.splits])
        self.n_entities, self.n_relations = ds.n_entities, ds.n_relations
        self.known_train = KnownFilter(self.train, self.n_entities, self.n_relations)
        self.entity_names = ds.entities.backward
        gold = ds.alignment.get("train")
        self.valid_pairs = ds.alignment.get("valid")
        self.test_pairs = ds.alignment.get("test")
        if spec["align.mode"] == "shared":
            self.alignment = None
        else:
            if len(gold) < 1:
                raise DataError("entity alignment needs at least one train pair")
            self.alignment = AlignmentTerm(gold, spec["align.mode"], spec["align.weight"], spec["align.k"],
                                           spec["align.margin"], np.asarray(ds.kg_entities[1]))
        self.gold = gold

    @classmethod
    def load(cls, spec):
        shared = spec["align.mode"] == "shared"
        ds = load_openea_dir(spec["data"], shared=shared, split_dir=spec["data.split_dir"] or None)
        return cls(spec, ds)

    def _eval(self, params, pairs, limit=0):
        pairs = _cap(pairs, limit, self.spec["seed"])
        cand = None if self.spec["eval.candidates"] == "test" else np.asarray(self.ds.kg_entities[1])
        return alignment_eval(params.ent, pairs, self.spec["eval.similarity"], csls_k=self.spec["eval.csls_k"],
                              candidates=cand)

    def has_valid(self):
        return len(self.valid_pairs) > 0

    def valid_metric(self, params):
        return self._eval(params, self.valid_pairs, self.spec["control.valid_max"]).mrr

    def report(self, params, filter_name=None) -> dict:
        if len(self.test_pairs) == 0:
            raise DataError("no test alignment pairs")
        out = self._eval(params, self.test_pairs).to_dict()
        out["similarity"] = self.spec["eval.similarity"]
        out["align_mode"] = self.spec["align.mode"]
        return out

    def bootstrap_hook(self):
        every = self.spec["align.bootstrap"]
        if every <= 0 or self.alignment is None:
            return None
        gold = self.gold
        left = np.setdiff1d(self.ds.kg_entities[0], gold[:, 0])
        right = np.setdiff1d(self.ds.kg_entities[1], gold[:, 1])
        threshold = self.spec["align.threshold"]

        def hook(trainer):
            if trainer.epoch == 0 or trainer.epoch % every:
                return
            extra = mutual_nearest_pairs(trainer.params.ent, left, right, threshold)
            trainer.alignment.pairs = np.concatenate([gold, extra]) if len(extra) else gold
            logger.info("epoch %d: %d pseudo-aligned pairs", trainer.epoch, len(extra))
        return hook


class EntityTypingTask:
    name = "et"

    def __init__(self, spec, ds):
        self.spec = spec
        split, _ = validate_split(ds.splits[0])
        ta = ds.type_assertions
        n_base = ds.n_entities
        self.type_relation = ds.n_relations
        self.type_ids = n_base + np.arange(len(ta.types))
        self.n_entities = n_base + len(ta.types)
        self.n_relations = ds.n_relations + 1

        def as_triples(pairs):
            pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
            return np.column_stack([pairs[:, 0], np.full(len(pairs), self.type_relation), pairs[:, 1] + n_base])

        self.et = {s: ta.pairs.get(s, np.zeros((0, 2), np.int64)) for s in ("train", "valid", "test")}
        self.train = np.concatenate([split.train, as_triples(self.et["train"])])
        self.filter_parts = (self.train, np.concatenate([split.valid, as_triples(self.et["valid"])]),
                             np.concatenate([split.test, as_triples(self.et["test"])]))
        self.known_train = KnownFilter(self.train, self.n_entities, self.n_relations)
        self.entity_names = list(ds.entities.backward) + [f"type:{t}" for t in ta.types.backward]
        self.alignment = None

    @classmethod
    def load(cls, spec):
        return cls(spec, load_typing_dir(spec["data"]))

    def _eval(self, params, pairs, filter_name, limit=0):
        pairs = _cap(np.asarray(pairs), limit, self.spec["seed"])
        pairs = np.column_stack([pairs[:, 0], pairs[:, 1] + self.type_ids[0]]) if len(pairs) else pairs
        known = _filter(self.filter_parts, filter_name, self.n_entities, self.n_relations)
        return typing_eval(params, pairs, self.type_relation, self.type_ids, known, filter_name=filter_name,
                           chunk=self.spec["eval.chunk"], workers=self.spec["eval.workers"])

    def has_valid(self):
        return len(self.et["valid"]) > 0

    def valid_metric(self, params):
        return self._eval(params, self.et["valid"], "train", self.spec["control.valid_max"]).mrr

    def report(self, params, filter_name=None) -> dict:
        return self._eval(params, self.et["test"], filter_name or self.spec["eval.filter"]).to_dict()


class MultiSourceTask:
    """Joint model over the shared-id union; reports per-KG link prediction."""
    name = "multi_lp"

    def __init__(self, spec, ds):
        ds, removed = remove_overlap_triples(ds, spec["multi.overlap"])
        self.removed = removed
        self.ds = ds
        assert_no_overlap(ds, spec["multi.overlap"])
        self.spec = spec
        self.n_entities, self.n_relations = ds.n_entities, ds.n_relations
        self.train = np.concatenate([s.train for s in ds.splits])
        self.known_train = KnownFilter(self.train, self.n_entities, self.n_relations)
        self.entity_names = ds.entities.backward
        self.alignment = None
        self.parts = [LinkPredictionTask(spec, s.train, s.valid, s.test, ds.n_entities, ds.n_relations,
                                         candidates=np.asarray(ds.kg_entities[i]))
                      for i, s in enumerate(ds.splits)]

    @classmethod
    def load(cls, spec):
        ds = load_openea_dir(spec["data"], shared=True, split_dir=spec["data.split_dir"] or None,
                             lp_splits=(spec["data.lp_valid"], spec["data.lp_test"]), seed=spec["seed"])
        return cls(spec, ds)

    def has_valid(self):
        return all(p.has_valid() for p in self.parts)

    def valid_metric(self, params):
        return float(np.mean([p.valid_metric(params) for p in self.parts]))

    def report(self, params, filter_name=None) -> dict:
        return {"task": "multi_lp", "removed_overlap": self.removed,
                "kgs": [p.report(params, filter_name) for p in self.parts]}

    def separate_task(self, i):
        """KG ``i`` alone, in compact ids, with the same test triples."""
        ds = self.ds
        ents = np.asarray(ds.kg_entities[i])
        rels = np.asarray(ds.kg_relations[i])
        s = ds.splits[i]
        names = [ds.entities.backward[e] for e in ents]
        n = (ds.n_entities, ds.n_relations)
        return LinkPredictionTask(self.spec, _remap(s.train, ents, rels, *n), _remap(s.valid, ents, rels, *n),
                                  _remap(s.test, ents, rels, *n), len(ents), len(rels), names)


def assert_no_overlap(ds, criterion="exact"):
    """Multi-source guarantee: no valid/test triple of any KG is a training
    triple of the joint graph."""
    if overlap_count(ds, criterion):
        raise AssertionError("overlap triples remain after removal")
    joint = KnownFilter(np.concatenate([s.train for s in ds.splits]), ds.n_entities, ds.n_relations)
    for s in ds.splits:
        for part in (s.valid, s.test):
            if len(part) and joint.contains(part[:, 0], part[:, 1], part[:, 2]).any():
                raise AssertionError("a held-out triple is in the joint training set")


def mutual_nearest_pairs(ent, left, right, threshold, chunk=2048):
    """Pairs ``(l, r)`` that are each other's cosine nearest neighbour with
    similarity at least ``threshold``."""
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    if len(left) == 0 or len(right) == 0:
        return np.zeros((0, 2), np.int64)
    unit = ent / np.maximum(np.linalg.norm(ent, axis=1, keepdims=True), 1e-300)
    L, R = unit[left], unit[right]
    best_r = np.empty(len(left), np.int64)
    best_r_sim = np.empty(len(left))
    for lo in range(0, len(left), chunk):
        sim = L[lo:lo + chunk] @ R.T
        best_r[lo:lo + chunk] = sim.argmax(1)
        best_r_sim[lo:lo + chunk] = sim.max(1)
    best_l = np.empty(len(right), np.int64)
    for lo in range(0, len(right), chunk):
        best_l[lo:lo + chunk] = (R[lo:lo + chunk] @ L.T).argmax(1)
    i = np.arange(len(left))
    keep = (best_l[best_r] == i) & (best_r_sim >= threshold)
    return np.column_stack([left[keep], right[best_r[keep]]])


TASK_TYPES = {"lp": LinkPredictionTask, "ea": EntityAlignmentTask, "et": EntityTypingTask,
              "multi_lp": MultiSourceTask}


# --------------------------------------------------------------------------
# training driver
# --------------------------------------------------------------------------

@dataclass
class RunOutput:
    spec: TaskSpec
    report: dict
    params: models.ModelParams
    checkpoint: bytes
    log: list
    entity_names: list | None = None
    extra_reports: dict = field(default_factory=dict)


def build_trainer(spec: TaskSpec, task) -> Trainer:
    kind = spec.model_kind
    rel_dim = spec["train.rel_dim"] or None
    params = models.init_params(kind, spec["train.dim"], task.n_entities, task.n_relations, spec["seed"], rel_dim)
    neg = NegSampleConfig(spec["neg.strategy"], spec["neg.k"], spec["neg.side"], spec["neg.ratio"],
                          spec["neg.temperature"], spec["neg.refresh"])
    loss = LossConfig(spec["loss.kind"], spec["loss.margin"], spec["loss.pos_limit"], spec["loss.neg_limit"],
                      spec["loss.balance"], spec["loss.offset"])
    opt = Optimizer(spec["train.optimizer"], spec["train.lr"])
    cfg = TrainerConfig(spec["train.batch_size"], spec["train.workers"], spec["train.parallel"], spec["seed"],
                        spec["train.use_kernel"])
    return Trainer(params, task.train, neg, loss, opt, task.known_train, cfg, task.alignment)


def fit(spec: TaskSpec, task, log: TrainLog | None = None) -> Trainer:
    """Train with validation-driven early stopping (plain training to
    ``train.epochs`` when there is no validation data)."""
    trainer = build_trainer(spec, task)
    hook = getattr(task, "bootstrap_hook", lambda: None)()
    if hook is not None:
        trainer.epoch_hook = hook
    log = log or TrainLog()
    if task.has_valid():
        es = EarlyStopConfig(spec["train.epochs"], spec["control.interval"], spec["control.patience"])
        res = controller_run(trainer, task.valid_metric, es, log)
        logger.info("best validation MRR %.4f at epoch %d", res.best_metric, res.best_epoch)
    else:
        while trainer.epoch < spec["train.epochs"]:
            stats = trainer.train_epoch()
            log.write({"epoch": stats.epoch + 1, "loss": stats.loss, "seconds": round(stats.seconds, 6)})
    return trainer


def _checkpoint(spec, trainer, task_name):
    return encode_checkpoint(trainer.snapshot(spec.values, {"task": task_name}))


def execute(spec: TaskSpec, task=None) -> RunOutput:
    task = task or TASK_TYPES[spec["task"]].load(spec)
    log = TrainLog()
    trainer = fit(spec, task, log)
    report = task.report(trainer.params)
    out = RunOutput(spec, report, trainer.params, _checkpoint(spec, trainer, task.name), log.records,
                    task.entity_names)
    if isinstance(task, MultiSourceTask) and spec["multi.separate"]:
        separate = []
        for i in range(len(task.parts)):
            sub = task.separate_task(i)
            t = fit(spec, sub)
            separate.append(sub.report(t.params))
        report["separate"] = separate
        report["comparison"] = [_compare_row(j, s) for j, s in zip(report["kgs"], separate)]
    return out


def _compare_row(joint, separate):
    row = {}
    for key in ("1", "10"):
        row[f"hits@{key}"] = {"joint": joint["hits"][key], "separate": separate["hits"][key]}
    row["mrr"] = {"joint": joint["mrr"], "separate": separate["mrr"]}
    return row


def run_link_prediction(spec: TaskSpec, out_dir=None) -> dict:
    return _run_single(spec, "lp", out_dir)


def run_entity_alignment(spec: TaskSpec, out_dir=None) -> dict:
    return _run_single(spec, "ea", out_dir)


def run_entity_typing(spec: TaskSpec, out_dir=None) -> dict:
    return _run_single(spec, "et", out_dir)


def run_multisource_lp(spec: TaskSpec, out_dir=None) -> dict:
    if spec["task"] != "multi_lp":
        raise ValueError("spec is not a multi_lp task")
    out = execute(spec)
    if out_dir is not None:
        write_run(out_dir, out)
    return out.report


def _run_single(spec, task, out_dir):
    if spec["task"] != task:
        raise ValueError(f"spec task is {spec['task']!r}, not {task!r}")
    out = execute(spec)
    if out_dir is not None:
        write_run(out_dir, out)
    return out.report


# --------------------------------------------------------------------------
# evaluation of a saved checkpoint
# --------------------------------------------------------------------------

def evaluate_checkpoint(ckpt: Checkpoint, spec: TaskSpec, filter_name=None) -> dict:
    task = TASK_TYPES[spec["task"]].load(spec)
    if (task.n_entities, task.n_relations) != (ckpt.params.n_entities, ckpt.params.n_relations):
        raise DataError("checkpoint vocabulary does not match the dataset")
    return task.report(ckpt.params, filter_name)


# --------------------------------------------------------------------------
# run directory
# --------------------------------------------------------------------------

def check_out_dir(out_dir) -> None:
    if os.path.exists(out_dir) and (not os.path.isdir(out_dir) or os.listdir(out_dir)):
        raise FileExistsError(f"output directory {out_dir} exists and is not empty")


def write_run(out_dir, out: RunOutput) -> None:
    """Write everything to a temporary sibling directory, then rename it into
    place, so a failed run leaves nothing behind."""
    check_out_dir(out_dir)
    parent = os.path.dirname(os.path.abspath(out_dir))
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(dir=parent, prefix=".run-")
    try:
        with open(os.path.join(tmp, "config.json"), "w") as fh:
            fh.write(out.spec.to_json() + "\n")
        with open(os.path.join(tmp, "train.log.jsonl"), "w") as fh:
            for rec in out.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(os.path.join(tmp, "report.json"), "w") as fh:
            fh.write(json.dumps(out.report, sort_keys=True, indent=2) + "\n")
        with open(os.path.join(tmp, "checkpoint.bin"), "wb") as fh:
            fh.write(out.checkpoint)
        export_embeddings(tmp, out.params, out.spec["export.format"], out.entity_names)
        if os.path.isdir(out_dir):
            os.rmdir(out_dir)
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def export_embeddings(directory, params, fmt="both", entity_names=None) -> list:
    written = []
    if fmt in ("tsv", "both"):
        p = os.path.join(directory, "embeddings.tsv")
        models.export_tsv(p, params.ent)
        written.append(p)
    if fmt in ("bin", "both"):
        p = os.path.join(directory, "embeddings.bin")
        models.export_binary(p, params.ent)
        written.append(p)
    if entity_names is not None and fmt != "none":
        p = os.path.join(directory, "entities.tsv")
        with open(p, "w", encoding="utf-8") as fh:
            for i, name in enumerate(entity_names):
                fh.write(f"{i}\t{name}\n")
        written.append(p)
    return written


def merge_dataset(data_dir, out_dir, split_dir=None) -> dict:
    """Materialise the shared-id joint graph of a two-KG dataset."""
    ds = load_openea_dir(data_dir, shared=True, split_dir=split_dir)
    check_out_dir(out_dir)
    parent = os.path.dirname(os.path.abspath(out_dir))
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(dir=parent, prefix=".merge-")
    try:
        with open(os.path.join(tmp, "entities.tsv"), "w", encoding="utf-8") as fh:
            for i, name in enumerate(ds.entities.backward):
                fh.write(f"{i}\t{name}\n")
        with open(os.path.join(tmp, "relations.tsv"), "w", encoding="utf-8") as fh:
            for i, name in enumerate(ds.relations.backward):
                fh.write(f"{i}\t{name}\n")
        joint = np.concatenate([s.all() for s in ds.splits])
        with open(os.path.join(tmp, "triples.tsv"), "w", encoding="utf-8") as fh:
            for h, r, t in joint.tolist():
                fh.write(f"{h}\t{r}\t{t}\n")
        for split in ("valid", "test"):
            pairs = ds.alignment.get(split)
            if len(pairs):
                with open(os.path.join(tmp, f"{split}_links.tsv"), "w", encoding="utf-8") as fh:
                    for a, b in pairs.tolist():
                        fh.write(f"{a}\t{b}\n")
        if os.path.isdir(out_dir):
            os.rmdir(out_dir)
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return {"entities": ds.n_entities, "relations": ds.n_relations, "triples": int(len(joint))}


__all__ = ["run_link_prediction", "run_entity_alignment", "run_entity_typing", "run_multisource_lp",
           "execute", "fit", "write_run", "evaluate_checkpoint", "merge_dataset", "mutual_nearest_pairs",
           "assert_no_overlap"]
