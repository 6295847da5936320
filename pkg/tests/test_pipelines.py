import json
import os

import numpy as np
import pytest

from multikg.config import resolve_config
from multikg.evaluation import alignment_eval
from multikg.kgdata import DataError, load_openea_dir
from multikg.pipelines import (EntityAlignmentTask, LinkPredictionTask, MultiSourceTask, assert_no_overlap,
                               evaluate_checkpoint, execute, merge_dataset, mutual_nearest_pairs,
                               run_entity_alignment, run_link_prediction, write_run)
from multikg.synthetic import write_duplicated_kg, write_multisource, write_typing_kg
from multikg.training.checkpoint import decode_checkpoint

# settings under which the duplicated-KG structure is recovered: a loss that keeps
# pulling positives together, so twin entities converge instead of resting in slack
ALIGN_OPTS = [("task", "ea"), ("align.mode", "shared"), ("train.dim", 32), ("train.epochs", 150),
              ("train.batch_size", 128), ("train.squared", True), ("loss.kind", "nce_self_adversarial")]


def spec(**kw):
    return resolve_config(None, [(k.replace("__", "."), v) for k, v in kw.items()])


def _random_toy(n_e=15, n_r=3, n=20, seed=0):
    rng = np.random.default_rng(seed)
    tri = np.unique(rng.integers(0, [n_e, n_r, n_e], size=(n + 5, 3)), axis=0)
    return tri[rng.permutation(len(tri))[:n]]


@pytest.mark.parametrize("model", ["rescal", "transr", "complex", "hole", "analogy", "simple", "rotate"])
def test_toy_memorisation(model):
    """Expressive models overfit a 20-triple KG until every train triple ranks first."""
    tri = _random_toy()
    s = resolve_config(None, [("model", model), ("train.dim", 16), ("train.epochs", 500), ("train.batch_size", 20),
                              ("neg.k", 5), ("train.lr", 0.05)])
    task = LinkPredictionTask(s, tri, tri[:0], tri, 15, 3)
    assert execute(s, task).report["hits"]["1"] == 1.0


def test_duplicated_kg_alignment(tmp_path):
    d = write_duplicated_kg(tmp_path / "dup", valid_frac=0.0)
    rep = run_entity_alignment(resolve_config(None, ALIGN_OPTS + [("data", d)]))
    assert rep["n_queries"] == 100
    assert rep["hits"]["1"] >= 0.95


def test_shared_ids_align_train_pairs_trivially(tmp_path):
    d = write_duplicated_kg(tmp_path / "dup", n_entities=60)
    s = resolve_config(None, ALIGN_OPTS + [("data", d), ("train.epochs", 3)])
    task = EntityAlignmentTask.load(s)
    out = execute(s, task)
    gold = task.gold
    assert (gold[:, 0] == gold[:, 1]).all()
    assert alignment_eval(out.params.ent, gold).hits_at(1) == 1.0


def test_zero_alignment_weight_is_random(tmp_path):
    d = write_duplicated_kg(tmp_path / "dup", valid_frac=0.0)
    s = resolve_config(None, ALIGN_OPTS + [("data", d), ("align.mode", "pair"), ("align.weight", 0.0),
                                           ("train.epochs", 60)])
    rep = run_entity_alignment(s)
    n = rep["n_queries"]
    # random ranks are uniform on 1..n: Hits@1 ~ Binomial(n, 1/n), MR ~ (n+1)/2 with sd sqrt((n^2-1)/12/n)
    assert rep["hits"]["1"] * n <= 5
    assert abs(rep["mr"] - (n + 1) / 2) < 3 * np.sqrt((n * n - 1) / 12 / n)


def test_alignment_needs_a_train_pair(tmp_path):
    d = write_duplicated_kg(tmp_path / "dup", n_entities=40, train_frac=0.0)
    with pytest.raises(DataError, match="train pair"):
        EntityAlignmentTask.load(resolve_config(None, [("task", "ea"), ("data", d), ("align.mode", "pair")]))


def test_bootstrap_keeps_gold_pairs(tmp_path):
    d = write_duplicated_kg(tmp_path / "dup", n_entities=60)
    s = resolve_config(None, [("task", "ea"), ("data", d), ("align.mode", "pair"), ("align.bootstrap", 2),
                              ("align.threshold", -1.0), ("train.dim", 8), ("train.epochs", 4)])
    task = EntityAlignmentTask.load(s)
    gold = task.gold.copy()
    out = execute(s, task)
    assert out.report["n_queries"] == len(task.test_pairs)

    class T:
        epoch = 2
        params = out.params
        alignment = task.alignment
    task.bootstrap_hook()(T)
    pairs = task.alignment.pairs
    np.testing.assert_array_equal(pairs[:len(gold)], gold)
    extra = pairs[len(gold):]
    # pseudo pairs never reuse an entity that already has a gold counterpart
    assert not np.isin(extra[:, 0], gold[:, 0]).any() and not np.isin(extra[:, 1], gold[:, 1]).any()
    assert len(extra) > 0


def test_mutual_nearest_pairs_against_brute_force():
    rng = np.random.default_rng(4)
    ent = rng.normal(size=(30, 5))
    left, right = np.arange(0, 12), np.arange(12, 30)
    got = {tuple(p) for p in mutual_nearest_pairs(ent, left, right, 0.2, chunk=5).tolist()}
    u = ent / np.linalg.norm(ent, axis=1, keepdims=True)
    want = set()
    for a in left:
        b = max(right, key=lambda j: u[a] @ u[j])
        back = max(left, key=lambda i: u[i] @ u[b])
        if back == a and u[a] @ u[b] >= 0.2:
            want.add((int(a), int(b)))
    assert got == want


@pytest.mark.parametrize("model,lr", [("transe-et", 0.1), ("hole-et", 0.05)])
def test_typing_toy(tmp_path, model, lr):
    d = write_typing_kg(tmp_path / "et", fracs=(0.0, 0.2))
    s = resolve_config(None, [("task", "et"), ("data", d), ("model", model), ("train.dim", 16),
                              ("train.epochs", 300), ("train.batch_size", 128), ("train.lr", lr)])
    rep = execute(s).report
    assert rep["task"] == "et" and rep["n_queries"] == 12
    assert rep["hits"]["1"] == 1.0


def test_multisource_empty_seed_matches_separate(tmp_path):
    diffs = []
    for seed in range(3):
        d = write_multisource(tmp_path / f"ms{seed}", link_frac=0.0, seed=seed)
        s = resolve_config(None, [("task", "multi_lp"), ("data", d), ("train.dim", 16), ("train.epochs", 100),
                                  ("train.batch_size", 128), ("seed", seed)])
        rep = execute(s).report
        assert rep["removed_overlap"] == 0
        diffs += [c["mrr"]["joint"] - c["mrr"]["separate"] for c in rep["comparison"]]
    # a disjoint union trains each KG on its own; only sampling noise separates the two
    assert abs(np.mean(diffs)) < 0.05


def test_multisource_overlap_is_removed_and_asserted(tmp_path):
    d = write_multisource(tmp_path / "ms", link_frac=0.8)
    raw = load_openea_dir(d, shared=True, lp_splits=(0.05, 0.05))
    with pytest.raises(AssertionError):
        assert_no_overlap(raw)
    s = resolve_config(None, [("task", "multi_lp"), ("data", d)])
    task = MultiSourceTask.load(s)
    assert task.removed > 0
    assert_no_overlap(task.ds)


def test_multisource_ranks_within_each_kg(tmp_path):
    d = write_multisource(tmp_path / "ms")
    s = resolve_config(None, [("task", "multi_lp"), ("data", d), ("train.dim", 8), ("train.epochs", 2),
                              ("multi.separate", False)])
    task = MultiSourceTask.load(s)
    out = execute(s, task)
    assert "separate" not in out.report
    for i, part in enumerate(task.parts):
        rep = part._eval(out.params, part.test, "train")
        assert rep.ranks.max() <= len(task.ds.kg_entities[i])


def test_pipeline_is_deterministic(single_kg_dir):
    s = spec(data=single_kg_dir, train__dim=8, train__epochs=6, control__interval=2)
    a, b = execute(s), execute(s)
    assert a.report == b.report
    assert a.checkpoint == b.checkpoint
    # wall-clock timings are the only thing allowed to differ
    strip = [{k: v for k, v in r.items() if k != "seconds"} for r in a.log]
    assert strip == [{k: v for k, v in r.items() if k != "seconds"} for r in b.log]


def test_run_directory_contents(tmp_path, single_kg_dir):
    s = spec(data=single_kg_dir, train__dim=8, train__epochs=4)
    out_dir = tmp_path / "run"
    rep = run_link_prediction(s, out_dir)
    names = sorted(os.listdir(out_dir))
    assert names == ["checkpoint.bin", "config.json", "embeddings.bin", "embeddings.tsv", "entities.tsv",
                     "report.json", "train.log.jsonl"]
    assert json.loads((out_dir / "report.json").read_text()) == rep
    assert resolve_config(out_dir / "config.json").values == s.values
    ckpt = decode_checkpoint((out_dir / "checkpoint.bin").read_bytes())
    assert evaluate_checkpoint(ckpt, s) == rep
    with pytest.raises(FileExistsError):
        run_link_prediction(s, out_dir)


def test_failed_write_leaves_nothing(tmp_path, single_kg_dir):
    s = spec(data=single_kg_dir, train__dim=8, train__epochs=1)
    out = execute(s)
    out.params = None  # export will fail part-way through
    parent = tmp_path / "runs"
    parent.mkdir()
    with pytest.raises(Exception):
        write_run(parent / "run", out)
    assert os.listdir(parent) == []


def test_wrapper_rejects_other_task(single_kg_dir):
    with pytest.raises(ValueError, match="task"):
        run_entity_alignment(spec(data=single_kg_dir))


def test_evaluate_checkpoint_with_other_filter(single_kg_dir):
    s = spec(data=single_kg_dir, train__dim=8, train__epochs=3)
    out = execute(s)
    ckpt = decode_checkpoint(out.checkpoint)
    strict = evaluate_checkpoint(ckpt, s, "train+valid+test")
    raw = evaluate_checkpoint(ckpt, s, "raw")
    assert strict["filter"] == "train+valid+test" and raw["filter"] == "raw"
    assert strict["mr"] <= out.report["mr"] <= raw["mr"]


def test_merge_dataset(tmp_path, multisource_dir):
    stats = merge_dataset(multisource_dir, tmp_path / "merged")
    ds = load_openea_dir(multisource_dir, shared=True)
    assert stats == {"entities": ds.n_entities, "relations": ds.n_relations,
                     "triples": sum(len(s.all()) for s in ds.splits)}
    lines = (tmp_path / "merged" / "triples.tsv").read_text().splitlines()
    assert len(lines) == stats["triples"]
    ents = (tmp_path / "merged" / "entities.tsv").read_text().splitlines()
    assert len(ents) == stats["entities"]
