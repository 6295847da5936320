"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the output)
or directly with ``python3 tests/test_acceptance.py [N ...]``.

Criteria 3 to 8 need the public benchmark datasets under ``$MULTIKG_DATA``
(default ``./data``):

    FB15K-237/        train.txt valid.txt test.txt
    FB15K/            train.txt valid.txt test.txt
    FB15K-ET/         train.txt valid.txt test.txt ET_train.txt ET_valid.txt ET_test.txt
    DBP15K_ZH_EN/     rel_triples_1 rel_triples_2 ent_links [lp_1/ lp_2/]
    EN_DE_15K_V1/     rel_triples_1 rel_triples_2 ent_links 721_5fold/1/

When a dataset is missing the criterion is reported as FAIL and, under
pytest, recorded as an expected failure naming the missing path.
"""
import os
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import oracles  # noqa: E402
from test_evaluation import brute_ranks, random_kg_case  # noqa: E402
from test_models import fd_relative_error  # noqa: E402
from test_training import composition_fd_error  # noqa: E402

from multikg.config import resolve_config  # noqa: E402
from multikg.evaluation import RankingReport, link_prediction_eval, rank_entity, similarity_matrix  # noqa: E402
from multikg.kgdata import KnownFilter  # noqa: E402
from multikg.models import TAGS, ModelKind, init_params  # noqa: E402
from multikg.pipelines import LinkPredictionTask, MultiSourceTask, assert_no_overlap, execute  # noqa: E402
from multikg.sampling import NegSampleConfig  # noqa: E402
from multikg.synthetic import clustered_triples, write_duplicated_kg  # noqa: E402
from multikg.training import LossConfig, Optimizer, Trainer, TrainerConfig  # noqa: E402
from multikg.training.checkpoint import decode_checkpoint, encode_checkpoint  # noqa: E402

DATA = os.environ.get("MULTIKG_DATA", "data")
LOSSES = ("marginal_ranking", "limit_based", "nce_self_adversarial")


@dataclass
class Verdict:
    ok: bool
    detail: str
    missing: str = ""


def _missing(*names):
    paths = [os.path.join(DATA, n) for n in names]
    absent = [p for p in paths if not os.path.isdir(p)]
    if absent:
        return Verdict(False, f"dataset not found: {', '.join(absent)}", ", ".join(absent))
    return None


def _workers():
    return os.cpu_count() or 1


def _desk_spec(task, data, model="transe", **extra):
    items = [("task", task), ("data", data), ("model", model), ("train.dim", 100), ("train.epochs", 1000),
             ("train.batch_size", 1000), ("neg.k", 10), ("train.workers", _workers()),
             ("control.interval", 25), ("control.patience", 3), ("control.valid_max", 5000),
             ("eval.workers", _workers())]
    items += [(k.replace("__", "."), v) for k, v in extra.items()]
    return resolve_config(None, items)


def _timed(spec, task=None):
    t0 = time.time()
    out = execute(spec, task)
    return out, time.time() - t0


# 1 -----------------------------------------------------------------------------

def criterion_1():
    t0 = time.time()
    worst_score = worst_loss = 0.0
    n_score = n_loss = at_kink = 0
    rng = np.random.default_rng(2024)
    for tag in TAGS:
        kind = ModelKind.parse(tag)
        P = init_params(kind, 6, 12, 3, seed=1, rel_dim=4 if tag == "TransR" else None)
        for arr in P.tables.values():
            arr += rng.normal(scale=0.3, size=arr.shape)
        for _ in range(100):
            h, r, t = int(rng.integers(12)), int(rng.integers(3)), int(rng.integers(12))
            worst_score = max(worst_score, fd_relative_error(P, h, r, t))
            n_score += 1
        for loss in LOSSES:
            # each composition check covers a batch of 3 positives; draws that sit
            # on a hinge kink are replaced by fresh ones
            done, seed = 0, 0
            while done < 34:
                err = composition_fd_error(kind, loss, seed=seed)
                seed += 1
                if np.isnan(err):
                    at_kink += 1
                    continue
                worst_loss = max(worst_loss, err)
                done += 1
                n_loss += 3
    secs = time.time() - t0
    ok = worst_score < 1e-4 and worst_loss < 1e-4 and secs < 60
    return Verdict(ok, f"max rel err score {worst_score:.1e} over {n_score} triples, loss compositions "
                       f"{worst_loss:.1e} over {n_loss} triples (tol 1e-4; {at_kink} draws on a hinge kink replaced), "
                       f"{secs:.1f}s (limit 60s)")


# 2 -----------------------------------------------------------------------------

def criterion_2():
    t0 = time.time()
    mismatches = queries = tied = 0
    for seed in range(50):
        # models whose scores are exact in float64 for small integer parameters, so
        # ties are exact for both routes; rotations and FFTs would round differently
        tag = ("DistMult", "TransE", "ComplEx", "RESCAL", "SimplE")[seed % 5]
        P, train, test = random_kg_case(seed, tag)
        known = {tuple(x) for x in train.tolist()}
        kf = KnownFilter(train, P.n_entities, P.n_relations)
        for filt, ks in ((kf, known), (None, set())):
            got = link_prediction_eval(P, test, filt).ranks
            want = brute_ranks(P, test, ks)
            mismatches += int((got != want).sum())
            queries += len(want)
        tables = {k: v.tolist() for k, v in P.tables.items()}
        for h, r, t in test.tolist():
            s = [oracles.score(P.kind, tables, h, r, e) for e in range(P.n_entities)]
            tied += s.count(s[t]) > 1
    secs = time.time() - t0
    ok = mismatches == 0 and tied > 0 and secs < 60
    return Verdict(ok, f"{mismatches} mismatches in {queries} filtered+raw queries on 50 KGs "
                       f"({tied} tail queries with tied truth), {secs:.1f}s (limit 60s)")


# 3, 4 --------------------------------------------------------------------------

def _lp_desk(name, check):
    miss = _missing(name)
    if miss:
        return miss
    out, secs = _timed(_desk_spec("lp", os.path.join(DATA, name)))
    rep = out.report
    h10, mrr = rep["hits"]["10"], rep["mrr"]
    ok = check(h10, mrr) and secs <= 7200
    return Verdict(ok, f"Hits@10 {h10:.3f}, MRR {mrr:.3f}, {secs / 60:.1f} min on {_workers()} cores")


def criterion_3():
    return _lp_desk("FB15K-237", lambda h10, mrr: 0.43 <= h10 <= 0.50 and 0.24 <= mrr <= 0.30)


def criterion_4():
    return _lp_desk("FB15K", lambda h10, mrr: h10 >= 0.60)


# 5 -----------------------------------------------------------------------------

def criterion_5():
    miss = _missing("DBP15K_ZH_EN")
    if miss:
        return miss
    spec = _desk_spec("multi_lp", os.path.join(DATA, "DBP15K_ZH_EN"))
    task = MultiSourceTask.load(spec)
    assert_no_overlap(task.ds, spec["multi.overlap"])
    out, secs = _timed(spec, task)
    row = out.report["comparison"][0]
    joint, sep = row["hits@1"]["joint"], row["hits@1"]["separate"]
    ratio = joint / sep if sep > 0 else float("inf")
    ok = ratio >= 1.5 and secs <= 3 * 3600
    return Verdict(ok, f"ZH Hits@1 joint {joint:.3f} vs separate {sep:.3f} (ratio {ratio:.2f}, need 1.5), "
                       f"overlap removed {out.report['removed_overlap']}, {secs / 60:.1f} min")


# 6 -----------------------------------------------------------------------------

def criterion_6():
    miss = _missing("FB15K-ET")
    if miss:
        return miss
    out, secs = _timed(_desk_spec("et", os.path.join(DATA, "FB15K-ET"), model="rescal-et"))
    h10 = out.report["hits"]["10"]
    return Verdict(0.40 <= h10 <= 0.52 and secs <= 7200, f"RESCAL-ET Hits@10 {h10:.3f}, {secs / 60:.1f} min")


# 7 -----------------------------------------------------------------------------

DUP_OPTS = [("task", "ea"), ("align.mode", "shared"), ("train.dim", 32), ("train.epochs", 200),
            ("train.batch_size", 128), ("train.squared", True), ("loss.kind", "nce_self_adversarial"),
            ("neg.k", 30)]


def duplicated_kg_hits1(seed=0):
    with tempfile.TemporaryDirectory() as tmp:
        d = write_duplicated_kg(os.path.join(tmp, "dup"), seed=seed, valid_frac=0.0)
        rep = execute(resolve_config(None, DUP_OPTS + [("data", d), ("seed", seed)])).report
    return rep["hits"]["1"], rep["n_queries"]


def criterion_7():
    t0 = time.time()
    h1, n = duplicated_kg_hits1()
    synth = f"duplicated-KG Hits@1 {h1:.3f} on {n} held-out pairs (need 0.95, {time.time() - t0:.0f}s)"
    miss = _missing("EN_DE_15K_V1")
    if miss:
        return Verdict(False, f"{synth}; EN-DE {miss.detail}", miss.missing)
    spec = _desk_spec("ea", os.path.join(DATA, "EN_DE_15K_V1"), align__mode="pair",
                      data__split_dir="721_5fold/1")
    out, secs = _timed(spec)
    real = out.report["hits"]["1"]
    ok = h1 >= 0.95 and real >= 0.35 and secs <= 7200
    return Verdict(ok, f"{synth}; EN-DE pair-loss Hits@1 {real:.3f} (need 0.35), {secs / 60:.1f} min")


# 8 -----------------------------------------------------------------------------

def criterion_8():
    miss = _missing("FB15K-237")
    if miss:
        return Verdict(False, f"{miss.detail} ({_workers()} CPU cores available, 4 needed)", miss.missing)
    runs = {}
    for w in (1, 4):
        spec = _desk_spec("lp", os.path.join(DATA, "FB15K-237"), train__workers=w, train__parallel="hogwild")
        out, _ = _timed(spec)
        secs = [r["seconds"] for r in out.log if "seconds" in r]
        runs[w] = (len(secs) / sum(secs), out.report["mrr"])
    speedup = runs[4][0] / runs[1][0]
    drop = runs[1][1] - runs[4][1]
    ok = speedup >= 1.8 and drop <= 0.02
    return Verdict(ok, f"4-worker epoch throughput {speedup:.2f}x (need 1.8x) on {_workers()} cores, "
                       f"MRR {runs[1][1]:.3f} -> {runs[4][1]:.3f} (drop {drop:.3f}, limit 0.02)")


# 9 -----------------------------------------------------------------------------

def _toy_trainer():
    tri = clustered_triples(40, 3, 250, seed=0)
    P = init_params(ModelKind("TransE"), 8, 40, 3, seed=0)
    return Trainer(P, tri, NegSampleConfig("uniform", k=4), LossConfig(), Optimizer("adagrad", lr=0.1),
                   KnownFilter(tri, 40, 3), TrainerConfig(batch_size=64, seed=3))


def criterion_9():
    with tempfile.TemporaryDirectory() as tmp:
        from multikg.synthetic import write_single_kg
        d = write_single_kg(os.path.join(tmp, "kg"))
        spec = resolve_config(None, [("data", d), ("train.dim", 16), ("train.epochs", 20),
                                     ("control.interval", 5), ("train.workers", 1)])
        a, b = execute(spec), execute(spec)
    same_run = a.checkpoint == b.checkpoint and a.report == b.report
    full = _toy_trainer()
    for _ in range(5):
        full.train_epoch()
    part = _toy_trainer()
    for _ in range(2):
        part.train_epoch()
    blob = encode_checkpoint(part.snapshot({"toy": 1}))
    resumed = _toy_trainer()
    resumed.restore(decode_checkpoint(blob))
    for _ in range(3):
        resumed.train_epoch()
    resume_ok = encode_checkpoint(resumed.snapshot({})) == encode_checkpoint(full.snapshot({}))
    return Verdict(same_run and resume_ok, f"repeat run bitwise identical: {same_run}; "
                                           f"2+3 epoch resume equals 5 epochs: {resume_ok}")


# 10 ----------------------------------------------------------------------------

def criterion_10():
    rng = np.random.default_rng(10)
    monotone = jensen = filt = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 50))
        rep = RankingReport(rng.integers(1, 200, size=n), ks=(1, 3, 10, 100))
        h = [rep.hits_at(k) for k in (1, 3, 10, 100)]
        monotone += any(a > b for a, b in zip(h, h[1:]))
        jensen += rep.mrr < 1.0 / rep.mr
        m = int(rng.integers(2, 40))
        scores = rng.integers(0, 6, size=m).astype(float)
        truth = int(rng.integers(m))
        drop = rng.choice(m, size=int(rng.integers(0, m)), replace=False)
        filt += rank_entity(scores, truth, drop) > rank_entity(scores, truth)
    total = monotone + jensen + filt
    return Verdict(total == 0, f"violations over 10^4 multisets: Hits@K monotone {monotone}, "
                               f"mrr >= 1/mr {jensen}, filtered <= raw {filt}")


# 11 ----------------------------------------------------------------------------

def criterion_11():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        X, Y = rng.normal(size=(50, 16)), rng.normal(size=(50, 16))
        k = int(rng.integers(1, 11))
        got = similarity_matrix(X, Y, "csls", csls_k=k)
        want = np.array(oracles.csls_two_loop(X.tolist(), Y.tolist(), k))
        worst = max(worst, float(np.abs(got - want).max()))
    return Verdict(worst <= 1e-10, f"max abs diff {worst:.1e} over 100 instances of 50x50 (tol 1e-10)")


CRITERIA = {
    1: ("gradient oracle", criterion_1),
    2: ("ranking oracle", criterion_2),
    3: ("FB15K-237 TransE", criterion_3),
    4: ("FB15K TransE", criterion_4),
    5: ("multi-source DBP15K_ZH", criterion_5),
    6: ("FB15K-ET RESCAL-ET", criterion_6),
    7: ("entity alignment", criterion_7),
    8: ("parallel throughput", criterion_8),
    9: ("determinism", criterion_9),
    10: ("metric identities", criterion_10),
    11: ("CSLS oracle", criterion_11),
}


def line(n, v):
    return f"{'PASS' if v.ok else 'FAIL'} criterion {n:>2} ({CRITERIA[n][0]}): {v.detail}"


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys):
    v = CRITERIA[n][1]()
    with capsys.disabled():
        print("\n" + line(n, v))
    if v.missing:
        pytest.xfail(v.detail)
    assert v.ok, v.detail


if __name__ == "__main__":
    wanted = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    failed = 0
    for n in wanted:
        v = CRITERIA[n][1]()
        failed += not v.ok
        print(line(n, v), flush=True)
    sys.exit(1 if failed else 0)
