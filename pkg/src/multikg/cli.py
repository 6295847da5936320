"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import kernels
from .config import ConfigError, TaskSpec, resolve_config
from .kgdata import DataError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# convenience flags and the config keys they set
FLAG_KEYS = {"task": "task", "model": "model", "data": "data", "dim": "train.dim", "epochs": "train.epochs",
             "seed": "seed", "workers": "train.workers", "filter": "eval.filter"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="multikg", description="Multi-source knowledge graph embedding toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("-c", "--config", help="flat key=value or JSON config file")
        sp.add_argument("-o", "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")

    t = sub.add_parser("train", help="train and evaluate a model")
    common(t)
    t.add_argument("--task")
    t.add_argument("--model")
    t.add_argument("--data")
    t.add_argument("--dim", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--filter")
    t.add_argument("--out", help="run directory (default ./runs/<timestamp>-<digest>)")

    e = sub.add_parser("eval", help="re-evaluate a saved checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="dataset directory (default: the one recorded in the checkpoint)")
    e.add_argument("--filter")
    e.add_argument("--out", help="write the report here instead of printing it")

    m = sub.add_parser("merge", help="write the shared-id joint graph of a two-KG dataset")
    m.add_argument("--data", required=True)
    m.add_argument("--split-dir")
    m.add_argument("--out", required=True)

    x = sub.add_parser("export", help="dump entity embeddings from a checkpoint")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--format", choices=("tsv", "bin", "both"), default="both")
    x.add_argument("--out", required=True)

    c = sub.add_parser("compare", help="joint-vs-separate table from report files")
    c.add_argument("reports", nargs="+", help="report.json files; a multi_lp report carries both sides")
    c.add_argument("--labels", help="comma-separated labels, one per report")
    return p


def _spec_from_args(args) -> TaskSpec:
    overrides = list(args.overrides)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, value))
    return resolve_config(args.config, overrides)


def _default_out(spec: TaskSpec) -> str:
    return os.path.join("runs", f"{time.strftime('%Y%m%d-%H%M%S')}-{spec.digest}")


def cmd_train(args) -> int:
    from . import pipelines

    spec = _spec_from_args(args)
    if not spec["data"]:
        raise ConfigError("no dataset given (--data or data=...)")
    if not os.path.isdir(spec["data"]):
        raise ConfigError(f"dataset directory not found: {spec['data']}")
    out = args.out or _default_out(spec)
    try:
        pipelines.check_out_dir(out)
    except FileExistsError as exc:
        raise ConfigError(str(exc)) from None
    logging.getLogger(__name__).info("backend=%s task=%s model=%s", kernels.BACKEND, spec["task"], spec["model"])
    result = pipelines.execute(spec)
    pipelines.write_run(out, result)
    print(json.dumps(result.report, sort_keys=True, indent=2))
    print(f"run directory: {out}", file=sys.stderr)
    return EXIT_OK


def _load_ckpt(path):
    from .training import CheckpointError, load_checkpoint

    if not os.path.isfile(path):
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_eval(args) -> int:
    from . import pipelines

    ckpt = _load_ckpt(args.checkpoint)
    overrides = [(k, v) for k, v in ckpt.config.items()]
    overrides += _parse_list(args.overrides)
    if args.data:
        overrides.append(("data", args.data))
    if args.filter:
        overrides.append(("eval.filter", args.filter))
    spec = resolve_config(args.config, overrides)
    if not os.path.isdir(spec["data"]):
        raise ConfigError(f"dataset directory not found: {spec['data']}")
    report = pipelines.evaluate_checkpoint(ckpt, spec, spec["eval.filter"])
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        from .training.checkpoint import atomic_write
        atomic_write(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_list(items):
    from .config import parse_override
    return [parse_override(i) for i in items]


def cmd_merge(args) -> int:
    from . import pipelines

    if not os.path.isdir(args.data):
        raise ConfigError(f"dataset directory not found: {args.data}")
    try:
        pipelines.check_out_dir(args.out)
    except FileExistsError as exc:
        raise ConfigError(str(exc)) from None
    stats = pipelines.merge_dataset(args.data, args.out, args.split_dir)
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_export(args) -> int:
    from . import pipelines

    ckpt = _load_ckpt(args.checkpoint)
    try:
        pipelines.check_out_dir(args.out)
    except FileExistsError as exc:
        raise ConfigError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    for path in pipelines.export_embeddings(args.out, ckpt.params, args.format):
        print(path)
    return EXIT_OK


def _rows(label, report):
    if report.get("task") == "multi_lp":
        out = []
        for i, kg in enumerate(report["kgs"]):
            out.append((f"{label} joint KG{i + 1}", kg))
            if "separate" in report:
                out.append((f"{label} separate KG{i + 1}", report["separate"][i]))
        return out
    return [(label, report)]


def render_comparison(reports, labels) -> str:
    rows = []
    for label, rep in zip(labels, reports):
        rows.extend(_rows(label, rep))
    width = max(len(r[0]) for r in rows)
    lines = [f"{'run':<{width}}  {'Hits@1':>7}  {'Hits@10':>7}  {'MRR':>7}  {'MR':>9}"]
    for label, rep in rows:
        hits = rep["hits"]
        lines.append(f"{label:<{width}}  {hits.get('1', float('nan')):>7.3f}  {hits.get('10', float('nan')):>7.3f}"
                     f"  {rep['mrr']:>7.3f}  {rep['mr']:>9.1f}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    labels = args.labels.split(",") if args.labels else [os.path.basename(os.path.dirname(os.path.abspath(p)))
                                                          or p for p in args.reports]
    if len(labels) != len(args.reports):
        raise ConfigError("need one label per report")
    reports = []
    for path in args.reports:
        try:
            with open(path, encoding="utf-8") as fh:
                reports.append(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read report {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: not a JSON report ({exc})") from None
    try:
        print(render_comparison(reports, labels))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed report: missing {exc}") from None
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "merge": cmd_merge, "export": cmd_export,
            "compare": cmd_compare}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
