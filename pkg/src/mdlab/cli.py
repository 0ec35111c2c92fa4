"""Command-line pipeline: corpus -> teacher -> score -> bucket -> train ->
decode -> eval -> analyze, plus ``pipeline`` to run everything in order.

Every stage reads and writes files under the run's output directory, so
``pipeline`` with one seed is byte-equivalent to running the stages one by
one with the same config. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, bucketing, corpus, decoder, teacher, trainer
from .config import RunConfig, format_config, resolve
from .errors import ConfigError, DataError, NumericalError
from .model import ModelConfig, init_model, load_model, save_model

FILES = {
    "train_set": "train.jsonl",
    "test_set": "test.jsonl",
    "teacher": "teacher.ckpt",
    "teacher_log": "teacher_log.jsonl",
    "scored": "scored.jsonl",
    "bucketed": "bucketed.jsonl",
    "bucket_table": "buckets.json",
    "student": "student.ckpt",
    "train_log": "train_log.jsonl",
    "traces": "traces.jsonl",
    "frontier": "frontier.csv",
    "stepwise": "stepwise.csv",
}


def _path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg["outdir"], FILES[name])


def _require(cfg: RunConfig, name: str, producer: str) -> str:
    path = _path(cfg, name)
    if not os.path.exists(path):
        raise DataError(f"missing input {path}; run the `{producer}` stage first")
    return path


def _write_jsonl(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            f.write("\n")


def stage_gen_corpus(cfg: RunConfig) -> None:
    os.makedirs(cfg["outdir"], exist_ok=True)
    task = cfg["corpus.task"]
    seed = cfg["seed"]
    train = corpus.gen_corpus(task, cfg["corpus.train_count"], seed)
    # disjoint stream for the test split
    test = corpus.gen_corpus(task, cfg["corpus.test_count"], seed + 1_000_003)
    corpus.write_dataset(_path(cfg, "train_set"), train)
    corpus.write_dataset(_path(cfg, "test_set"), test)


def stage_train_teacher(cfg: RunConfig) -> None:
    dataset = corpus.read_dataset(_require(cfg, "train_set", "gen-corpus"))
    tc = teacher.TeacherTrainConfig(
        d_model=cfg["teacher.d_model"], n_layers=cfg["teacher.n_layers"],
        n_heads=cfg["teacher.n_heads"], max_seq_len=cfg["teacher.max_seq_len"],
        epochs=cfg["teacher.epochs"], batch_size=cfg["teacher.batch_size"],
        lr=cfg["teacher.lr"], weight_decay=cfg["teacher.weight_decay"],
        warmup_ratio=cfg["teacher.warmup_ratio"])
    model, log = teacher.train_teacher(dataset, tc, cfg["seed"])
    save_model(_path(cfg, "teacher"), model)
    _write_jsonl(_path(cfg, "teacher_log"), log)


def stage_score(cfg: RunConfig) -> None:
    model = load_model(_require(cfg, "teacher", "train-teacher"))
    dataset = corpus.read_dataset(_require(cfg, "train_set", "gen-corpus"))
    scored = teacher.score_corpus(model, dataset, cfg["score.metric"])
    corpus.write_dataset(_path(cfg, "scored"), scored)


def stage_bucket(cfg: RunConfig) -> None:
    scored = corpus.read_dataset(_require(cfg, "scored", "score"))
    all_scores = np.concatenate([ex.scores for ex in scored if ex.scores is not None])
    table = bucketing.compute_thresholds(
        all_scores, cfg["bucket.k"], ordering=cfg["bucket.ordering"],
        random_seed=cfg["seed"])
    bucketing.save_bucket_table(_path(cfg, "bucket_table"), table)
    corpus.write_dataset(_path(cfg, "bucketed"), bucketing.bucket_corpus(scored, table))


def _student_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        vocab_size=corpus.VOCAB_SIZE, d_model=cfg["train.d_model"],
        n_layers=cfg["train.n_layers"], n_heads=cfg["train.n_heads"],
        max_seq_len=cfg["train.max_seq_len"], attention_mode="bidirectional",
        mask_id=corpus.MASK_ID, pad_id=corpus.PAD_ID)


def stage_train(cfg: RunConfig) -> None:
    ratio = cfg["train.trajectory_ratio"]
    if ratio > 0:
        dataset = corpus.read_dataset(_require(cfg, "bucketed", "bucket"))
    else:
        dataset = corpus.read_dataset(_require(cfg, "train_set", "gen-corpus"))
    tc = trainer.TrainConfig(
        p_context=cfg["train.p_context"], p_future=cfg["train.p_future"],
        trajectory_ratio=ratio, k=cfg["bucket.k"], ordering=cfg["bucket.ordering"],
        epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"], weight_decay=cfg["train.weight_decay"],
        warmup_ratio=cfg["train.warmup_ratio"],
        loss_weighting=cfg["train.loss_weighting"],
        weight_clip=cfg["train.weight_clip"], seed=cfg["seed"])
    student = init_model(_student_config(cfg), cfg["seed"])
    student, log = trainer.train(dataset, student, tc)
    save_model(_path(cfg, "student"), student)
    _write_jsonl(_path(cfg, "train_log"), log)


def _decode_config(cfg: RunConfig) -> decoder.DecodeConfig:
    max_steps = cfg["decode.max_steps"]
    return decoder.DecodeConfig(
        max_new_tokens=cfg["decode.max_new_tokens"],
        confidence_threshold=cfg["decode.tau"],
        max_steps=None if max_steps == 0 else max_steps,
        min_commit=cfg["decode.min_commit"], seed=cfg["seed"])


def stage_decode(cfg: RunConfig) -> None:
    student = load_model(_require(cfg, "student", "train"))
    testset = corpus.read_dataset(_require(cfg, "test_set", "gen-corpus"))
    traces, accuracy, mean_tps = decoder.decode_batch(student, testset,
                                                      _decode_config(cfg))
    decoder.write_traces(_path(cfg, "traces"), traces, _decode_config(cfg))
    print(f"decode: accuracy={accuracy:.4f} tps={mean_tps:.3f} "
          f"traces={len(traces)}")


def stage_eval(cfg: RunConfig) -> None:
    student = load_model(_require(cfg, "student", "train"))
    testset = corpus.read_dataset(_require(cfg, "test_set", "gen-corpus"))
    rows = analysis.frontier_sweep(
        student, testset, cfg.taus(), [cfg["seed"]], _decode_config(cfg),
        label=cfg["eval.label"])
    analysis.write_frontier_csv(_path(cfg, "frontier"), rows)
    for r in rows:
        print(f"eval: tau={r.tau} accuracy={r.accuracy:.4f} tps={r.tps_raw:.3f}")


def stage_analyze(cfg: RunConfig) -> None:
    tmodel = load_model(_require(cfg, "teacher", "train-teacher"))
    traces, _ = decoder.read_traces(_require(cfg, "traces", "decode"))
    label = cfg["eval.label"]
    series = []
    for trace in traces[:cfg["analyze.count"]]:
        series.append((label, analysis.stepwise_nll(tmodel, trace)))
    analysis.write_stepwise_csv(_path(cfg, "stepwise"), series)


STAGES = [
    ("gen-corpus", stage_gen_corpus),
    ("train-teacher", stage_train_teacher),
    ("score", stage_score),
    ("bucket", stage_bucket),
    ("train", stage_train),
    ("decode", stage_decode),
    ("eval", stage_eval),
    ("analyze", stage_analyze),
]


def stage_pipeline(cfg: RunConfig) -> None:
    for name, fn in STAGES:
        fn(cfg)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# flag name -> (config key, type); names are globally unique so `pipeline`
# and `print-config` can expose the union
_STAGE_FLAGS = {
    "gen-corpus": {"task": ("corpus.task", str),
                   "train-count": ("corpus.train_count", int),
                   "test-count": ("corpus.test_count", int)},
    "train-teacher": {"teacher-epochs": ("teacher.epochs", int),
                      "teacher-batch-size": ("teacher.batch_size", int),
                      "teacher-lr": ("teacher.lr", float),
                      "teacher-d-model": ("teacher.d_model", int),
                      "teacher-n-layers": ("teacher.n_layers", int)},
    "score": {"metric": ("score.metric", str)},
    "bucket": {"k": ("bucket.k", int),
               "ordering": ("bucket.ordering", str)},
    "train": {"trajectory-ratio": ("train.trajectory_ratio", float),
              "p-future": ("train.p_future", float),
              "p-context": ("train.p_context", float),
              "epochs": ("train.epochs", int),
              "batch-size": ("train.batch_size", int),
              "lr": ("train.lr", float),
              "d-model": ("train.d_model", int),
              "n-layers": ("train.n_layers", int),
              "loss-weighting": ("train.loss_weighting", str),
              "weight-clip": ("train.weight_clip", float),
              "k": ("bucket.k", int)},
    "decode": {"tau": ("decode.tau", float),
               "max-new-tokens": ("decode.max_new_tokens", int),
               "max-steps": ("decode.max_steps", int),
               "min-commit": ("decode.min_commit", int)},
    "eval": {"taus": ("eval.taus", str),
             "label": ("eval.label", str),
             "max-new-tokens": ("decode.max_new_tokens", int)},
    "analyze": {"count": ("analyze.count", int),
                "label": ("eval.label", str)},
}
_ALL_FLAGS = {}
for _flags in _STAGE_FLAGS.values():
    for _f, _spec in _flags.items():
        if _f in _ALL_FLAGS and _ALL_FLAGS[_f] != _spec:
            raise AssertionError(f"ambiguous CLI flag --{_f}")
        _ALL_FLAGS[_f] = _spec
_STAGE_FLAGS["pipeline"] = _ALL_FLAGS
_STAGE_FLAGS["print-config"] = _ALL_FLAGS


def build_parser() -> _Parser:
    parser = _Parser(prog="mdlab", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = [name for name, _ in STAGES] + ["pipeline", "print-config"]
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="global seed (seed)")
        p.add_argument("--outdir", help="output directory (outdir)")
        for flag, (key, typ) in _STAGE_FLAGS.get(name, {}).items():
            p.add_argument(f"--{flag}", type=typ, dest=key.replace(".", "__"),
                           help=f"override {key}")
    return parser


def _flag_overrides(args: argparse.Namespace) -> dict:
    out = {}
    for attr, value in vars(args).items():
        if attr in ("command", "config") or value is None:
            continue
        out[attr.replace("__", ".")] = value
    return out


def run(argv: list[str]) -> None:
    args = build_parser().parse_args(argv)
    cfg = resolve(args.config, _flag_overrides(args))
    if args.command == "print-config":
        print(format_config(cfg))
        return
    if args.command == "pipeline":
        stage_pipeline(cfg)
        return
    dict(STAGES)[args.command](cfg)


def main() -> int:
    try:
        run(sys.argv[1:])
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
