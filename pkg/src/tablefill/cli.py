"""Command-line entry point: ``tablefill {generate,train,eval,decode,gradcheck}``.

Every flag can also come from a JSON file given with ``--config``; flags on
the command line win.  Exit codes: 0 success, 1 validation error, 2 runtime
error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .codec import decode_tables
from .core import RelationSchema, ValidationError
from .data import (
    ConfigError,
    LoadError,
    SchemaError,
    SynthConfig,
    Vocab,
    batchify,
    example_record,
    generate_synthetic,
    load_dataset,
    save_synthetic,
    split_dataset,
)
from .evaluation import count_params, metrics_report, predict, time_inference
from .model import DataError, ModelConfig, TableFillingModel
from .tensor import AdamState, CheckpointError, load_checkpoint, save_checkpoint
from .training import NonFiniteLoss, TrainConfig, TrainState, train

log = logging.getLogger("tablefill")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def version_string() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                              cwd=Path(__file__).resolve().parent, capture_output=True,
                              text=True, timeout=5)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunConfig:
    command: str = ""
    # data
    train: str | None = None
    dev: str | None = None
    data: str | None = None
    out_dir: str | None = None
    num_train: int = 500
    num_dev: int = 100
    num_test: int = 0
    synth: dict = field(default_factory=dict)
    data_seed: int = 7
    # model
    d_h: int = 64
    heads: int = 4
    N: int = 2
    emb_dim: int = 32
    rnn_hidden: list = field(default_factory=lambda: [32, 32])
    max_len: int = 100
    init_seed: int = 0
    # training
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 6
    shuffle_seed: int = 0
    target_train_f1: float | None = None
    target_dev_f1: float | None = None
    patience: int = 0
    # io
    checkpoint: str | None = None
    resume: str | None = None
    log: str | None = None
    output: str | None = None
    reverse_search: bool = True
    timing: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _synth_config(run: RunConfig) -> SynthConfig:
    known = {f.name for f in fields(SynthConfig)}
    bad = set(run.synth) - known
    if bad:
        raise ConfigError(f"unknown synthetic-corpus options: {sorted(bad)}")
    cfg = SynthConfig(**{**run.synth, "seed": run.data_seed,
                         "num_sentences": run.num_train + run.num_dev + run.num_test})
    cfg.validate()
    return cfg


def _write_json(doc, path: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------- commands

def cmd_generate(run: RunConfig) -> int:
    cfg = _synth_config(run)
    if not run.out_dir:
        raise ConfigError("generate needs --out-dir")
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(cfg)
    parts = split_dataset(ds, [run.num_train, run.num_dev, run.num_test], ["train", "dev", "test"])
    for part in parts:
        if len(part):
            save_synthetic(part, out / f"{part.split}.json", cfg)
    (out / "run.json").write_text(json.dumps({"version": version_string(), "run": run.to_dict()}, indent=2))
    print(f"wrote {len(ds)} sentences to {out}")
    return EXIT_OK


def _meta(model: TableFillingModel, vocab: Vocab, schema: RelationSchema, run: RunConfig,
          state: TrainState | None = None) -> dict:
    meta = {"version": version_string(), "model_config": model.config.to_dict(), "vocab": vocab.to_list(),
            "relations": list(schema.names), "run": run.to_dict()}
    if state is not None:
        meta["train_state"] = {"epoch": state.epoch, "best_dev_f1": state.best_dev_f1,
                               "best_epoch": state.best_epoch,
                               "history": state.history, "adam": state.adam.to_dict()}
    return meta


def load_model(path) -> tuple[TableFillingModel, Vocab, RelationSchema, dict]:
    params, meta = load_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict(meta["model_config"])
        vocab = Vocab(meta["vocab"])
        schema = RelationSchema(meta["relations"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: checkpoint metadata lacks {exc}") from None
    model = TableFillingModel(cfg)
    model.load_state_dict(params)
    return model, vocab, schema, meta


def cmd_train(run: RunConfig) -> int:
    if not run.train or not run.checkpoint:
        raise ConfigError("train needs --train and --checkpoint")
    last_path = Path(run.checkpoint).with_suffix(".last.json")
    if run.resume:
        model, vocab, schema, meta = load_model(run.resume)
        ts = meta.get("train_state")
        if ts is None:
            raise CheckpointError(f"{run.resume}: no training state to resume from")
        state = TrainState(epoch=ts["epoch"], best_dev_f1=ts["best_dev_f1"],
                           best_epoch=ts.get("best_epoch", 0), history=ts["history"],
                           adam=AdamState.from_dict(ts["adam"]))
        train_ds = load_dataset(run.train, schema, "train")
    else:
        train_ds = load_dataset(run.train, split="train")
        schema = train_ds.schema
        vocab = Vocab.build([train_ds])
        cfg = ModelConfig(num_relations=len(schema), vocab_size=len(vocab), d_h=run.d_h, heads=run.heads,
                          N=run.N, max_len=run.max_len, emb_dim=run.emb_dim, rnn_hidden=tuple(run.rnn_hidden))
        model = TableFillingModel(cfg, seed=run.init_seed)
        state = TrainState()
    dev_ds = load_dataset(run.dev, schema, "dev") if run.dev else None
    tcfg = TrainConfig(lr=run.lr, epochs=run.epochs, batch_size=run.batch_size, shuffle_seed=run.shuffle_seed,
                       train_eval_every=1 if run.target_train_f1 is not None else 0,
                       target_train_f1=run.target_train_f1, target_dev_f1=run.target_dev_f1,
                       patience=run.patience)
    best_so_far = state.best_dev_f1

    def on_epoch(row):
        print(json.dumps(row), flush=True)

    try:
        state = train(model, train_ds, dev_ds, vocab, tcfg, state, on_epoch=on_epoch)
    except NonFiniteLoss as exc:
        dump = {"error": str(exc), "epoch": exc.epoch, "run": run.to_dict(),
                "batch": [example_record(ex, schema, with_spans=True) for ex in exc.batch.examples]}
        print(json.dumps(dump), file=sys.stderr)
        return EXIT_RUNTIME
    save_checkpoint(last_path, model.params, _meta(model, vocab, schema, run, state))
    if state.best_params is not None:
        best = TableFillingModel(model.config)
        best.load_state_dict(state.best_params)
        save_checkpoint(run.checkpoint, best.params, _meta(best, vocab, schema, run))
    elif dev_ds is None or best_so_far < 0:
        save_checkpoint(run.checkpoint, model.params, _meta(model, vocab, schema, run))
    if run.log:
        _write_json({"version": version_string(), "run": run.to_dict(), "history": state.history,
                     "best_dev_f1": state.best_dev_f1}, run.log)
    return EXIT_OK


def _load_eval_inputs(run: RunConfig):
    if not run.checkpoint or not run.data:
        raise ConfigError(f"{run.command} needs --checkpoint and --data")
    model, vocab, schema, _ = load_model(run.checkpoint)
    dataset = load_dataset(run.data, schema, "eval")
    return model, vocab, schema, dataset


def cmd_eval(run: RunConfig) -> int:
    model, vocab, schema, dataset = _load_eval_inputs(run)
    preds = predict(model, dataset, vocab, run.batch_size, reverse_search=run.reverse_search)
    timing = None
    if run.timing:
        timing = {str(bs): time_inference(model, dataset, vocab, bs) for bs in (1, run.batch_size)}
    doc = metrics_report(preds, [ex.triples for ex in dataset], params=count_params(model), timing=timing,
                         run={"version": version_string(), "config": run.to_dict()})
    _write_json(doc, run.output)
    return EXIT_OK


def cmd_decode(run: RunConfig) -> int:
    model, vocab, schema, dataset = _load_eval_inputs(run)
    preds = predict(model, dataset, vocab, run.batch_size, reverse_search=run.reverse_search)
    records = []
    for ex, triples in zip(dataset, preds):
        rec = example_record(type(ex)(ex.sentence, tuple(triples)), schema, with_spans=True)
        rec["id"] = ex.sentence.id
        records.append(rec)
    _write_json({"version": version_string(), "run": run.to_dict(), "predictions": records}, run.output)
    return EXIT_OK


def cmd_gradcheck(run: RunConfig) -> int:
    from .verify import run_gradcheck

    ok, _, _ = run_gradcheck(seed=run.init_seed)
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "decode": cmd_decode,
            "gradcheck": cmd_gradcheck}


# ---------------------------------------------------------------- argument parsing

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tablefill", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("-v", "--verbose", action="store_true")
    defaults = RunConfig()
    for f in fields(RunConfig):
        if f.name in ("command", "synth", "rnn_hidden", "reverse_search", "timing"):
            continue
        kind = type(getattr(defaults, f.name))
        kind = float if f.name.startswith("target") else (str if kind is type(None) else kind)
        common.add_argument(_flag(f.name), type=kind, default=argparse.SUPPRESS)
    common.add_argument("--rnn-hidden", type=int, nargs="+", default=argparse.SUPPRESS)
    common.add_argument("--no-reverse-search", dest="reverse_search", action="store_false",
                        default=argparse.SUPPRESS, help="decode with forward and single-token routes only")
    common.add_argument("--timing", action="store_true", default=argparse.SUPPRESS)
    for name in ("vocab_size", "num_relations", "max_entities", "max_clauses", "max_entity_len"):
        common.add_argument(_flag(name), type=int, dest=f"synth.{name}", default=argparse.SUPPRESS)
    for name in ("p_epo", "p_seo", "p_nest"):
        common.add_argument(_flag(name), type=float, dest=f"synth.{name}", default=argparse.SUPPRESS)
    common.add_argument("--single-token-entities", action="store_true", dest="synth.single_token_entities",
                        default=argparse.SUPPRESS)
    helps = {"generate": "write a synthetic corpus", "train": "train a model",
             "eval": "score a checkpoint", "decode": "predict triples",
             "gradcheck": "run the finite-difference suite"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve_config(argv: list[str] | None = None) -> tuple[RunConfig, bool]:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    merged: dict = {}
    config_path = args.pop("config", None)
    if config_path:
        try:
            merged = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(merged, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
    synth = dict(merged.pop("synth", {}))
    for key in list(args):
        if key.startswith("synth."):
            synth[key[len("synth."):]] = args.pop(key)
    merged.update(args)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged["command"] = command
    merged["synth"] = synth
    return RunConfig(**merged), verbose


def main(argv: list[str] | None = None) -> int:
    try:
        run, verbose = resolve_config(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    except (ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[run.command](run)
    except (ConfigError, ValidationError, SchemaError, LoadError, DataError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
