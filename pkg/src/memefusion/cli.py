"""Command-line entry point: preprocess, build-graph, train, predict, evaluate, ensemble.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command
writes a run manifest (command line, resolved config, seeds, input digests,
version, timestamps) before its first output artifact.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import default_seed, defaults
from .data_ingest import (
    DataError,
    load_dataset,
    load_region_features,
    load_sentiment_features,
    region_feature_dim,
    split_dataset,
    write_dataset,
)
from .evaluation import (
    PredictionSet,
    dumps_canonical,
    ensemble_predictions,
    evaluation_report,
    render_confusion,
    round_floats,
)
from .preprocess import CleaningLevel, Vocab, clean_text, tokenize
from .vocab_graph import GraphFormatError, build_graph, count_cooccurrences, graph_stats, load_graph, normalize, save_graph

log = logging.getLogger("memefusion")

LEVELS = [level.value for level in CleaningLevel]
PRESET_NAMES = ("toy", "base-like", "large-like")


class UsageError(Exception):
    """Inconsistent arguments; reported with exit code 2."""


def shipped_vocab() -> Path:
    return Path(str(resources.files("memefusion") / "data" / "vocab.txt"))


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """JSON record of one command invocation, written before any output."""

    def __init__(self, path: Path, command: str, argv: list[str]):
        self.path = path
        self.data = {
            "tool": "memefusion",
            "version": __version__,
            "command": command,
            "argv": list(argv),
            "config": {},
            "config_sources": {},
            "seeds": {},
            "inputs": {},
            "outputs": {},
            "timestamps": {"started": _now()},
        }

    def add_input(self, name: str, path: str | Path | None) -> None:
        if path is None:
            return
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"{name}: file not found: {path}")
        self.data["inputs"][name] = {"path": str(path), "sha256": sha256_file(path)}

    def add_output(self, name: str, path: Path) -> None:
        self.data["outputs"][name] = {"path": str(path), "sha256": sha256_file(path)}

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(dumps_canonical(round_floats(self.data)), encoding="utf-8")

    def finish(self, **result) -> None:
        self.data["result"] = result
        self.data["timestamps"]["finished"] = _now()
        self.write()


def _manifest_for(out: Path, args) -> RunManifest:
    return RunManifest(out.with_name(out.name + ".manifest.json"), args.command, args.argv)


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    out = Path(args.out)
    manifest = _manifest_for(out, args)
    manifest.add_input("dataset", args.input)
    vocab_path = args.vocab or shipped_vocab()
    manifest.add_input("vocab", vocab_path)
    manifest.data["config"] = {"level": args.level, "max_len": args.max_len}
    manifest.write()

    records = load_dataset(args.input)
    vocab = Vocab.load(vocab_path)
    cleaned = [replace(r, cleaned_text=clean_text(r.raw_text, args.level)) for r in records]
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, cleaned)

    n_tokens = n_unk = 0
    for r in cleaned:
        seq = tokenize(r.cleaned_text, vocab, args.max_len)
        content = [t for t, m in zip(seq.ids, seq.attention_mask) if m][1:-1]
        n_tokens += len(content)
        n_unk += sum(t == vocab.unk_id for t in content)
    manifest.add_output("cleaned", out)
    stats = {"records": len(cleaned), "tokens": n_tokens, "unk_tokens": n_unk}
    manifest.finish(**stats)
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_build_graph(args) -> int:
    from .features import corpus_nodes

    out = Path(args.out)
    manifest = _manifest_for(out, args)
    manifest.add_input("corpus", args.corpus)
    manifest.add_input("regions", args.regions)
    vocab_path = args.vocab or shipped_vocab()
    manifest.add_input("vocab", vocab_path)
    manifest.data["config"] = {
        "min_npmi": args.min_npmi,
        "min_confidence": args.min_confidence,
        "num_object_classes": args.num_object_classes,
        "edge_weight": args.edge_weight,
        "max_len": args.max_len,
    }
    manifest.write()

    vocab = Vocab.load(vocab_path)
    records = load_dataset(args.corpus)
    regions = load_region_features(args.regions, args.min_confidence) if args.regions else {}
    counts = count_cooccurrences(corpus_nodes(records, vocab, regions, args.num_object_classes, args.max_len))
    graph = build_graph(
        counts,
        min_npmi=args.min_npmi,
        num_text_tokens=len(vocab),
        num_object_classes=args.num_object_classes,
        edge_weight=args.edge_weight,
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out)
    stats = round_floats(graph_stats(graph))
    manifest.add_output("graph", out)
    manifest.finish(**stats)
    print(json.dumps(stats, sort_keys=True))
    return 0


_TRAIN_FLAGS = {
    "lr": "lr",
    "warmup_steps": "warmup_steps",
    "weight_decay": "weight_decay",
    "batch_size": "batch_size",
    "max_epochs": "max_epochs",
    "patience": "patience",
    "seed": "seed",
    "split_seed": "split_seed",
    "task": "task",
    "threshold": "threshold",
}


def resolve_train_config(args):
    """Merge defaults, the config file and CLI flags (in rising priority)
    and report where every value came from."""
    from .training import TrainConfig

    table = defaults()["train"]
    values = {**table["common"], **table[args.variant]}
    sources = {k: "default" for k in values}
    env_seed = os.environ.get("MEMEFUSION_SEED")
    values["seed"] = default_seed()
    sources["seed"] = "env:MEMEFUSION_SEED" if env_seed not in (None, "") else "default"
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise DataError(f"{args.config}: training config must be a JSON object")
        for k, v in data.items():
            values[k] = v
            sources[k] = "file"
    for flag, key in _TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
            sources[key] = "cli"
    if args.oversample:
        values["oversample"], values["loss_weighting"] = True, False
        sources["oversample"] = sources["loss_weighting"] = "cli"
    try:
        config = TrainConfig(**values)
    except TypeError as exc:
        raise DataError(f"invalid training config: {exc}") from exc
    if config.split_seed is None:
        sources["split_seed"] = sources.get("seed", "default")
    return config, {k: sources.get(k, "default") for k in config.to_dict()}


def _examples(records, vocab, regions, region_dim, num_classes, sentiment, max_len):
    from .features import build_example

    return [build_example(r, vocab, regions, region_dim, num_classes, sentiment, max_len) for r in records]


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .model import ModelConfig, build_model
    from .training import TrainingDiverged, train

    if args.variant == "vgcn" and not args.graph:
        raise UsageError("--variant vgcn requires --graph")
    if args.variant == "sentiment" and not args.sentiment:
        raise UsageError("--variant sentiment requires --sentiment")
    if args.variant == "sentiment" and args.graph:
        raise UsageError("--graph only applies to --variant vgcn")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out / "manifest.json", args.command, args.argv)
    vocab_path = args.vocab or shipped_vocab()
    for name, path in (("dataset", args.data), ("regions", args.regions), ("vocab", vocab_path),
                       ("sentiment", args.sentiment), ("graph", args.graph), ("config", args.config)):
        manifest.add_input(name, path)

    config, sources = resolve_train_config(args)
    model_defaults = defaults()["model"]
    preset = args.preset or model_defaults["preset"]
    min_conf = args.min_confidence if args.min_confidence is not None else defaults()["regions"]["min_confidence"]
    max_len = model_defaults["max_len"]
    split_seed = config.split_seed if config.split_seed is not None else config.seed
    manifest.data["config"] = {"train": config.to_dict(), "preset": preset, "min_confidence": min_conf}
    manifest.data["config_sources"] = sources
    manifest.data["seeds"] = {"train": config.seed, "init": config.seed, "split": split_seed}
    manifest.write()

    vocab = Vocab.load(vocab_path)
    records = load_dataset(args.data)
    regions = load_region_features(args.regions, min_conf)
    if not regions:
        raise DataError(f"{args.regions}: no region entries")
    region_dim = region_feature_dim(regions)
    sentiment = load_sentiment_features(args.sentiment) if args.sentiment else None
    sentiment_dim = len(next(iter(sentiment.values())).values) if sentiment else 0

    graph = adjacency = None
    num_classes = args.num_object_classes or model_defaults["num_object_classes"]
    if args.variant == "vgcn":
        graph = load_graph(args.graph)
        if graph.num_text_tokens != len(vocab):
            raise UsageError(f"graph was built for {graph.num_text_tokens} text tokens but the vocab has {len(vocab)}")
        if args.num_object_classes and args.num_object_classes != graph.num_object_classes:
            raise UsageError("--num-object-classes disagrees with the graph")
        num_classes = graph.num_object_classes
        adjacency = normalize(graph)

    split = split_dataset(records, config.split_ratios, split_seed)
    train_ex = _examples(split.train, vocab, regions, region_dim, num_classes, sentiment, max_len)
    val_ex = _examples(split.validation, vocab, regions, region_dim, num_classes, sentiment, max_len)

    model_config = ModelConfig.from_preset(
        preset,
        variant=args.variant,
        vocab_size=len(vocab),
        num_object_classes=num_classes,
        region_dim=region_dim,
        sentiment_dim=sentiment_dim,
        max_len=max_len,
        graph_tokens=model_defaults["graph_tokens"] if args.variant == "vgcn" else 0,
        gcn_hidden=model_defaults["gcn_hidden"],
        presence=model_defaults["presence"],
    )
    manifest.data["config"]["model"] = model_config.to_dict()
    manifest.data["split"] = {name: [r.id for r in part] for name, part in zip(("train", "dev", "validation"), split.parts())}
    manifest.write()
    model = build_model(model_config, adjacency, seed=config.seed)

    history_path = out / "history.jsonl"
    try:
        result = train(model, train_ex, val_ex, config)
    except TrainingDiverged as exc:
        history_path.write_text(exc.history.to_jsonl(), encoding="utf-8")
        manifest.add_output("history", history_path)
        manifest.finish(stop_reason="diverged", error=str(exc))
        raise
    history = result.history
    metadata = {
        "min_confidence": min_conf,
        "vocab_sha256": sha256_file(vocab_path),
        "best_epoch": history.best_epoch,
        "stop_reason": history.stop_reason,
    }
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, result.model, config.seed, metadata, graph)
    history_path.write_text(history.to_jsonl(), encoding="utf-8")
    manifest.add_output("checkpoint", ckpt)
    manifest.add_output("history", history_path)
    best = max(history.scores())
    manifest.finish(best_epoch=history.best_epoch, best_val_weighted_f1=best, stop_reason=history.stop_reason,
                    epochs=len(history.epochs))
    print(json.dumps(round_floats({"best_epoch": history.best_epoch, "best_val_weighted_f1": best,
                                   "stop_reason": history.stop_reason}), sort_keys=True))
    return 0


def _predict_checkpoint(ckpt: Path, records, args) -> PredictionSet:
    from .checkpoint import load_checkpoint
    from .features import build_example
    from .training import predict

    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    model, header = load_checkpoint(ckpt)
    cfg = model.config
    meta = header.get("metadata", {})
    vocab_path = args.vocab or shipped_vocab()
    if meta.get("vocab_sha256") and meta["vocab_sha256"] != sha256_file(vocab_path):
        log.warning("%s was trained with a different vocabulary than %s", ckpt, vocab_path)
    vocab = Vocab.load(vocab_path)
    min_conf = args.min_confidence if args.min_confidence is not None else meta.get("min_confidence", 0.7)
    regions = load_region_features(args.regions, min_conf)
    sentiment = None
    if cfg.variant == "sentiment":
        if not args.sentiment:
            raise UsageError(f"{ckpt} is a sentiment model; --sentiment is required")
        sentiment = load_sentiment_features(args.sentiment)
    examples = [
        build_example(r, vocab, regions, cfg.region_dim, cfg.num_object_classes, sentiment, cfg.max_len) for r in records
    ]
    return predict(model, examples)


def cmd_predict(args) -> int:
    out = Path(args.out)
    manifest = _manifest_for(out, args)
    for name, path in (("checkpoint", args.checkpoint), ("dataset", args.data), ("regions", args.regions),
                       ("sentiment", args.sentiment), ("vocab", args.vocab or shipped_vocab())):
        manifest.add_input(name, path)
    manifest.write()
    records = load_dataset(args.data)
    preds = _predict_checkpoint(Path(args.checkpoint), records, args)
    out.parent.mkdir(parents=True, exist_ok=True)
    preds.save(out)
    manifest.add_output("predictions", out)
    manifest.finish(records=len(preds.ids))
    return 0


def load_ensemble_spec(path: Path) -> dict:
    if not path.is_file():
        raise FileNotFoundError(f"ensemble spec not found: {path}")
    spec = json.loads(path.read_text(encoding="utf-8"))
    members = spec.get("members") if isinstance(spec, dict) else None
    if not members:
        raise DataError(f"{path}: 'members' must list at least one member")
    resolved = []
    for k, m in enumerate(members):
        if isinstance(m, str):
            m = {"checkpoint": m}
        kinds = [key for key in ("checkpoint", "predictions") if key in m]
        if len(kinds) != 1:
            raise DataError(f"{path}: member {k} needs exactly one of 'checkpoint' or 'predictions'")
        target = Path(m[kinds[0]])
        if not target.is_absolute():
            target = path.parent / target
        if not target.is_file():
            raise FileNotFoundError(f"{path}: member {k}: file not found: {target}")
        resolved.append({"kind": kinds[0], "path": target, "variant": m.get("variant")})
    return {"members": resolved, "threshold": spec.get("threshold", 0.5)}


def cmd_ensemble(args) -> int:
    spec_path = Path(args.members)
    spec = load_ensemble_spec(spec_path)
    out = Path(args.out)
    manifest = _manifest_for(out, args)
    manifest.add_input("ensemble", spec_path)
    for k, m in enumerate(spec["members"]):
        manifest.add_input(f"member_{k}", m["path"])
    if args.data:
        manifest.add_input("dataset", args.data)
    manifest.write()

    records = load_dataset(args.data) if args.data else None
    member_preds = []
    for m in spec["members"]:
        if m["kind"] == "predictions":
            member_preds.append(PredictionSet.load(m["path"]))
        else:
            if records is None or not args.regions:
                raise UsageError("checkpoint members need --data and --regions")
            member_preds.append(_predict_checkpoint(m["path"], records, args))
    merged = ensemble_predictions(member_preds)
    out.parent.mkdir(parents=True, exist_ok=True)
    merged.save(out)
    manifest.add_output("predictions", out)
    manifest.finish(members=len(member_preds), records=len(merged.ids))
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    manifest = _manifest_for(out, args)
    manifest.add_input("predictions", args.predictions)
    manifest.add_input("dataset", args.data)
    manifest.data["config"] = {"threshold": args.threshold, "repair": args.repair, "veto": args.veto,
                               "task_a_rule": args.task_a_rule}
    manifest.write()
    preds = PredictionSet.load(args.predictions)
    records = load_dataset(args.data)
    report = evaluation_report(preds, records, args.threshold, repair=args.repair, veto=args.veto,
                               task_a_rule=args.task_a_rule)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_canonical(round_floats(report)), encoding="utf-8")
    manifest.add_output("report", out)
    manifest.finish(task_a_weighted_f1=report["task_a"]["weighted"]["f1"],
                    task_b_weighted_f1=report["task_b"]["weighted"]["f1"])
    print(f"task A weighted-F1 {report['task_a']['weighted']['f1']:.4f}")
    print(f"task B weighted-F1 {report['task_b']['weighted']['f1']:.4f}")
    for label, matrix in report["confusion_matrices"].items():
        print(render_confusion(np.asarray(matrix), label))
    return 0


# ---------------------------------------------------------------------------
# parser


def _unit_interval(name: str, lo: float, hi: float):
    def parse(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not lo <= value <= hi:
            raise argparse.ArgumentTypeError(f"{name} must lie in [{lo}, {hi}], got {value}")
        return value

    return parse


def _open_unit(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"threshold must lie in (0, 1), got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    d = defaults()
    parser = argparse.ArgumentParser(prog="memefusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("preprocess", help="clean captions and add a cleaned_text column")
    p.add_argument("--in", dest="input", required=True, metavar="DATASET", help="dataset TSV")
    p.add_argument("--level", choices=LEVELS, default=d["preprocess"]["level"],
                   help="L1 strips times and dates; L2 also strips websites and @handles (default %(default)s)")
    p.add_argument("--vocab", help="vocab.txt used for the token statistics (default: shipped fixture vocab)")
    p.add_argument("--max-len", type=int, default=d["preprocess"]["max_len"], help="tokens per caption (default %(default)s)")
    p.add_argument("--out", required=True, help="output TSV")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("build-graph", help="build the token/object co-occurrence graph")
    p.add_argument("--corpus", required=True, help="corpus TSV in the dataset format")
    p.add_argument("--regions", help="regions JSONL for the corpus records (optional)")
    p.add_argument("--vocab", help="vocab.txt (default: shipped fixture vocab)")
    p.add_argument("--min-npmi", type=_unit_interval("--min-npmi", -1.0, 1.0), default=d["graph"]["min_npmi"],
                   help="edge threshold in [-1, 1] (default %(default)s)")
    p.add_argument("--min-confidence", type=_unit_interval("--min-confidence", 0.0, 1.0),
                   default=d["regions"]["min_confidence"], help="region confidence cutoff (default %(default)s)")
    p.add_argument("--num-object-classes", type=int, default=d["model"]["num_object_classes"],
                   help="size of the object-class id space (default %(default)s)")
    p.add_argument("--edge-weight", choices=("npmi", "pmi"), default=d["graph"]["edge_weight"],
                   help="stored edge weight; the threshold always applies to NPMI (default %(default)s)")
    p.add_argument("--max-len", type=int, default=d["model"]["max_len"], help="tokens per caption (default %(default)s)")
    p.add_argument("--out", required=True, help="output graph.json")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train one classifier")
    p.add_argument("--variant", choices=("sentiment", "vgcn"), required=True)
    p.add_argument("--preset", choices=PRESET_NAMES, help=f"encoder size (default {d['model']['preset']})")
    p.add_argument("--config", help="train.json with TrainConfig fields; flags below override it")
    p.add_argument("--graph", help="graph.json (required for vgcn)")
    p.add_argument("--data", required=True, help="dataset TSV, ideally preprocessed")
    p.add_argument("--regions", required=True, help="regions JSONL")
    p.add_argument("--sentiment", help="sentiment JSONL (required for the sentiment variant)")
    p.add_argument("--vocab", help="vocab.txt (default: shipped fixture vocab)")
    p.add_argument("--num-object-classes", type=int, help="object-class id space when no graph is given")
    p.add_argument("--min-confidence", type=_unit_interval("--min-confidence", 0.0, 1.0),
                   help=f"region confidence cutoff (default {d['regions']['min_confidence']})")
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int, help="training and init seed (default: MEMEFUSION_SEED or 0)")
    p.add_argument("--split-seed", type=int, help="partition seed (default: the training seed)")
    p.add_argument("--task", choices=("A", "B", "joint"))
    p.add_argument("--threshold", type=_open_unit, help="decision threshold for validation scoring")
    p.add_argument("--oversample", action="store_true", help="oversample minority types instead of weighting the loss")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    def add_feature_args(p):
        p.add_argument("--data", help="dataset TSV")
        p.add_argument("--regions", help="regions JSONL")
        p.add_argument("--sentiment", help="sentiment JSONL (sentiment members)")
        p.add_argument("--vocab", help="vocab.txt (default: shipped fixture vocab)")
        p.add_argument("--min-confidence", type=_unit_interval("--min-confidence", 0.0, 1.0),
                       help="region cutoff (default: the value stored in the checkpoint)")

    p = sub.add_parser("predict", help="score records with one checkpoint")
    p.add_argument("--checkpoint", required=True)
    add_feature_args(p)
    p.add_argument("--out", required=True, help="output predictions.jsonl")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble", help="soft-vote the members listed in ensemble.json")
    p.add_argument("--members", required=True, help="ensemble.json listing checkpoint or predictions members")
    add_feature_args(p)
    p.add_argument("--out", required=True, help="output predictions.jsonl")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("evaluate", help="weighted-F1 report and confusion matrices")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True, help="dataset TSV with gold labels")
    p.add_argument("--threshold", type=_open_unit, default=d["train"]["common"]["threshold"])
    p.add_argument("--repair", action="store_true", help="clear type labels when task A is negative")
    p.add_argument("--veto", action="store_true", help="let the non-misogynous output clear type labels")
    p.add_argument("--task-a-rule", choices=("head", "any-type"), default="head")
    p.add_argument("--out", required=True, help="output report.json")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (FileNotFoundError, DataError, GraphFormatError, ValueError, KeyError, RuntimeError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"memefusion: error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
