"""Command-line surface: corpus generation, training, evaluation, prediction,
ablations, sensitivity runs, and attention heatmap export.

Configuration comes from a JSON file (``--config``) with flag overrides;
flags win.  Every run writes a manifest (resolved config, digest, seed,
versions, argv) next to its outputs so it can be reproduced from the
manifest alone.  Exit codes: 1 usage error, 2 data/validation error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import corpus as cp
from . import evaluation as ev
from . import training as tr
from .lower_court import TaskGraph
from .numerics import NonFiniteError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise UsageError(message)


@dataclass
class RunConfig:
    """Full run configuration: training hyperparameters plus pipeline knobs."""

    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.1)
    split_seed: int = 0
    min_token_count: int = 1
    min_label_count: int = 1
    task_graph: TaskGraph = field(default_factory=TaskGraph)
    variant: str = "full"
    fractions: tuple[float, ...] = (1.0, 0.8, 0.6, 0.4)

    _KEYS = ("train", "split_ratios", "split_seed", "min_token_count",
             "min_label_count", "task_graph", "variant", "fractions")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(cls._KEYS)
        if unknown:
            raise cp.DataError(f"unknown run-config key(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        if "train" in data:
            kwargs["train"] = tr.TrainConfig.from_dict(data["train"])
        if "split_ratios" in data:
            kwargs["split_ratios"] = tuple(data["split_ratios"])
        if "task_graph" in data:
            kwargs["task_graph"] = TaskGraph.from_dict(data["task_graph"])
        for key in ("split_seed", "min_token_count", "min_label_count", "variant"):
            if key in data:
                kwargs[key] = data[key]
        if "fractions" in data:
            kwargs["fractions"] = tuple(data["fractions"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {"train": self.train.to_dict(),
                "split_ratios": list(self.split_ratios),
                "split_seed": self.split_seed,
                "min_token_count": self.min_token_count,
                "min_label_count": self.min_label_count,
                "task_graph": self.task_graph.to_dict(),
                "variant": self.variant,
                "fractions": list(self.fractions)}


_VARIANT_ALIASES = {"full": "full", "no_att": "no_attention",
                    "no_dep": "no_dependency", "mlma": "separate_components"}


def load_run_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    config = RunConfig.from_dict(data)
    train_kwargs = config.train.to_dict()
    if getattr(args, "seed", None) is not None:
        train_kwargs["seed"] = args.seed
        config.split_seed = args.seed
    if getattr(args, "epochs", None) is not None:
        train_kwargs["epochs"] = args.epochs
    config.train = tr.TrainConfig.from_dict(train_kwargs)
    if getattr(args, "variant", None) is not None:
        config.variant = _VARIANT_ALIASES.get(args.variant, args.variant)
    if getattr(args, "fractions", None) is not None:
        config.fractions = tuple(float(f) for f in args.fractions.split(","))
    return config


def write_manifest(out_dir: Path, command: str, argv, config_dict: dict, seed: int,
                   extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config_dict,
        "config_digest": tr.TrainConfig.from_dict(config_dict["train"]).digest()
        if "train" in config_dict else None,
        "seed": seed,
        "versions": {"smajudge": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
        "threads": thread_cap(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def thread_cap() -> int:
    """Parallelism cap from SMAJUDGE_THREADS; execution is single-threaded."""
    raw = os.environ.get("SMAJUDGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def prepare_pipeline(corpus_path, config: RunConfig):
    docs = cp.read_corpus(corpus_path)
    kept, spaces = cp.filter_labels(docs, config.min_label_count)
    splits = cp.split_corpus(kept, config.split_ratios, config.split_seed)
    vocab = cp.build_vocabulary(splits.train, config.min_token_count)
    return splits, vocab, spaces


def cmd_gen(args, argv) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = cp.SyntheticSpec.from_dict(json.load(fh))
    if args.seed is not None:
        spec = cp.SyntheticSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    docs = cp.generate_synthetic_corpus(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cp.write_corpus(docs, out)
    write_manifest(out.parent, "gen", argv, {"synthetic_spec": spec.to_dict(),
                                             "train": tr.TrainConfig().to_dict()},
                   spec.seed, None)
    print(f"wrote {len(docs)} documents to {out}")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    config = load_run_config(args)
    splits, vocab, spaces = prepare_pipeline(args.corpus, config)
    variant = ev.AblationVariant(config.variant)
    model, history = ev.train_variant(splits, vocab, spaces, config.train, variant,
                                      graph=config.task_graph)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if variant is ev.AblationVariant.SEPARATE_COMPONENTS:
        raise cp.DataError("the similarity baseline has no checkpoint format; "
                           "use `ablate` to score it")
    tr.save_checkpoint(model, out / "model.ckpt")
    (out / "history.json").write_text(json.dumps(history.to_dict(), indent=2),
                                      encoding="utf-8")
    write_manifest(out, "train", argv, config.to_dict(), config.train.seed)
    print(f"checkpoint written to {out / 'model.ckpt'}")
    if history.joint_losses:
        print(f"final mean joint loss: {history.joint_losses[-1]:.4f}")
    return EXIT_OK


def _load_ckpt(path) -> tr.Checkpoint:
    path = Path(path)
    if path.is_dir():
        path = path / "model.ckpt"
    return tr.load_checkpoint(path)


def cmd_eval(args, argv) -> int:
    config = load_run_config(args)
    ckpt = _load_ckpt(args.ckpt)
    splits, _, _ = prepare_pipeline(args.corpus, config)
    part = getattr(splits, args.split)
    if not part:
        raise cp.DataError(f"split {args.split!r} is empty")
    docs = tr.encode_split(part, ckpt.vocabulary, ckpt.label_spaces,
                           ckpt.config.max_seq_len)
    reports = ev.evaluate_split(ckpt.params, docs)
    payload = {task: rep.to_dict() for task, rep in reports.items()}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"metrics_{args.split}.json").write_text(text, encoding="utf-8")
        write_manifest(out, "eval", argv, config.to_dict(), ckpt.seed)
        print(f"metrics written to {out / f'metrics_{args.split}.json'}")
    else:
        print(text)
    return EXIT_OK


def cmd_predict(args, argv) -> int:
    ckpt = _load_ckpt(args.ckpt)
    with open(args.doc, "r", encoding="utf-8") as fh:
        doc = cp.parse_document(fh.read())
    prediction = tr.predict_appeal(ckpt, doc)
    payload = {
        "case_id": doc.case_id,
        "ruling_probability": prediction.ruling_probability,
        "ruling_class": prediction.ruling_class,
        "ruling": "affirmed" if prediction.ruling_class == 0 else "not affirmed",
        "appeal_law_article": ckpt.label_spaces.appeal_articles[prediction.article_index],
        "article_distribution": prediction.article_distribution.tolist(),
        "fine_tuned": prediction.fine_tuned,
        "warnings": prediction.warnings,
    }
    print(json.dumps(payload, indent=2))
    if args.explain:
        out = Path(args.explain)
        html_path, txt_path = ev.export_attention(prediction, doc, out)
        write_manifest(out, "predict", argv,
                       {"train": ckpt.config.to_dict()}, ckpt.seed)
        print(f"heatmap written to {html_path} and {txt_path}", file=sys.stderr)
    return EXIT_OK


def cmd_ablate(args, argv) -> int:
    config = load_run_config(args)
    splits, vocab, spaces = prepare_pipeline(args.corpus, config)
    seeds = [int(s) for s in args.seeds.split(",")]
    report = ev.run_ablation(splits, vocab, spaces, config.train, seeds)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(text, encoding="utf-8")
        write_manifest(out, "ablate", argv, config.to_dict(), config.train.seed,
                       {"seeds": seeds})
        print(f"ablation table written to {out / 'ablation.json'}")
    else:
        print(text)
    return EXIT_OK


def cmd_sensitivity(args, argv) -> int:
    config = load_run_config(args)
    splits, vocab, spaces = prepare_pipeline(args.corpus, config)
    report = ev.run_sensitivity(splits, vocab, spaces, list(config.fractions),
                                config.train)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sensitivity.json").write_text(report.to_json(), encoding="utf-8")
        report.write_csv(out / "sensitivity.csv")
        write_manifest(out, "sensitivity", argv, config.to_dict(), config.train.seed)
        print(f"sensitivity report written to {out / 'sensitivity.json'}")
    else:
        print(report.to_json())
    return EXIT_OK


def cmd_explain(args, argv) -> int:
    if not args.doc and not args.corpus:
        raise UsageError("explain requires --doc or --corpus")
    config = load_run_config(args)
    ckpt = _load_ckpt(args.ckpt)
    out = Path(args.out)
    if args.doc:
        with open(args.doc, "r", encoding="utf-8") as fh:
            docs = [cp.parse_document(fh.read())]
    else:
        if not args.corpus:
            raise UsageError("explain requires --doc or --corpus")
        splits, _, _ = prepare_pipeline(args.corpus, config)
        docs = list(getattr(splits, args.split))[:args.limit]
    written: list[Path] = []
    for doc in docs:
        prediction = tr.predict_appeal(ckpt, doc)
        written.append(ev.export_attention(prediction, doc, out)[0])
    write_manifest(out, "explain", argv, config.to_dict(), ckpt.seed)
    print(f"wrote {len(written)} heatmap(s) to {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="smajudge",
                     description="appeal judgment prediction pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="synthetic-spec JSON file")
    p.add_argument("--out", required=True, help="output corpus path (JSON Lines)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    def common(p, ckpt=False):
        p.add_argument("--config", help="run-config JSON file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--epochs", type=int, help="override training epochs")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint file or directory")

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=sorted(_VARIANT_ALIASES))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p, ckpt=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict one case")
    common(p, ckpt=True)
    p.add_argument("--doc", required=True, help="single-case JSON file")
    p.add_argument("--explain", help="directory for the attention heatmap")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="run the ablation table")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sensitivity", help="training-size sensitivity runs")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--fractions", help="comma-separated fractions, e.g. 1.0,0.8")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("explain", help="export attention heatmaps")
    common(p, ckpt=True)
    p.add_argument("--corpus")
    p.add_argument("--doc")
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)
    return parser


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (tr.DivergenceError, NonFiniteError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (cp.DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
