"""``avfusion`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 archive format
error, 5 archive corruption, 6 internal invariant violation, 1 other failures.
Every command accepts ``--seed``. When it is omitted the seed comes from the
config or spec file, and failing that from ``avfusion.rng.DEFAULT_SEED``; the
evaluation and export commands are deterministic and ignore it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .archive import load_model, load_model_with_metadata, save_model
from .dataio import apply_whitening, load_corpus, load_feature_csv, whiten_corpus, write_corpus
from .errors import AVFusionError, ConfigError, ValidationError
from .experiment import load_config, parse_config, run_experiment
from .export import alignment_heatmap, perception_heatmap, project_embeddings, write_heatmap, write_projection
from .model import Model
from .rng import DEFAULT_SEED
from .synth import CorpusSpec, generate_corpus
from .training import evaluate, train

log = logging.getLogger("avfusion")


def _read_spec(path) -> CorpusSpec:
    """Corpus spec from JSON or from flat ``key = value`` lines (``corpus.`` prefix optional)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            return CorpusSpec.from_dict({"seed": DEFAULT_SEED, **json.loads(text)})
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line and not line.startswith("corpus."):
            line = "corpus." + line
        lines.append(line)
    return parse_config("\n".join(lines)).corpus_spec()


def cmd_generate(args) -> int:
    spec = _read_spec(args.spec) if args.spec else CorpusSpec(seed=DEFAULT_SEED)
    if args.seed is not None:
        spec = CorpusSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    write_corpus(generate_corpus(spec), args.out)
    print(f"wrote corpus to {args.out} ({spec.n_train}/{spec.n_val}/{spec.n_test} clips)")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed) if args.config else parse_config("", args.seed)
    corpus = load_corpus(args.data)
    transforms = {}
    if cfg.k_audio or cfg.k_visual:
        corpus, transforms = whiten_corpus(corpus, cfg.k_audio, cfg.k_visual)
    if not corpus.splits.get("train") or not corpus.splits.get("val"):
        raise ValidationError(f"{args.data} needs train and val splits")
    probe = corpus.train[0]
    n_classes = corpus.spec.n_classes if corpus.spec else max(c.label for s in corpus.splits.values() for c in s)
    mcfg = cfg.model_config(args.head, probe.audio.shape[1], probe.visual.shape[1], n_classes)
    model = Model.create(mcfg, cfg.seed)
    model.whiten = transforms
    trained, history = train(model, corpus.train, corpus.val, cfg.train_config(cfg.seed), log_every=1)
    meta = {"head": args.head, "data": str(Path(args.data).resolve()), "best_epoch": history.best_epoch}
    save_model(trained, args.out, meta)
    if args.history:
        Path(args.history).write_text(history.to_csv())
    best = max((r.val_accuracy for r in history.epochs), default=float("nan"))
    print(f"saved {args.out}; best validation accuracy {best:.4f} at epoch {history.best_epoch}")
    return 0


def _split_clips(model: Model, data, split: str):
    clips = load_feature_csv(Path(data) / split, n_classes=model.config.n_classes)
    return apply_whitening(clips, model.whiten)


def cmd_eval(args) -> int:
    model = load_model(args.model)
    report = evaluate(model, _split_clips(model, args.data, args.split))
    print(report.render())
    if args.confusion:
        Path(args.confusion).write_text(report.confusion_csv())
    return 0


def cmd_inspect(args) -> int:
    model, meta = load_model_with_metadata(args.model)
    data = args.data or meta.get("data")
    if not data:
        raise ConfigError("no --data given and the archive records no data directory")
    clip = None
    for split in ([args.split] if args.split else ["test", "val", "train"]):
        if (Path(data) / split / "manifest.csv").exists():
            clip = next((c for c in _split_clips(model, data, split) if c.clip_id == args.clip), None)
            if clip is not None:
                break
    if clip is None:
        raise ValidationError(f"clip {args.clip!r} not found under {data}")
    if not (args.align or args.percep):
        raise ConfigError("nothing to do: give --align and/or --percep")
    if args.align:
        write_heatmap(alignment_heatmap(model, clip, stack=args.stack), args.align)
        print(f"wrote alignment heatmap to {args.align}")
    if args.percep:
        write_heatmap(perception_heatmap(model, clip), args.percep)
        print(f"wrote perception heatmap to {args.percep}")
    return 0


def cmd_embed_proj(args) -> int:
    model = load_model(args.model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        proj = project_embeddings(model)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    write_projection(proj, args.out)
    print(f"wrote {len(proj.points)} projected embeddings to {args.out}")
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config, args.seed)
    report = run_experiment(cfg, args.out)
    print(report.render(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avfusion", description="Audio-visual attention fusion toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument(
            "--seed", type=int, default=None, help=f"master seed (default: the config file's, else {DEFAULT_SEED})"
        )
        sp.set_defaults(func=fn)
        return sp

    sp = add("generate", cmd_generate, "write a synthetic corpus with planted ground truth")
    sp.add_argument("--spec", help="corpus spec (JSON or key = value lines); defaults if omitted")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train one head on a corpus directory")
    sp.add_argument("--config", help="key = value file with model.*, train.* and whiten.* keys")
    sp.add_argument("--data", required=True)
    sp.add_argument("--head", choices=["last", "average", "perception"], default="perception")
    sp.add_argument("--out", required=True, help="model archive path")
    sp.add_argument("--history", help="optional per-epoch CSV")

    sp = add("eval", cmd_eval, "accuracy and confusion matrix on one split")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--confusion", help="optional confusion-count CSV")

    sp = add("inspect", cmd_inspect, "export attention heatmaps for one clip")
    sp.add_argument("--model", required=True)
    sp.add_argument("--clip", required=True)
    sp.add_argument("--align")
    sp.add_argument("--percep")
    sp.add_argument("--data", help="corpus directory (default: the one recorded at training time)")
    sp.add_argument("--split", help="search only this split")
    sp.add_argument("--stack", default="main", choices=["main", "sel"])

    sp = add("embed-proj", cmd_embed_proj, "project class embeddings to 2-D")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)

    sp = add("experiment", cmd_experiment, "compare heads over several seeds")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except AVFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
