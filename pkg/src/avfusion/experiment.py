"""Head-comparison experiment: train each head kind under several seeds on one corpus.

Config file: flat ``key = value`` lines, ``#`` comments. Recognized keys::

    seed = 20160101               master seed (the CLI --seed overrides it)
    seeds = 5                     number of runs per head; 0 gives an empty report
    heads = last, average, perception
    data = DIR                    load a corpus from disk instead of generating
    corpus.<field> = ...          CorpusSpec fields (corpus.seed defaults to the master seed)
    model.<field> = ...           ModelConfig fields except feature widths and head
    train.<field> = ...           TrainConfig fields except seed
    whiten.k_audio = 0            PCA-whitening dims fitted on train (0 = off)
    whiten.k_visual = 0

Run ``i`` (1-based) of every head uses the same derived seed, so heads are
compared on identical initial streams. Output directory::

    report.txt  report.json  models/<head>-run<i>.avfm
    confusion/<head>-run<i>.csv  history/<head>-run<i>.csv
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .archive import save_model
from .dataio import load_corpus, whiten_corpus
from .diagnostics import alignment_recovery, salience_localization, traces
from .errors import ConfigError
from .model import HEADS, Model, ModelConfig
from .rng import DEFAULT_SEED, derive_seed
from .synth import CorpusSpec, generate_corpus
from .training import TrainConfig, accuracy, evaluate, train

log = logging.getLogger(__name__)

_RESERVED_MODEL = {"shape_dim", "audio_dim", "appearance_dim", "n_classes", "head"}


def _coerce(text: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(like).__name__}") from None
    return text


def _defaults(cls) -> dict:
    probe = {"shape_dim": 1, "audio_dim": 1} if cls is ModelConfig else {}
    inst = cls(**probe)
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


@dataclass
class ExperimentConfig:
    seed: int = DEFAULT_SEED
    seeds: int = 5
    heads: tuple = HEADS
    data: str | None = None
    corpus: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    k_audio: int = 0
    k_visual: int = 0

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec.from_dict({"seed": self.seed, **self.corpus})

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": seed})

    def model_config(self, head: str, audio_dim: int, shape_dim: int, n_classes: int) -> ModelConfig:
        return ModelConfig.from_dict(
            {**self.model, "head": head, "audio_dim": audio_dim, "shape_dim": shape_dim, "n_classes": n_classes}
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "seeds": self.seeds,
            "heads": list(self.heads),
            "data": self.data,
            "corpus": dict(sorted(self.corpus.items())),
            "model": dict(sorted(self.model.items())),
            "train": dict(sorted(self.train.items())),
            "whiten": {"k_audio": self.k_audio, "k_visual": self.k_visual},
        }


def parse_config(text: str, seed: int | None = None) -> ExperimentConfig:
    """Parse the flat config; ``seed`` (if given) overrides the file's master seed."""
    cfg = ExperimentConfig()
    sections = {
        "corpus": (cfg.corpus, _defaults(CorpusSpec), set()),
        "model": (cfg.model, _defaults(ModelConfig), _RESERVED_MODEL),
        "train": (cfg.train, _defaults(TrainConfig), {"seed"}),
    }
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if name and section in sections:
            target, defaults, reserved = sections[section]
            if name not in defaults or name in reserved:
                raise ConfigError(f"line {lineno}: unknown or reserved key {key!r}")
            target[name] = _coerce(value, defaults[name], key)
        elif key in ("whiten.k_audio", "whiten.k_visual"):
            setattr(cfg, name, _coerce(value, 0, key))
        elif key in ("seed", "seeds"):
            setattr(cfg, key, _coerce(value, 0, key))
        elif key == "heads":
            heads = tuple(h.strip() for h in value.split(",") if h.strip())
            bad = [h for h in heads if h not in HEADS]
            if bad:
                raise ConfigError(f"line {lineno}: unknown head kind(s) {bad}; expected any of {HEADS}")
            cfg.heads = heads
        elif key == "data":
            cfg.data = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if seed is not None:
        cfg.seed = seed
    if cfg.seeds < 0:
        raise ConfigError("seeds must be >= 0")
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), seed)


@dataclass
class RunResult:
    head: str
    run: int
    seed: int
    train_accuracy: float
    val_accuracy: float
    test_accuracy: float
    best_epoch: int
    alignment_recovery: float | None = None
    salience_localization: float | None = None
    model: Model | None = field(default=None, repr=False, compare=False)


@dataclass
class ExperimentReport:
    config: dict
    runs: list[RunResult]

    def summary(self) -> dict:
        """head -> split -> (mean, sample std) accuracy, in head order of the config."""
        out = {}
        for head in self.config["heads"]:
            rs = [r for r in self.runs if r.head == head]
            if not rs:
                continue
            out[head] = {}
            for split in ("train", "val", "test"):
                acc = np.array([getattr(r, f"{split}_accuracy") for r in rs])
                out[head][split] = (float(acc.mean()), float(acc.std(ddof=1)) if len(acc) > 1 else 0.0)
        return out

    def best(self, head: str, metric: str = "test_accuracy") -> RunResult | None:
        rs = [r for r in self.runs if r.head == head and getattr(r, metric) is not None]
        return max(rs, key=lambda r: (getattr(r, metric), -r.run)) if rs else None

    def render(self) -> str:
        lines = ["Accuracy (%) over runs: mean ± std", ""]
        lines.append(f"{'Model':<12}{'Train':>16}{'Val':>16}{'Test':>16}")
        for head, cols in self.summary().items():
            cells = "".join(f"{100 * m:>9.2f} ± {100 * s:<4.2f}" for m, s in (cols[k] for k in ("train", "val", "test")))
            lines.append(f"{head:<12}{cells}")
        if self.runs:
            lines += ["", f"{'head':<12}{'run':>4}{'seed':>22}{'train':>8}{'val':>8}{'test':>8}{'best':>6}{'align':>8}{'salience':>10}"]
            fmt = lambda x: "-" if x is None else f"{x:.4f}"
            for r in self.runs:
                lines.append(
                    f"{r.head:<12}{r.run:>4}{r.seed:>22}{r.train_accuracy:>8.4f}{r.val_accuracy:>8.4f}"
                    f"{r.test_accuracy:>8.4f}{r.best_epoch:>6}{fmt(r.alignment_recovery):>8}{fmt(r.salience_localization):>10}"
                )
        else:
            lines += ["", "(no runs requested)"]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        runs = [{k: v for k, v in r.__dict__.items() if k != "model"} for r in self.runs]
        summary = {h: {s: list(v) for s, v in cols.items()} for h, cols in self.summary().items()}
        return json.dumps({"config": self.config, "summary": summary, "runs": runs}, indent=2, sort_keys=True) + "\n"


def prepare_corpus(cfg: ExperimentConfig):
    corpus = load_corpus(cfg.data) if cfg.data else generate_corpus(cfg.corpus_spec())
    transforms = {}
    if cfg.k_audio or cfg.k_visual:
        corpus, transforms = whiten_corpus(corpus, cfg.k_audio, cfg.k_visual)
    return corpus, transforms


def run_experiment(cfg: ExperimentConfig, out_dir=None, keep_models: bool = False) -> ExperimentReport:
    """Train every (head, run) pair; write artifacts under ``out_dir`` if given."""
    report = ExperimentReport(cfg.to_dict(), [])
    out = Path(out_dir) if out_dir is not None else None
    if cfg.seeds == 0 or not cfg.heads:
        if out is not None:
            _write_report(report, out)
        return report
    corpus, transforms = prepare_corpus(cfg)
    train_clips, val_clips, test_clips = corpus.train, corpus.val, corpus.test
    probe = train_clips[0]
    n_classes = corpus.spec.n_classes if corpus.spec else max(c.label for s in corpus.splits.values() for c in s)
    has_truth = all(c.truth_align is not None and c.truth_salient is not None for c in test_clips)
    for head in cfg.heads:
        mcfg = cfg.model_config(head, probe.audio.shape[1], probe.visual.shape[1], n_classes)
        for run in range(1, cfg.seeds + 1):
            seed = derive_seed(cfg.seed, "run", run)
            model = Model.create(mcfg, seed)
            model.whiten = dict(transforms)
            trained, history = train(model, train_clips, val_clips, cfg.train_config(seed))
            test_report = evaluate(trained, test_clips)
            result = RunResult(
                head,
                run,
                seed,
                accuracy(trained, train_clips),
                accuracy(trained, val_clips),
                test_report.accuracy,
                history.best_epoch,
            )
            if has_truth:
                trs = traces(trained, test_clips)
                result.alignment_recovery = alignment_recovery(trained, test_clips, trs=trs).fraction
                if head == "perception":
                    result.salience_localization = salience_localization(trained, test_clips, trs=trs).fraction
            if keep_models:
                result.model = trained
            report.runs.append(result)
            log.info("%s run %d: test %.4f (best epoch %d)", head, run, result.test_accuracy, history.best_epoch)
            if out is not None:
                tag = f"{head}-run{run}"
                (out / "models").mkdir(parents=True, exist_ok=True)
                (out / "confusion").mkdir(parents=True, exist_ok=True)
                (out / "history").mkdir(parents=True, exist_ok=True)
                save_model(trained, out / "models" / f"{tag}.avfm", {"head": head, "run": run})
                (out / "confusion" / f"{tag}.csv").write_text(test_report.confusion_csv())
                (out / "history" / f"{tag}.csv").write_text(history.to_csv())
    if out is not None:
        _write_report(report, out)
    return report


def _write_report(report: ExperimentReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.render())
    (out / "report.json").write_text(report.to_json())
