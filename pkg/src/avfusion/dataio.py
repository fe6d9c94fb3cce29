"""Feature-CSV corpora on disk, and corpus-level whitening.

Layout of a corpus directory::

    DIR/corpus.json                 optional; generator spec (n_classes etc.)
    DIR/<split>/manifest.csv        clip_id,label,audio_path,visual_path
    DIR/<split>/audio/<id>.csv      frame,f0,f1,...  (one row per frame)
    DIR/<split>/visual/<id>.csv
    DIR/<split>/truth.csv           optional; clip_id,salient_start,salient_end,align

Paths in a manifest are relative to the manifest's directory. Floats are
written with ``repr`` so a write/read cycle is bit-exact. The ``align``
column holds space-separated 1-based audio frame numbers.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, MissingModalityError, ParseError, SchemaError, ValidationError
from .synth import SPLITS, ClipSample, Corpus, CorpusSpec
from .whiten import WhitenTransform, pca_whiten_apply, pca_whiten_fit

MANIFEST_HEADER = ["clip_id", "label", "audio_path", "visual_path"]
TRUTH_HEADER = ["clip_id", "salient_start", "salient_end", "align"]


def write_feature_csv(path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("frame," + ",".join(f"f{j}" for j in range(matrix.shape[1])) + "\n")
        for t, row in enumerate(matrix, start=1):
            fh.write(f"{t}," + ",".join(repr(float(x)) for x in row) + "\n")


def read_feature_csv(path) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "frame" or len(header) < 2:
            raise ParseError(path, 1, "header must be 'frame,f0,f1,...'")
        if header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
            raise ParseError(path, 1, "feature columns must be named f0..fK in order")
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ParseError(path, lineno, f"expected {width} fields, got {len(row)}")
            try:
                frame = int(row[0])
                values = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ParseError(path, lineno, f"non-numeric field ({exc})") from None
            if frame != len(rows) + 1:
                raise ParseError(path, lineno, f"frame index {frame}, expected {len(rows) + 1}")
            rows.append(values)
    if not rows:
        raise ParseError(path, 2, "no frames")
    return np.array(rows, dtype=np.float64)


def write_split(split_dir, clips) -> None:
    split_dir = Path(split_dir)
    split_dir.mkdir(parents=True, exist_ok=True)
    with (split_dir / "manifest.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for clip in clips:
            a, v = f"audio/{clip.clip_id}.csv", f"visual/{clip.clip_id}.csv"
            write_feature_csv(split_dir / a, clip.audio)
            write_feature_csv(split_dir / v, clip.visual)
            w.writerow([clip.clip_id, clip.label, a, v])
    truths = [c for c in clips if c.truth_align is not None and c.truth_salient is not None]
    if truths:
        with (split_dir / "truth.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRUTH_HEADER)
            for c in truths:
                w.writerow([c.clip_id, c.truth_salient[0], c.truth_salient[1], " ".join(str(int(x)) for x in c.truth_align)])


def write_corpus(corpus: Corpus, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if corpus.spec is not None:
        (out_dir / "corpus.json").write_text(json.dumps(corpus.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    for split, clips in corpus.splits.items():
        write_split(out_dir / split, clips)


def _read_truth(path: Path) -> dict:
    truth = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_HEADER:
            raise ParseError(path, 1, f"header must be {','.join(TRUTH_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(path, lineno, f"expected 4 fields, got {len(row)}")
            try:
                truth[row[0]] = ((int(row[1]), int(row[2])), np.array([int(x) for x in row[3].split()], dtype=np.int64))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return truth


def load_feature_csv(directory, manifest="manifest.csv", n_classes: int | None = None) -> list[ClipSample]:
    """Load one split listed in ``directory/manifest``."""
    directory = Path(directory)
    manifest = directory / manifest
    if not manifest.exists():
        raise MissingModalityError(f"manifest not found: {manifest}")
    truth_path = directory / "truth.csv"
    truth = _read_truth(truth_path) if truth_path.exists() else {}
    clips = []
    widths = None
    with manifest.open(newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != MANIFEST_HEADER:
            raise ParseError(manifest, 1, f"header must be {','.join(MANIFEST_HEADER)}")
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(manifest, lineno, f"expected 4 fields, got {len(row)}")
            clip_id, label_text, apath, vpath = row
            if clip_id in seen:
                raise ValidationError(f"{manifest}:{lineno}: duplicate clip id {clip_id!r}")
            seen.add(clip_id)
            try:
                label = int(label_text)
            except ValueError:
                raise ParseError(manifest, lineno, f"label {label_text!r} is not an integer") from None
            if label < 1 or (n_classes is not None and label > n_classes):
                raise ValidationError(f"{manifest}:{lineno}: label {label} outside 1..{n_classes or 'N'}")
            for kind, rel in (("audio", apath), ("visual", vpath)):
                if not rel or not (directory / rel).is_file():
                    raise MissingModalityError(f"clip {clip_id}: missing {kind} file {directory / rel}")
            audio = read_feature_csv(directory / apath)
            visual = read_feature_csv(directory / vpath)
            if widths is None:
                widths = (audio.shape[1], visual.shape[1])
            elif widths != (audio.shape[1], visual.shape[1]):
                raise SchemaError(
                    f"clip {clip_id}: widths (audio {audio.shape[1]}, visual {visual.shape[1]}) differ "
                    f"from earlier clips (audio {widths[0]}, visual {widths[1]})"
                )
            salient, align = truth.get(clip_id, (None, None))
            clips.append(ClipSample(clip_id, audio, visual, label, align, salient))
    return clips


def load_corpus(directory, splits=SPLITS, n_classes: int | None = None) -> Corpus:
    """Load every split subdirectory that exists (at least one is required)."""
    directory = Path(directory)
    spec = None
    spec_path = directory / "corpus.json"
    if spec_path.exists():
        spec = CorpusSpec.from_dict(json.loads(spec_path.read_text()))
        n_classes = n_classes or spec.n_classes
    found = {}
    for split in splits:
        if (directory / split / "manifest.csv").exists():
            found[split] = load_feature_csv(directory / split, n_classes=n_classes)
    if not found:
        raise MissingModalityError(f"no split manifests under {directory}")
    widths = {(c[0].audio.shape[1], c[0].visual.shape[1]) for c in found.values() if c}
    if len(widths) > 1:
        raise SchemaError(f"feature widths differ across splits: {sorted(widths)}")
    ids = [c.clip_id for clips in found.values() for c in clips]
    if len(ids) != len(set(ids)):
        raise ValidationError("a clip id appears in more than one split")
    return Corpus(spec, found)


def apply_whitening(clips, transforms: dict) -> list[ClipSample]:
    out = []
    for c in clips:
        audio = pca_whiten_apply(transforms["audio"], c.audio) if "audio" in transforms else c.audio
        visual = pca_whiten_apply(transforms["visual"], c.visual) if "visual" in transforms else c.visual
        out.append(ClipSample(c.clip_id, audio, visual, c.label, c.truth_align, c.truth_salient))
    return out


def whiten_corpus(corpus: Corpus, k_audio: int = 50, k_visual: int = 20):
    """Fit PCA whitening on all train-split frames per modality, apply to every split.

    ``k = 0`` leaves that modality untouched. Returns ``(corpus, transforms)``.
    """
    train = corpus.splits.get("train") or []
    if not train:
        raise InvalidInputError("whitening needs a nonempty train split")
    transforms: dict[str, WhitenTransform] = {}
    if k_audio:
        transforms["audio"] = pca_whiten_fit(np.concatenate([c.audio for c in train]), k_audio)
    if k_visual:
        transforms["visual"] = pca_whiten_fit(np.concatenate([c.visual for c in train]), k_visual)
    splits = {name: apply_whitening(clips, transforms) for name, clips in corpus.splits.items()}
    return Corpus(corpus.spec, splits), transforms
