"""Synthetic two-rate labeled clips with planted alignment and salient segments.

Background frames are i.i.d. Gaussian noise. Inside the salient interval
``[s, e]`` visual frame ``t`` carries its class's visual direction and audio
frame ``truth_align[t]`` carries an audio direction; outside ``[s, e]`` (and
its audio span) there is no class signal at all.

``truth_align`` is the coarse centre ``round(t * T_a / T)`` shifted by a
constant ``lag`` plus a smooth sinusoidal wobble of amplitude
``jitter - |lag|``, clipped and made monotone, so it never strays more than
``jitter`` frames from the centre.

With ``sync > 0`` (the default) the audio code is signed. Each aligned audio
frame gets a random sign, and the visual frame aligned to it carries that
sign times ``sync`` along one shared marker direction. Classes are paired
(1 with 2, 3 with 4, ...) and the two members of a pair use opposite audio
directions, so audio read on its own, without knowing the signs, separates
only the pairs. Telling the members of a pair apart from audio needs the
sign read off the matching visual frame, which rewards attention that lands
on the truly aligned audio frame. With ``sync = 0`` every class has its own
audio direction and the sign is always positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .align import coarse_centers
from .errors import ConfigError
from .rng import make_rng

SPLITS = ("train", "val", "test")


@dataclass
class ClipSample:
    clip_id: str
    audio: np.ndarray  # (T_a, D_a)
    visual: np.ndarray  # (T, D_v)
    label: int  # 1..N
    truth_align: np.ndarray | None = None  # (T,) 1-based audio frame per visual step
    truth_salient: tuple[int, int] | None = None  # 1-based inclusive [s, e]

    @property
    def T(self) -> int:
        return self.visual.shape[0]

    @property
    def T_a(self) -> int:
        return self.audio.shape[0]


@dataclass(frozen=True)
class CorpusSpec:
    n_classes: int = 4
    n_train: int = 600
    n_val: int = 200
    n_test: int = 200
    t_min: int = 20
    t_max: int = 40
    rate: float = 2.5
    audio_dim: int = 12
    visual_dim: int = 10
    salient_min: int = 4
    salient_max: int = 8
    noise: float = 1.0
    signal: float = 2.5
    audio_share: float = 0.7  # fraction of class-signal energy carried by audio
    jitter: int = 4  # bound on |truth_align - coarse centre|
    lag: int = 3  # constant audio delay, |lag| <= jitter
    sync: float = 2.0  # visual sign-marker amplitude; 0 disables signed audio coding
    seed: int = 0

    def validate(self) -> "CorpusSpec":
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ConfigError("split sizes must be >= 0")
        if not 1 <= self.t_min <= self.t_max:
            raise ConfigError("need 1 <= t_min <= t_max")
        if self.rate <= 0:
            raise ConfigError("rate must be positive")
        if self.noise < 0 or self.signal < 0 or not 0.0 <= self.audio_share <= 1.0:
            raise ConfigError("noise, signal must be >= 0 and audio_share in [0, 1]")
        if not 1 <= self.salient_min <= self.salient_max:
            raise ConfigError("need 1 <= salient_min <= salient_max")
        if self.salient_min > self.t_min:
            raise ConfigError(f"salient length {self.salient_min} exceeds the shortest clip ({self.t_min})")
        if self.sync < 0:
            raise ConfigError("sync must be >= 0")
        if self.jitter < 0 or self.audio_dim < 1 or self.visual_dim < 1:
            raise ConfigError("jitter >= 0 and feature widths >= 1 required")
        if abs(self.lag) > self.jitter:
            raise ConfigError(f"|lag| = {abs(self.lag)} exceeds the jitter bound {self.jitter}")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown corpus spec keys: {sorted(unknown)}")
        return cls(**d).validate()

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]


@dataclass
class Corpus:
    spec: CorpusSpec | None
    splits: dict[str, list[ClipSample]] = field(default_factory=dict)

    @property
    def train(self):
        return self.splits.get("train", [])

    @property
    def val(self):
        return self.splits.get("val", [])

    @property
    def test(self):
        return self.splits.get("test", [])


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


@dataclass
class ClassPatterns:
    visual: np.ndarray  # (N, D_v) unit rows
    audio: np.ndarray  # (N, D_a) unit rows
    marker: np.ndarray  # (D_v,) unit sign-marker direction


def class_patterns(spec: CorpusSpec) -> ClassPatterns:
    rng = make_rng(spec.seed, "patterns")
    visual = _unit_rows(rng, spec.n_classes, spec.visual_dim)
    if spec.sync > 0:
        base = _unit_rows(rng, (spec.n_classes + 1) // 2, spec.audio_dim)
        audio = np.stack([base[n // 2] * (1.0 if n % 2 == 0 else -1.0) for n in range(spec.n_classes)])
    else:
        audio = _unit_rows(rng, spec.n_classes, spec.audio_dim)
    marker = _unit_rows(rng, 1, spec.visual_dim)[0]
    return ClassPatterns(visual, audio, marker)


def audio_length(T: int, rate: float) -> int:
    return max(1, int(np.floor(rate * T + 0.5)))


def planted_alignment(T: int, T_a: int, jitter: int, rng: np.random.Generator, lag: int = 0) -> np.ndarray:
    """Monotone audio index per visual step, within ``jitter`` of the coarse centre."""
    base = coarse_centers(T, T_a)
    t = np.arange(1, T + 1)
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wobble = jitter - abs(lag)
    offset = lag + np.rint(wobble * np.sin(2.0 * np.pi * freq * t / T + phase)).astype(np.int64)
    align = np.clip(base + offset, 1, T_a)
    return np.maximum.accumulate(align)


def generate_clip(spec: CorpusSpec, split: str, i: int, patterns: ClassPatterns | None = None) -> ClipSample:
    pat = patterns if patterns is not None else class_patterns(spec)
    rng = make_rng(spec.seed, "clip", split, i)
    label = int(rng.integers(1, spec.n_classes + 1))
    T = int(rng.integers(spec.t_min, spec.t_max + 1))
    T_a = audio_length(T, spec.rate)
    L = int(rng.integers(spec.salient_min, min(spec.salient_max, T) + 1))
    s = int(rng.integers(1, T - L + 2))
    e = s + L - 1
    align = planted_alignment(T, T_a, spec.jitter, rng, spec.lag)
    visual = spec.noise * rng.standard_normal((T, spec.visual_dim))
    audio = spec.noise * rng.standard_normal((T_a, spec.audio_dim))
    amp_v = spec.signal * np.sqrt(1.0 - spec.audio_share)
    amp_a = spec.signal * np.sqrt(spec.audio_share)
    visual[s - 1 : e] += amp_v * pat.visual[label - 1]
    # several visual steps may share one audio frame; each frame is marked once
    hits, owner = np.unique(align[s - 1 : e], return_inverse=True)
    signs = rng.choice([-1.0, 1.0], size=len(hits)) if spec.sync > 0 else np.ones(len(hits))
    audio[hits - 1] += amp_a * signs[:, None] * pat.audio[label - 1]
    if spec.sync > 0:
        visual[s - 1 : e] += spec.sync * signs[owner][:, None] * pat.marker
    return ClipSample(f"{split}-{i:05d}", audio, visual, label, align, (s, e))


def generate_corpus(spec: CorpusSpec) -> Corpus:
    spec.validate()
    patterns = class_patterns(spec)
    splits = {
        split: [generate_clip(spec, split, i, patterns) for i in range(spec.split_size(split))]
        for split in SPLITS
    }
    return Corpus(spec, splits)


def erase_salient(clip: ClipSample, spec: CorpusSpec, rng: np.random.Generator) -> ClipSample:
    """Replace the salient frames (and their aligned audio frames) with fresh noise."""
    s, e = clip.truth_salient
    visual = clip.visual.copy()
    audio = clip.audio.copy()
    visual[s - 1 : e] = spec.noise * rng.standard_normal((e - s + 1, visual.shape[1]))
    hits = np.unique(clip.truth_align[s - 1 : e]) - 1
    idx = np.arange(hits[0], hits[-1] + 1)
    audio[idx] = spec.noise * rng.standard_normal((len(idx), audio.shape[1]))
    return ClipSample(clip.clip_id, audio, visual, clip.label, clip.truth_align, clip.truth_salient)
