"""Synthetic corpus with known speakers, teacher embeddings and separability.

Each speaker k owns a unit teacher centroid ``c_k`` and an 80-dim spectral
template. An utterance's teacher embedding is ``normalize(c_k + sigma_t * g)``;
its features are the template under a slow per-utterance amplitude modulation,
plus a per-utterance session offset and i.i.d. frame noise. Speaker identity
is therefore recoverable from time-pooled statistics, but the session offset
keeps the task from being trivial.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .evaluate import TrialPair, write_trials
from .features import write_archive
from .teacher import TeacherStore, write_store


@dataclass(frozen=True)
class SynthSpec:
    n_speakers: int = 40
    utts_per_speaker: int = 50
    heldout_per_speaker: int | None = None  # default: a fifth, at least 2 when possible
    teacher_dim: int = 256
    teacher_noise: float = 0.05
    feat_dim: int = 80
    min_duration_s: float = 2.0
    max_duration_s: float = 4.0
    frame_shift_s: float = 0.01
    template_scale: float = 1.0
    session_noise: float = 1.0
    feature_noise: float = 1.0
    modulation_depth: float = 0.3
    seed: int = 7

    def __post_init__(self):
        if self.n_speakers < 2 or self.utts_per_speaker < 2:
            raise ConfigError("need at least 2 speakers and 2 utterances per speaker")
        if self.heldout_per_speaker is None:
            object.__setattr__(
                self, "heldout_per_speaker", min(max(2, self.utts_per_speaker // 5), self.utts_per_speaker - 1)
            )
        if not 0 <= self.heldout_per_speaker < self.utts_per_speaker:
            raise ConfigError("heldout_per_speaker must lie in [0, utts_per_speaker)")
        if min(self.teacher_noise, self.feature_noise, self.session_noise) < 0:
            raise ConfigError("noise levels must be >= 0")
        if not 0 < self.min_duration_s <= self.max_duration_s:
            raise ConfigError("need 0 < min_duration_s <= max_duration_s")


@dataclass
class SynthCorpus:
    spec: SynthSpec
    train_features: dict
    test_features: dict
    teacher: TeacherStore
    labels: dict  # utt id -> speaker id, every utterance
    trials: list

    @property
    def train_labels(self) -> dict:
        return {u: self.labels[u] for u in self.train_features}


def utt_id(speaker: int, utt: int) -> str:
    return f"spk{speaker:03d}-utt{utt:03d}"


def _speaker(spec: SynthSpec, k: int):
    rng = np.random.default_rng([spec.seed, k])
    centroid = rng.standard_normal(spec.teacher_dim)
    centroid /= np.linalg.norm(centroid)
    template = spec.template_scale * rng.standard_normal(spec.feat_dim)
    lo = int(round(spec.min_duration_s / spec.frame_shift_s))
    hi = int(round(spec.max_duration_s / spec.frame_shift_s))
    feats, embs = {}, {}
    for u in range(spec.utts_per_speaker):
        uid = utt_id(k, u)
        e = centroid + spec.teacher_noise * rng.standard_normal(spec.teacher_dim)
        embs[uid] = (e / np.linalg.norm(e)).astype(np.float32)
        T = int(rng.integers(lo, hi, endpoint=True))
        t = np.arange(T) * spec.frame_shift_s
        freq = rng.uniform(0.5, 2.0)
        amp = 1.0 + spec.modulation_depth * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        session = spec.session_noise * rng.standard_normal(spec.feat_dim)
        noise = spec.feature_noise * rng.standard_normal((T, spec.feat_dim))
        feats[uid] = (amp[:, None] * template + session + noise).astype(np.float32)
    return feats, embs


def generate_corpus(spec: SynthSpec = SynthSpec()) -> SynthCorpus:
    train, test, teacher, labels = {}, {}, {}, {}
    heldout: list[list[str]] = []
    n_train = spec.utts_per_speaker - spec.heldout_per_speaker
    for k in range(spec.n_speakers):
        feats, embs = _speaker(spec, k)
        ids = list(feats)
        for uid in ids[:n_train]:
            train[uid] = feats[uid]
        for uid in ids[n_train:]:
            test[uid] = feats[uid]
        heldout.append(ids[n_train:])
        teacher.update(embs)
        labels.update({uid: f"spk{k:03d}" for uid in ids})
    trials = balanced_trials(heldout, np.random.default_rng([spec.seed, spec.n_speakers, 1]))
    return SynthCorpus(spec, train, test, TeacherStore(spec.teacher_dim, teacher), labels, trials)


def balanced_trials(groups: list[list[str]], rng) -> list[TrialPair]:
    """All within-speaker pairs as targets plus as many random cross-speaker pairs."""
    targets = [
        TrialPair(True, a, b) for g in groups for a, b in itertools.combinations(g, 2)
    ]
    owner = [(u, i) for i, g in enumerate(groups) for u in g]
    n_total = len(owner)
    n_cross = sum(len(g) for g in groups) ** 2 - sum(len(g) ** 2 for g in groups)
    n_non = min(len(targets), n_cross // 2)
    chosen = set()
    nontargets = []
    while len(nontargets) < n_non:
        i, j = rng.integers(0, n_total, size=2)
        if owner[i][1] == owner[j][1]:
            continue
        key = (min(i, j), max(i, j))
        if key in chosen:
            continue
        chosen.add(key)
        nontargets.append(TrialPair(False, owner[key[0]][0], owner[key[1]][0]))
    trials = targets + nontargets
    return [trials[i] for i in rng.permutation(len(trials))]


def write_corpus(corpus: SynthCorpus, out_dir) -> dict[str, Path]:
    """Write train/test feature archives, teacher store, labels and trials."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_features": out / "train.ftr1",
        "test_features": out / "test.ftr1",
        "teacher": out / "teacher.emb1",
        "labels": out / "labels.tsv",
        "trials": out / "trials.txt",
    }
    write_archive(corpus.train_features, paths["train_features"])
    write_archive(corpus.test_features, paths["test_features"])
    write_store(dict(corpus.teacher.items()), corpus.teacher.dim, paths["teacher"])
    write_labels(corpus.labels, paths["labels"])
    write_trials(corpus.trials, paths["trials"])
    return paths


def write_labels(labels: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, s in labels.items():
            fh.write(f"{u}\t{s}\n")


def read_labels(path) -> dict[str, str]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(parts):
                raise DataError(f"{path}:{lineno}: expected 'utt-id<TAB>speaker-id'")
            if parts[0] in labels:
                raise DataError(f"{path}:{lineno}: duplicate utterance id {parts[0]!r}")
            labels[parts[0]] = parts[1]
    return labels
