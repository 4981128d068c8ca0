"""Scaled-down loss comparison on synthetic corpora.

For each seed a fresh synthetic corpus is generated and one student per
distillation loss is trained from the same initialization; the held-out
trials are then scored. Everything (corpus, init, batch order, augmentation)
derives from the seed, so two runs with the same arguments write identical
bytes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .evaluate import eer_of_trials, run_trials, score_trials, write_scores
from .losses import DISTILL_LOSSES
from .nnet import StudentNet, student_config
from .synth import SynthSpec, generate_corpus
from .trainer import TrainConfig, train_distill

log = logging.getLogger(__name__)


@dataclass
class OrderingResult:
    seeds: tuple
    losses: tuple
    eer: dict = field(default_factory=dict)  # (seed, loss) -> student EER
    teacher_eer: dict = field(default_factory=dict)  # seed -> teacher EER

    def median(self, loss: str) -> float:
        return float(np.median([self.eer[s, loss] for s in self.seeds]))

    def ordering_holds(self) -> bool:
        meds = [self.median(l) for l in self.losses]
        return all(a <= b for a, b in zip(meds, meds[1:]))


def teacher_eer(corpus) -> float:
    """EER of the teacher embeddings themselves on the held-out trials."""
    embs = {u: corpus.teacher[u] for u in corpus.test_features}
    return eer_of_trials(score_trials(embs, corpus.trials)).eer


def ordering_experiment(
    seeds=(0, 1, 2),
    losses=("contrastive", "cos", "mse"),
    student: str = "tdnn-tiny",
    train: TrainConfig = TrainConfig(),
    synth: SynthSpec = SynthSpec(),
    out_dir=None,
) -> OrderingResult:
    """Train one student per (seed, loss) and record held-out EERs.

    With ``out_dir`` set, each run writes ``seed<k>/<loss>/`` holding the
    checkpoints, ``report.jsonl`` and ``scores.tsv``.
    """
    res = OrderingResult(tuple(seeds), tuple(losses))
    for seed in seeds:
        corpus = generate_corpus(replace(synth, seed=seed))
        res.teacher_eer[seed] = teacher_eer(corpus)
        for loss in losses:
            if loss not in DISTILL_LOSSES:
                raise ConfigError(f"not a distillation loss: {loss!r}")
            run_dir = Path(out_dir) / f"seed{seed}" / loss if out_dir is not None else None
            net = StudentNet(student_config(student), seed=seed)
            train_distill(
                corpus.train_features, corpus.teacher, net, replace(train, loss=loss, seed=seed), run_dir
            )
            ev = run_trials(net, corpus.test_features, corpus.trials)
            if run_dir is not None:
                write_scores(ev.scores, run_dir / "scores.tsv")
            res.eer[seed, loss] = ev.eer
            log.info("seed %d %s EER %.4f", seed, loss, ev.eer)
    return res
