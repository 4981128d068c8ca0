"""Speaker-verification scoring: length norm, cosine trials, equal error rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, DegenerateInputError, MissingIdError

NORM_EPS = 1e-12


@dataclass(frozen=True)
class TrialPair:
    target: bool
    enroll_id: str
    test_id: str

    def __post_init__(self):
        if not self.enroll_id or not self.test_id:
            raise DataError("trial ids must be non-empty")


@dataclass(frozen=True)
class ScoredTrial:
    trial: TrialPair
    score: float


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float


@dataclass
class EvalResult:
    eer: float
    threshold: float
    scores: list


def length_normalize(v):
    v = np.asarray(v)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise DegenerateInputError("cannot length-normalize a non-finite vector")
    if np.any(norm <= NORM_EPS):
        raise DegenerateInputError("cannot length-normalize a (near) zero vector")
    return v / norm


def cosine_score(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if not (np.isfinite(na) and np.isfinite(nb)):
        raise DegenerateInputError("cosine score of a non-finite vector")
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateInputError("cosine score of a zero vector")
    # product of norms is symmetric, so score(a, b) == score(b, a) bit for bit
    return float(np.dot(a, b) / (na * nb))


def compute_eer(target_scores, nontarget_scores) -> EerResult:
    """EER by threshold sweep over all distinct scores.

    At threshold t, FRR = P(target < t) and FAR = P(nontarget >= t). The EER
    is read off where FAR - FRR changes sign, linearly interpolating between
    the two bracketing (FAR, FRR) points.
    """
    tar = np.sort(np.asarray(target_scores, dtype=np.float64))
    non = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    if tar.size == 0 or non.size == 0:
        raise DataError("EER needs at least one target and one nontarget score")
    thresholds = np.unique(np.concatenate([tar, non]))
    thresholds = np.append(thresholds, np.inf)
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    diff = far - frr
    k = int(np.argmax(diff <= 0))  # diff[-1] == -1, so a crossing always exists
    if diff[k] == 0 or k == 0:
        return EerResult(float(frr[k]), float(thresholds[k]))
    alpha = diff[k - 1] / (diff[k - 1] - diff[k])
    eer = frr[k - 1] + alpha * (frr[k] - frr[k - 1])
    t_hi = thresholds[k] if np.isfinite(thresholds[k]) else thresholds[k - 1]
    return EerResult(float(eer), float(thresholds[k - 1] + alpha * (t_hi - thresholds[k - 1])))


def eer_of_trials(scored: Sequence[ScoredTrial]) -> EerResult:
    tar = [s.score for s in scored if s.trial.target]
    non = [s.score for s in scored if not s.trial.target]
    return compute_eer(tar, non)


def read_trials(path) -> list[TrialPair]:
    """Trial list lines: ``<0|1> <enroll-id> <test-id>`` (1 = target)."""
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: expected '<0|1> <enroll-id> <test-id>'")
            trials.append(TrialPair(parts[0] == "1", parts[1], parts[2]))
    return trials


def write_trials(trials: Sequence[TrialPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{int(t.target)} {t.enroll_id} {t.test_id}\n")


def format_scores(scored: Sequence[ScoredTrial]) -> str:
    return "".join(
        f"{s.trial.enroll_id} {s.trial.test_id} {s.score:.9f} {'target' if s.trial.target else 'nontarget'}\n"
        for s in scored
    )


def write_scores(scored: Sequence[ScoredTrial], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_scores(scored))


def score_trials(embeddings: Mapping[str, np.ndarray], trials: Sequence[TrialPair]):
    missing = sorted({i for t in trials for i in (t.enroll_id, t.test_id)} - set(embeddings))
    if missing:
        raise MissingIdError(missing)
    return [ScoredTrial(t, cosine_score(embeddings[t.enroll_id], embeddings[t.test_id])) for t in trials]


def extract_embeddings(net, features: Mapping[str, np.ndarray], ids=None) -> dict[str, np.ndarray]:
    """Length-normalized full-utterance embeddings, one forward pass per id."""
    ids = list(features) if ids is None else ids
    return {u: length_normalize(net.embed(features[u]).astype(np.float64)) for u in ids}


def run_trials(net, features: Mapping[str, np.ndarray], trials: Sequence[TrialPair]) -> EvalResult:
    ids = list(dict.fromkeys(i for t in trials for i in (t.enroll_id, t.test_id)))
    missing = [u for u in ids if u not in features]
    if missing:
        raise MissingIdError(missing)
    scored = score_trials(extract_embeddings(net, features, ids), trials)
    res = eer_of_trials(scored)
    return EvalResult(res.eer, res.threshold, scored)
