import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillkit.errors import DataError, DegenerateInputError, MissingIdError
from distillkit.evaluate import (
    TrialPair,
    compute_eer,
    cosine_score,
    format_scores,
    length_normalize,
    read_trials,
    run_trials,
    score_trials,
    write_trials,
)


def brute_eer(tar, non):
    """O(n^2) sweep: count errors at every candidate threshold directly."""
    cands = sorted(set(tar) | set(non)) + [np.inf]
    pts = []
    for t in cands:
        frr = sum(1 for s in tar if s < t) / len(tar)
        far = sum(1 for s in non if s >= t) / len(non)
        pts.append((far, frr))
    for k, (far, frr) in enumerate(pts):
        if far <= frr:
            if far == frr or k == 0:
                return frr
            f0, r0 = pts[k - 1]
            a = (f0 - r0) / ((f0 - r0) - (far - frr))
            return r0 + a * (frr - r0)
    raise AssertionError("unreachable: FAR reaches 0 at +inf")


def test_worked_example():
    assert compute_eer([0.9, 0.8, 0.4], [0.5, 0.2, 0.1]).eer == pytest.approx(1 / 3, abs=1e-15)


def test_perfect_separation():
    assert compute_eer([0.9, 0.8], [0.1, 0.2]).eer == 0.0


def test_all_scores_equal():
    assert compute_eer([0.5, 0.5], [0.5, 0.5]).eer == pytest.approx(0.5)


def score_sets():
    grid = st.integers(-20, 20).map(lambda v: v / 10)  # coarse values force ties
    return st.tuples(
        st.lists(grid, min_size=1, max_size=40), st.lists(grid, min_size=1, max_size=40)
    )


@settings(max_examples=200, deadline=None)
@given(score_sets())
def test_matches_brute_force_with_ties(sets):
    tar, non = sets
    assert compute_eer(tar, non).eer == pytest.approx(brute_eer(tar, non), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), nt=st.integers(1, 300), nn=st.integers(1, 300))
def test_monotone_transform_invariance(seed, nt, nn):
    rng = np.random.default_rng(seed)
    tar, non = rng.normal(1, 1, nt), rng.normal(0, 1, nn)
    ref = compute_eer(tar, non).eer
    assert compute_eer(np.exp(tar), np.exp(non)).eer == pytest.approx(ref, abs=1e-12)
    assert compute_eer(3 * tar - 7, 3 * non - 7).eer == pytest.approx(ref, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), nt=st.integers(1, 200), nn=st.integers(1, 200))
def test_bounded(seed, nt, nn):
    rng = np.random.default_rng(seed)
    r = compute_eer(rng.normal(0.5, 1, nt), rng.normal(0, 1, nn))
    assert 0.0 <= r.eer <= 1.0 and np.isfinite(r.threshold)


def test_empty_sides():
    with pytest.raises(DataError):
        compute_eer([], [0.1])
    with pytest.raises(DataError):
        compute_eer([0.1], [])


def test_length_normalize():
    v = np.random.default_rng(0).standard_normal(256)
    np.testing.assert_allclose(np.linalg.norm(length_normalize(v)), 1.0, atol=1e-6)
    u = length_normalize(v)
    np.testing.assert_allclose(length_normalize(u), u, atol=1e-15)
    with pytest.raises(DegenerateInputError):
        length_normalize(np.zeros(3))
    with pytest.raises(DegenerateInputError):
        length_normalize([np.nan, 1.0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_cosine_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(16), rng.standard_normal(16)
    assert cosine_score(a, b) == cosine_score(b, a)
    assert -1 - 1e-12 <= cosine_score(a, b) <= 1 + 1e-12
    assert cosine_score(a, 2.5 * b) == pytest.approx(cosine_score(a, b), abs=1e-14)


def test_cosine_zero_vector():
    with pytest.raises(DegenerateInputError):
        cosine_score([0.0, 0.0], [1.0, 0.0])


def test_trials_io_and_scores(tmp_path):
    trials = [TrialPair(True, "a", "b"), TrialPair(False, "a", "c")]
    write_trials(trials, tmp_path / "t.txt")
    assert read_trials(tmp_path / "t.txt") == trials
    embs = {"a": np.array([1.0, 0.0]), "b": np.array([1.0, 1.0]), "c": np.array([0.0, 1.0])}
    scored = score_trials(embs, trials)
    assert format_scores(scored) == "a b 0.707106781 target\na c 0.000000000 nontarget\n"
    (tmp_path / "bad.txt").write_text("2 a b\n")
    with pytest.raises(DataError):
        read_trials(tmp_path / "bad.txt")


class _Identity:
    def embed(self, x):
        return np.asarray(x).mean(axis=0)


def test_run_trials_and_missing_ids():
    feats = {u: np.full((3, 2), v) for u, v in [("a", (1.0, 0.1)), ("b", (1.0, 0.2)), ("c", (0.1, 1.0))]}
    trials = [TrialPair(True, "a", "b"), TrialPair(False, "a", "c")]
    res = run_trials(_Identity(), feats, trials)
    assert res.eer == 0.0 and len(res.scores) == 2
    broken = trials + [TrialPair(False, f"x{i}", "a") for i in range(12)]
    with pytest.raises(MissingIdError) as err:
        run_trials(_Identity(), feats, broken)
    assert len(err.value.ids) == 12
    msg = str(err.value)
    assert "x0" in msg and "x9" in msg and "x10" not in msg and "+2 more" in msg
