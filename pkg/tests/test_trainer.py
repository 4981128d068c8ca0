import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillkit.errors import ConfigError, DataError, UsageError
from distillkit.nnet import StudentNet, student_config
from distillkit.synth import SynthSpec, generate_corpus
from distillkit.teacher import TeacherStore
from distillkit.trainer import TrainConfig, dense_labels, finetune_supervised, lr_schedule, train_distill

SMALL = SynthSpec(n_speakers=4, utts_per_speaker=6, min_duration_s=2.0, max_duration_s=2.5, seed=3)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(SMALL)


def tiny(seed=0):
    return StudentNet(student_config("tdnn-tiny"), seed=seed)


def quick(**kw):
    return replace(TrainConfig(epochs=2, batch_size=8), **kw)


def test_lr_endpoints_and_midpoint():
    cfg = TrainConfig()
    assert lr_schedule(cfg, 0) == 0.1
    assert lr_schedule(cfg, 14) == 0.01
    assert lr_schedule(cfg, 7) == pytest.approx(0.0316228, abs=1e-7)
    with pytest.raises(UsageError):
        lr_schedule(cfg, 15)


@settings(max_examples=40, deadline=None)
@given(
    epochs=st.integers(2, 60),
    start=st.floats(1e-4, 1.0),
    ratio=st.floats(1e-3, 1.0),
)
def test_lr_is_geometric(epochs, start, ratio):
    cfg = TrainConfig(epochs=epochs, lr_start=start, lr_end=start * ratio)
    lrs = np.array([lr_schedule(cfg, e) for e in range(epochs)])
    assert lrs[0] == cfg.lr_start and lrs[-1] == cfg.lr_end
    assert np.all(np.diff(lrs) <= 1e-15)
    np.testing.assert_allclose(lrs[1:] / lrs[:-1], ratio ** (1 / (epochs - 1)), rtol=1e-9)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_start=0.01, lr_end=0.1)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(max_grad_norm=0.0)
    with pytest.raises(ConfigError):
        train_distill({}, TeacherStore(2), tiny(), TrainConfig(loss="aam"))


def test_zero_lr_leaves_params_unchanged(corpus):
    net = tiny()
    before = net.params.copy()
    train_distill(corpus.train_features, corpus.teacher, net, quick(lr_start=0.0, lr_end=0.0))
    assert net.params.tobytes() == before.tobytes()


def test_seeded_runs_are_byte_identical(corpus, tmp_path):
    for d in ("a", "b"):
        train_distill(corpus.train_features, corpus.teacher, tiny(), quick(seed=4), tmp_path / d)
    for name in ("last.net1", "best.net1", "report.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    lines = [json.loads(l) for l in (tmp_path / "a" / "report.jsonl").read_text().splitlines()]
    assert [l["type"] for l in lines] == ["header", "epoch", "epoch", "final"]


def test_different_seed_changes_result(corpus):
    a, b = tiny(), tiny()
    train_distill(corpus.train_features, corpus.teacher, a, quick(seed=1))
    train_distill(corpus.train_features, corpus.teacher, b, quick(seed=2))
    assert a.params.tobytes() != b.params.tobytes()


def test_missing_teacher_ids_are_skipped_and_counted(corpus):
    ids = list(corpus.train_features)
    partial = TeacherStore(SMALL.teacher_dim, {u: corpus.teacher[u] for u in ids[5:]})
    rep = train_distill(corpus.train_features, partial, tiny(), quick())
    assert all(e.skipped == 5 and e.processed == len(ids) - 5 for e in rep.epochs)
    with pytest.raises(DataError):
        train_distill(corpus.train_features, TeacherStore(SMALL.teacher_dim), tiny(), quick())


def test_subset_fraction(corpus):
    rep = train_distill(corpus.train_features, corpus.teacher, tiny(), quick(epoch_subset_fraction=0.5))
    assert all(e.processed == len(corpus.train_features) // 2 for e in rep.epochs)


def test_gradient_clip_bounds_first_step(corpus):
    net = tiny()
    before = net.params.astype(np.float64)
    cfg = quick(loss="mse", epochs=1, batch_size=100, lr_start=0.1, lr_end=0.1, max_grad_norm=0.5)
    train_distill(corpus.train_features, corpus.teacher, net, cfg)
    assert np.linalg.norm(net.params - before) <= 0.1 * 0.5 * (1 + 1e-4)


@pytest.mark.parametrize("loss", ["cos", "contrastive"])
def test_loss_decreases(corpus, loss):
    rep = train_distill(corpus.train_features, corpus.teacher, tiny(), quick(loss=loss, epochs=6))
    assert rep.losses[-1] < rep.losses[0]


def test_single_class_finetune_is_a_no_op(corpus):
    net = tiny()
    before = net.params.copy()
    labels = {u: 0 for u in corpus.train_features}
    rep = finetune_supervised(corpus.train_features, labels, net, quick(loss="aam"))
    assert net.params.tobytes() == before.tobytes()
    assert rep.losses == [0.0, 0.0]


def test_finetune_keeps_class_weights_unit(corpus):
    ids, names = dense_labels(corpus.train_labels)
    assert names == sorted(set(corpus.train_labels.values()))
    rep = finetune_supervised(corpus.train_features, ids, tiny(), quick(loss="aam"))
    np.testing.assert_allclose(np.linalg.norm(rep.class_weights.W, axis=1), 1.0, atol=1e-6)
    assert rep.class_weights.n_classes == SMALL.n_speakers


def test_finetune_validation(corpus):
    with pytest.raises(ConfigError):
        finetune_supervised(corpus.train_features, {}, tiny(), quick(loss="cos"))
    gappy = {u: 2 * (i % 2) for i, u in enumerate(corpus.train_features)}
    with pytest.raises(DataError, match="missing class ids"):
        finetune_supervised(corpus.train_features, gappy, tiny(), quick(loss="aam"))
