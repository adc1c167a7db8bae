import itertools
import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgrisk import numcore as nc
from sgrisk.model import ModelConfig, prepare_clip
from sgrisk.pipeline import (DatasetError, ExperimentConfig, MetricsReport, SplitResult,
                             TransferError, ablation_csv, ablation_sweep, cell_label,
                             cross_validate, evaluate, load_prepared, rank_auc, run_split,
                             stratified_split, train, transfer_evaluate)
from sgrisk.scenegen import ScenarioSpec, generate_dataset, write_dataset
from sgrisk.scenegraph import clip_to_graph_sequence

SMALL = ModelConfig(n_mrgcn_layers=1, hidden=6, lstm_hidden=6)


@pytest.fixture(scope="module")
def small_set():
    clips, _ = generate_dataset(ScenarioSpec(seed=11, n_clips=24, frames_per_clip=(4, 8),
                                             n_vehicles=(1, 3), n_pedestrians=(0, 1)))
    return [prepare_clip(c.clip_id, c.label, clip_to_graph_sequence(c)) for c in clips]


def brute_auc(pos, neg):
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


# ---------------------------------------------------------------- splits

def test_split_ten_clips():
    labels = [1] * 5 + [0] * 5
    s = stratified_split(labels, 0.7, seed=0)
    assert len(s.train) == 7 and len(s.test) == 3
    assert sum(labels[i] for i in s.train) in (3, 4)


def test_split_ninety_six_clips():
    labels = [1, 0] * 48
    s = stratified_split(labels, 0.7, seed=3)
    assert (len(s.train), len(s.test)) == (67, 29)
    for side in (s.train, s.test):
        risky = sum(labels[i] for i in side)
        assert abs(risky - (len(side) - risky)) <= 1


def test_split_deterministic_and_errors():
    labels = [0, 1] * 20
    assert stratified_split(labels, 0.7, 5) == stratified_split(labels, 0.7, 5)
    assert stratified_split(labels, 0.7, 5) != stratified_split(labels, 0.7, 6)
    with pytest.raises(DatasetError):
        stratified_split([0, 0, 0, 1], 0.7, 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.floats(0.1, 0.9), st.integers(0, 2**31))
def test_split_is_stratified_partition(n_pos, n_neg, ratio, seed):
    labels = [1] * n_pos + [0] * n_neg
    s = stratified_split(labels, ratio, seed)
    assert sorted(s.train + s.test) == list(range(len(labels)))
    assert s.train and s.test
    for side in (s.train, s.test):
        pos = sum(labels[i] for i in side)
        assert abs(pos - len(side) * n_pos / len(labels)) <= 1.0 + 1e-9


# ---------------------------------------------------------------- AUC

def test_auc_examples():
    assert rank_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert rank_auc([0.6, 0.4, 0.5, 0.3], [1, 1, 0, 0]) == 0.75
    assert rank_auc([0.3] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert rank_auc([0.3, 0.4], [1, 1]) is None


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=30),
       st.lists(st.integers(0, 6), min_size=1, max_size=30))
def test_auc_equals_pairwise_count(pos, neg):
    scores = np.array(pos + neg) / 6.0
    labels = [1] * len(pos) + [0] * len(neg)
    assert rank_auc(scores, labels) == brute_auc(scores[:len(pos)], scores[len(pos):])


class FixedModel:
    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def predict(self, prepared):
        return self.probs[[p.i for p in prepared]]


def test_evaluate_accuracy_confusion_and_single_class(caplog):
    class P:
        def __init__(self, i, label):
            self.i, self.label = i, label

    probs = [[0.1, 0.9], [0.2, 0.8], [0.9, 0.1], [0.4, 0.6]]
    items = [P(0, 1), P(1, 1), P(2, 0), P(3, 0)]
    rep = evaluate(FixedModel(probs), items)
    assert rep.accuracy == 0.75
    assert rep.confusion == [[1, 1], [0, 2]]
    assert rep.auc == 1.0
    with caplog.at_level(logging.WARNING):
        rep = evaluate(FixedModel(probs), items[:2])
    assert rep.auc is None and "single class" in caplog.text


# ---------------------------------------------------------------- training

def test_zero_epochs_returns_initial_model(small_set):
    exp = ExperimentConfig(epochs=0, n_splits=1)
    r = train(small_set, exp, SMALL, seed=4)
    assert r.best_epoch == 0 and len(r.log) == 1
    assert r.log[0]["val_loss"] == r.best_loss
    from sgrisk.model import RiskModel
    fresh = RiskModel(SMALL, seed=4)
    for a, b in zip(fresh.params, r.model.params):
        assert np.array_equal(a.data, b.data)


def test_selection_and_log(small_set, tmp_path):
    exp = ExperimentConfig(epochs=6, n_splits=1, learning_rate=0.0005, batch_size=4)
    path = tmp_path / "log.jsonl"
    r = train(small_set, exp, SMALL, seed=1, log_path=path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert [l["epoch"] for l in lines] == list(range(7))
    assert set(lines[1]) == {"epoch", "train_loss", "val_loss", "lr"}
    assert all(r.best_loss <= l["val_loss"] for l in lines)
    assert lines[r.best_epoch]["val_loss"] == r.best_loss
    assert lines[3]["lr"] == pytest.approx(0.0005 * (1 - 5e-4) ** 2)


def test_loss_trend_on_learnable_set():
    clips, _ = generate_dataset(ScenarioSpec(seed=5, n_clips=40, frames_per_clip=(6, 10)))
    prepared = [prepare_clip(c.clip_id, c.label, clip_to_graph_sequence(c)) for c in clips]
    exp = ExperimentConfig(epochs=40, learning_rate=0.0005, val_fraction=0.0)
    r = train(prepared, exp, ModelConfig(n_mrgcn_layers=1, hidden=16, pooling="none",
                                         temporal="lstm_last", lstm_hidden=16), seed=0)
    losses = [l["train_loss"] for l in r.log[1:]]
    assert np.median(losses[-10:]) < np.median(losses[:10])


def test_non_finite_loss_aborts(small_set):
    import sgrisk.pipeline as pl

    orig = pl.RiskModel

    class Broken(orig):
        def __init__(self, *a, **k):
            super().__init__(*a, **k)
            self.head_b2.data[0] = np.nan

    pl.RiskModel = Broken
    try:
        with pytest.raises(nc.TrainingError, match="epoch"):
            train(small_set, ExperimentConfig(epochs=2, val_fraction=0.0), SMALL)
    finally:
        pl.RiskModel = orig


def test_config_validation():
    for bad in (dict(split_ratio=1.0), dict(batch_size=0), dict(learning_rate=0.01),
                dict(n_splits=0), dict(decay_mode="cosine")):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"epoch": 3})


# ---------------------------------------------------------------- experiments

def test_metrics_report_arithmetic():
    rows = [SplitResult(0, 0.9, 0.8, 0.1, 3, []), SplitResult(1, 1.0, None, 0.2, 4, [])]
    rep = MetricsReport(rows, "x")
    assert abs(rep.mean_accuracy - 0.95) < 1e-12 and abs(rep.std_accuracy - 0.05) < 1e-12
    assert rep.mean_auc == 0.8
    assert rep.csv_text().splitlines()[0] == "split,accuracy,auc,val_loss,epoch_selected"
    assert rep.csv_text().splitlines()[2] == "1,1.0,,0.2,4"


def test_cross_validate_single_split_and_determinism(small_set):
    exp = ExperimentConfig(epochs=2, n_splits=1, seed=7, learning_rate=0.0005)
    rep = cross_validate(small_set, exp, SMALL)
    single = run_split(small_set, exp, SMALL, 0)
    assert rep.splits == [single]
    assert rep.mean_accuracy == single.accuracy
    exp2 = ExperimentConfig(epochs=2, n_splits=2, seed=7, learning_rate=0.0005)
    assert cross_validate(small_set, exp2, SMALL).csv_text() == cross_validate(small_set, exp2, SMALL).csv_text()


def test_cross_validate_parallel_matches_serial(small_set):
    exp = ExperimentConfig(epochs=1, n_splits=2, seed=3)
    assert (cross_validate(small_set, exp, SMALL, jobs=2).csv_text()
            == cross_validate(small_set, exp, SMALL, jobs=1).csv_text())


def test_transfer_self_and_vocab_mismatch(small_set, tmp_path):
    r = train(small_set, ExperimentConfig(epochs=1, val_fraction=0.0), SMALL)
    out = transfer_evaluate(r.model, small_set, in_domain=small_set)
    assert out["accuracy_drop"] == 0.0
    assert set(out) >= {"in_domain_accuracy", "shifted_accuracy", "accuracy_drop"}
    clips, manifest = generate_dataset(ScenarioSpec(seed=1, n_clips=4, frames_per_clip=(2, 3)))
    path = tmp_path / "b.jsonl"
    write_dataset(path, clips, manifest)
    from sgrisk.model import RiskModel
    narrow = RiskModel(ModelConfig(n_mrgcn_layers=1, hidden=2, lstm_hidden=2,
                                   vocab=("ego_car", "car", "Left_Lane", "Middle_Lane",
                                          "Right_Lane", "Root_Road")))
    with pytest.raises(TransferError):
        transfer_evaluate(narrow, str(path))
    assert len(load_prepared(path)) == 4


def test_ablation_sweep_rows(small_set):
    exp = ExperimentConfig(epochs=1, n_splits=1)
    rows = ablation_sweep(small_set, exp, {"temporal": ["mean", "lstm_last"]},
                          base=ModelConfig(n_mrgcn_layers=1, hidden=4, lstm_hidden=4, pooling="none"))
    assert [r[0] for r in rows] == ["1 MR-GCN + mean", "1 MR-GCN + LSTM-last"]
    text = ablation_csv(rows).splitlines()
    assert len(text) == 3 and text[1].startswith("1 MR-GCN + mean,")
    with pytest.raises(ValueError):
        ablation_sweep(small_set, exp, {"temporal": ["gru"]})
    with pytest.raises(ValueError):
        ablation_sweep(small_set, exp, {"optimizer": ["sgd"]})


def test_cell_labels():
    assert cell_label(ModelConfig(n_mrgcn_layers=0, pooling="none", temporal="mean")) == "No MR-GCN + mean"
    assert cell_label(ModelConfig()) == "2 MR-GCN + SAGPool 0.5 + LSTM-attn"
    cells = [cell_label(ModelConfig(n_mrgcn_layers=l, pooling="none", temporal=t))
             for l, t in itertools.product([1, 2], ["lstm_last"])]
    assert cells == ["1 MR-GCN + LSTM-last", "2 MR-GCN + LSTM-last"]
