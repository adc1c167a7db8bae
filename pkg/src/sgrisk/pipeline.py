"""Experiment harness: stratified splits, training with validation-based
selection, accuracy/AUC evaluation, multi-split averaging, ablations and
transfer evaluation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import product
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from . import numcore as nc
from .model import (ModelConfig, RiskModel, VocabularyError, class_weights, make_batch,
                    prepare_clip, weighted_cross_entropy)
from .scenegraph import GraphConfig, clip_to_graph_sequence, read_clips, read_graph_records
from .scenegraph.io import _iter_json_lines

log = logging.getLogger(__name__)

LEARNING_RATES = (0.0005, 0.0001, 0.00005)
METRICS_HEADER = ("split", "accuracy", "auc", "val_loss", "epoch_selected")


class DatasetError(ValueError):
    pass


class TransferError(VocabularyError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    split_ratio: float = 0.7
    n_splits: int = 10
    batch_size: int = 16
    epochs: int = 200
    learning_rate: float = 0.00005
    weight_decay: float = 5e-4
    decay_mode: str = "lr"
    val_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.n_splits < 1:
            raise ValueError("n_splits must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate not in LEARNING_RATES:
            raise ValueError(f"learning_rate must be one of {LEARNING_RATES}, got {self.learning_rate}")
        if self.decay_mode not in ("lr", "l2"):
            raise ValueError("decay_mode must be 'lr' or 'l2'")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def fingerprint(*dicts):
    blob = json.dumps(list(dicts), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- data

def load_prepared(path, graph_config: GraphConfig = GraphConfig(), vocab=None):
    """Prepared clips from either a graph cache or a raw clip file."""
    first = next(iter(_iter_json_lines(path)), None)
    if first is None:
        return []
    kw = {} if vocab is None else {"vocab": tuple(vocab)}
    if "graphs" in first[1]:
        return [prepare_clip(cid, label, graphs, **kw) for cid, label, graphs in read_graph_records(path)]
    return [prepare_clip(c.clip_id, c.label, clip_to_graph_sequence(c, graph_config), **kw)
            for c in read_clips(path)]


def _round_half_up(x):
    return int(math.floor(round(x, 9) + 0.5))


@dataclass
class Split:
    train: list
    test: list


def stratified_split(labels, ratio, seed):
    """Indices (train, test): per-class shuffle, then a proportional cut.

    The train total is round(ratio * n); per-class quotas use largest
    remainders so each side keeps the class ratio within one clip.
    """
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    for c in classes:
        if np.sum(labels == c) < 2:
            raise DatasetError(f"class {c} has fewer than 2 clips; cannot stratify")
    n_train = _round_half_up(ratio * len(labels))
    exact = {c: ratio * np.sum(labels == c) for c in classes}
    quota = {c: int(math.floor(round(exact[c], 9))) for c in classes}
    by_remainder = sorted(classes, key=lambda c: (-(exact[c] - quota[c]), c))
    for c in by_remainder[:max(0, n_train - sum(quota.values()))]:
        quota[c] += 1
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in classes:
        idx = np.nonzero(labels == c)[0]
        rng.shuffle(idx)
        q = min(max(quota[c], 1), len(idx) - 1)
        train.extend(idx[:q].tolist())
        test.extend(idx[q:].tolist())
    return Split(sorted(train), sorted(test))


def split_plan(clips, ratio, seed):
    """The same split expressed as clip ids."""
    s = stratified_split([c.label for c in clips], ratio, seed)
    return {"train": [clips[i].clip_id for i in s.train], "test": [clips[i].clip_id for i in s.test]}


# ---------------------------------------------------------------- metrics

def rank_auc(scores, labels):
    """Mann-Whitney AUC of ``scores`` for the positive class; None if one class is absent."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)   # average ranks for ties
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class EvalReport:
    accuracy: float
    auc: Optional[float]
    confusion: list          # [[true safe -> safe, safe -> risky], [risky -> safe, risky -> risky]]
    probs: np.ndarray
    labels: np.ndarray
    loss: float

    def summary(self):
        return {"accuracy": self.accuracy, "auc": self.auc, "confusion": self.confusion,
                "n": int(len(self.labels)), "loss": self.loss}


def evaluate(model: RiskModel, prepared, weights=None) -> EvalReport:
    if not prepared:
        raise DatasetError("cannot evaluate on an empty clip set")
    probs = model.predict(prepared)
    labels = np.array([p.label for p in prepared])
    pred = probs.argmax(axis=1)
    confusion = [[int(np.sum((labels == a) & (pred == b))) for b in (0, 1)] for a in (0, 1)]
    auc = rank_auc(probs[:, 1], labels)
    if auc is None:
        log.warning("AUC undefined: evaluation set contains a single class")
    w = class_weights(labels) if weights is None else weights
    loss = weighted_cross_entropy(nc.Tensor(probs), labels, w).item()
    return EvalReport(float(np.mean(pred == labels)), auc, confusion, probs, labels, loss)


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: RiskModel
    best_epoch: int
    best_loss: float
    log: list
    selection: str            # "val" or "train"
    weights: np.ndarray


def _batched_loss(model, prepared, weights, batch_size=64):
    total = 0.0
    with nc.no_grad():
        for i in range(0, len(prepared), batch_size):
            chunk = prepared[i:i + batch_size]
            b = make_batch(chunk)
            total += weighted_cross_entropy(model.forward_batch(b), b.labels, weights).item() * len(chunk)
    return total / len(prepared)


def train(prepared, exp: ExperimentConfig, model_config: ModelConfig = ModelConfig(),
          seed=None, log_path=None, val=None):
    """Train on ``prepared``; the validation set is carved out unless given.

    Returns the parameters with the lowest selection loss seen at any epoch,
    including the initial state (epoch 0).
    """
    seed = exp.seed if seed is None else seed
    if not prepared:
        raise DatasetError("empty training set")
    if val is None and exp.val_fraction > 0:
        s = stratified_split([p.label for p in prepared], 1.0 - exp.val_fraction, [seed, 17])
        fit = [prepared[i] for i in s.train]
        val = [prepared[i] for i in s.test]
    else:
        fit, val = list(prepared), list(val or [])
    selection = "val" if val else "train"
    select_set = val if val else fit
    weights = class_weights([p.label for p in fit])

    model = RiskModel(model_config, seed=seed)
    params = list(model.params)
    opt = nc.Adam(params, lr=exp.learning_rate, weight_decay=exp.weight_decay, decay_mode=exp.decay_mode)
    rng = np.random.default_rng([seed, 1])

    best_loss = _batched_loss(model, select_set, weights)
    best = [p.data.copy() for p in params]
    best_epoch = 0
    records = [{"epoch": 0, "train_loss": None, "val_loss": best_loss if val else None,
                "lr": exp.learning_rate}]
    logfh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if logfh:
            logfh.write(json.dumps(records[0]) + "\n")
        for epoch in range(1, exp.epochs + 1):
            opt.set_epoch(epoch - 1)
            order = rng.permutation(len(fit))
            losses = []
            for bi, start in enumerate(range(0, len(fit), exp.batch_size)):
                b = make_batch([fit[i] for i in order[start:start + exp.batch_size]])
                opt.zero_grad()
                loss = weighted_cross_entropy(model.forward_batch(b, training=True, rng=rng),
                                              b.labels, weights)
                if not np.isfinite(loss.item()):
                    raise nc.TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
                nc.backward(loss)
                try:
                    opt.step()
                except nc.TrainingError as exc:
                    raise nc.TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from None
                losses.append(loss.item() * len(b.labels))
            train_loss = sum(losses) / len(fit)
            sel_loss = _batched_loss(model, select_set, weights)
            if not np.isfinite(sel_loss):
                raise nc.TrainingError(f"non-finite {selection} loss at epoch {epoch}")
            rec = {"epoch": epoch, "train_loss": train_loss,
                   "val_loss": sel_loss if val else None, "lr": opt.state.lr}
            records.append(rec)
            if logfh:
                logfh.write(json.dumps(rec) + "\n")
            if sel_loss < best_loss:
                best_loss, best_epoch = sel_loss, epoch
                best = [p.data.copy() for p in params]
    finally:
        if logfh:
            logfh.close()
    for p, b in zip(params, best):
        p.data[...] = b
    return TrainResult(model, best_epoch, best_loss, records, selection, weights)


# ---------------------------------------------------------------- experiments

@dataclass
class SplitResult:
    split: int
    accuracy: float
    auc: Optional[float]
    val_loss: float
    epoch_selected: int
    confusion: list


@dataclass
class MetricsReport:
    splits: list
    fingerprint: str
    extra: dict = field(default_factory=dict)

    def _stat(self, key, fn):
        vals = [getattr(s, key) for s in self.splits if getattr(s, key) is not None]
        return float(fn(vals)) if vals else None

    @property
    def mean_accuracy(self):
        return self._stat("accuracy", np.mean)

    @property
    def std_accuracy(self):
        return self._stat("accuracy", np.std)   # population std

    @property
    def mean_auc(self):
        return self._stat("auc", np.mean)

    @property
    def std_auc(self):
        return self._stat("auc", np.std)

    def summary(self):
        return {"n_splits": len(self.splits), "mean_accuracy": self.mean_accuracy,
                "std_accuracy": self.std_accuracy, "mean_auc": self.mean_auc,
                "std_auc": self.std_auc, "fingerprint": self.fingerprint,
                "splits": [asdict(s) for s in self.splits], **self.extra}

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for s in self.splits:
            w.writerow([s.split, repr(s.accuracy), "" if s.auc is None else repr(s.auc),
                        repr(s.val_loss), s.epoch_selected])
        return buf.getvalue()

    def write(self, csv_path, json_path=None):
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())
        if json_path:
            with open(json_path, "w", encoding="utf-8") as fh:
                json.dump(self.summary(), fh, indent=2, sort_keys=True)
                fh.write("\n")


def run_split(prepared, exp, model_config, index, log_path=None):
    seed = exp.seed + index
    try:
        s = stratified_split([p.label for p in prepared], exp.split_ratio, seed)
        result = train([prepared[i] for i in s.train], exp, model_config, seed=seed, log_path=log_path)
        rep = evaluate(result.model, [prepared[i] for i in s.test], result.weights)
    except Exception as exc:
        try:
            wrapped = type(exc)(f"split {index}: {exc}")
        except TypeError:
            raise exc from None
        raise wrapped from exc
    return SplitResult(index, rep.accuracy, rep.auc, result.best_loss, result.best_epoch, rep.confusion)


def _run_split_task(args):
    return run_split(*args)


def cross_validate(prepared, exp: ExperimentConfig, model_config: ModelConfig = ModelConfig(),
                   jobs=1, log_dir=None) -> MetricsReport:
    tasks = []
    for i in range(exp.n_splits):
        lp = None if log_dir is None else f"{log_dir}/train_split{i}.jsonl"
        tasks.append((prepared, exp, model_config, i, lp))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_run_split_task, tasks))
    else:
        rows = [_run_split_task(t) for t in tasks]
    return MetricsReport(rows, fingerprint(exp.to_dict(), model_config.to_dict()))


def transfer_evaluate(model: RiskModel, target, in_domain=None):
    """Evaluate a trained model unchanged on ``target``; ``in_domain`` gives the reference score.

    Both arguments are prepared clip lists, or paths loaded with the model's vocabulary.
    """
    def load(x):
        if isinstance(x, (str, bytes)) or hasattr(x, "__fspath__"):
            try:
                return load_prepared(x, vocab=model.config.vocab)
            except VocabularyError as exc:
                raise TransferError(f"target dataset does not fit the model vocabulary: {exc}") from None
        return x

    target = load(target)
    for p in target:
        if p.kinds.size and p.kinds.max() >= len(model.config.vocab):
            raise TransferError(f"clip {p.clip_id!r} uses kinds outside the model vocabulary")
    shifted = evaluate(model, target)
    out = {"shifted_accuracy": shifted.accuracy, "shifted_auc": shifted.auc,
           "shifted_confusion": shifted.confusion, "n_shifted": len(target)}
    if in_domain is not None:
        ref = evaluate(model, load(in_domain))
        out.update(in_domain_accuracy=ref.accuracy, in_domain_auc=ref.auc,
                   accuracy_drop=ref.accuracy - shifted.accuracy)
    return out


AXES = ("n_mrgcn_layers", "hidden", "pooling", "pool_ratio", "readout", "temporal")
_TEMPORAL_LABEL = {"mean": "mean", "lstm_mean": "LSTM-mean", "lstm_last": "LSTM-last",
                   "lstm_attn": "LSTM-attn"}
_POOL_LABEL = {"topk": "TopkPool", "sagpool": "SAGPool"}


def cell_label(cfg: ModelConfig):
    parts = ["No MR-GCN" if cfg.n_mrgcn_layers == 0 else f"{cfg.n_mrgcn_layers} MR-GCN"]
    if cfg.pooling != "none":
        parts.append(f"{_POOL_LABEL[cfg.pooling]} {cfg.pool_ratio:g}")
    if cfg.readout != "sum":
        parts.append(f"{cfg.readout} readout")
    parts.append(_TEMPORAL_LABEL[cfg.temporal])
    return " + ".join(parts)


ABLATION_BASE = ModelConfig(n_mrgcn_layers=1, hidden=64, pooling="none", readout="sum",
                            temporal="lstm_last")


def ablation_sweep(prepared, exp: ExperimentConfig, axes, base: ModelConfig = ABLATION_BASE, jobs=1):
    """Cartesian sweep over ``axes`` (ordered mapping axis -> values), rows in declared order."""
    axes = dict(axes)
    for name in axes:
        if name not in AXES:
            raise ValueError(f"unknown ablation axis {name!r}; expected one of {AXES}")
    names = list(axes)
    cells = []
    for values in product(*(axes[n] for n in names)):
        cfg = replace(base, **dict(zip(names, values)))   # validates each value
        cells.append(cfg)
    return [(cell_label(cfg), cfg, cross_validate(prepared, exp, cfg, jobs=jobs)) for cfg in cells]


def ablation_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "n_mrgcn_layers", "pooling", "readout", "temporal",
                "mean_accuracy", "std_accuracy", "mean_auc", "std_auc"])
    for label, cfg, rep in rows:
        w.writerow([label, cfg.n_mrgcn_layers, cfg.pooling, cfg.readout, cfg.temporal,
                    repr(rep.mean_accuracy), repr(rep.std_accuracy),
                    "" if rep.mean_auc is None else repr(rep.mean_auc),
                    "" if rep.std_auc is None else repr(rep.std_auc)])
    return buf.getvalue()
