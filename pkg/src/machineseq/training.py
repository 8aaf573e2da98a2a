"""Optimization loop, loss, metrics, hyperparameter sweep, and ablations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import graphs, model as model_mod, tensor as T
from .errors import ConfigError, TrainingError
from .model import (AUTOREGRESSIVE, TEACHER_FORCED, Model, ModelConfig, forward,
                    load_checkpoint, save_checkpoint)
from .synth import MAIN_OPS, SUB_OPS


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    epochs: int = 20
    seed: int = 0
    split_fraction: float = 0.8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0  # 0 disables; >0 clips global grad norm
    eval_mode: str = TEACHER_FORCED

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must be in (0, 1)")
        if self.eval_mode not in (TEACHER_FORCED, AUTOREGRESSIVE):
            raise ConfigError(f"eval_mode must be tf or ar, got {self.eval_mode!r}")


@dataclass
class SequenceData:
    """One training instance: normalized graphs plus the label sequence."""
    sample_id: str
    design: graphs.DesignGraph
    process: list
    labels: list


def split_dataset(items, fraction, seed):
    """Deterministic shuffled split; disjoint and exhaustive."""
    order = np.random.default_rng([seed, 17]).permutation(len(items))
    n_train = int(round(len(items) * fraction))
    train = [items[i] for i in order[:n_train]]
    test = [items[i] for i in order[n_train:]]
    return train, test


def prepare_entry_splits(entries, fraction, seed):
    """Split unnormalized SequenceData entries; normalize with train stats."""
    train_e, test_e = split_dataset(list(entries), fraction, seed)
    stats = graphs.fit_norm_stats([(e.design, e.process) for e in train_e])

    def pack(entry_list):
        return [SequenceData(e.sample_id,
                             *graphs.apply_norm_stats(e.design, e.process, stats),
                             list(e.labels))
                for e in entry_list]

    return pack(train_e), pack(test_e), stats


def prepare_splits(samples, fraction, seed):
    """Extract graphs, split by sample, and normalize with train-only stats."""
    entries = [SequenceData(s.id, *graphs.extract_sequence(s), list(s.labels))
               for s in samples]
    return prepare_entry_splits(entries, fraction, seed)


# --------------------------------------------------------------------------
# Loss.

def _step_ce(logits, class_index):
    log_p = T.log(T.softmax(logits, axis=-1))
    return T.scale(T.sum_(T.slice_cols(log_p, class_index, class_index + 1)), -1.0)


def sequence_loss(result: model_mod.ForwardResult, labels):
    """(1/T) Σ_t [CE_main(t) + CE_sub(t)] as a scalar Tensor."""
    terms = []
    for t, lab in enumerate(labels):
        terms.append(_step_ce(result.main_logits[t], lab.main_index))
        terms.append(_step_ce(result.sub_logits[t], lab.sub_index))
    total = terms[0]
    for x in terms[1:]:
        total = T.add(total, x)
    return T.scale(total, 1.0 / len(labels))


# --------------------------------------------------------------------------
# Optimizer.

class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, grad_clip=0.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        if self.grad_clip > 0.0:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.grad_clip:
                grads = [g * (self.grad_clip / norm) for g in grads]
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# --------------------------------------------------------------------------
# Training loop.

@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # (epoch, train_loss, test_loss)
    best_checkpoint: bytes = b""
    last_checkpoint: bytes = b""
    best_epoch: int = -1


def dataset_loss(model: Model, data, mode=TEACHER_FORCED):
    """Mean teacher-forced (or AR) sequence loss without gradients."""
    total = 0.0
    for seq in data:
        res = forward(model, seq.design, seq.process, seq.labels, mode=mode)
        total += float(sequence_loss(res, seq.labels).data)
    return total / max(1, len(data))


def train(model: Model, train_data, config: TrainConfig, test_data=None,
          checkpoint_hook=None, log=None):
    """Adam training with per-sequence loss averaging inside each batch.

    checkpoint_hook(epoch, blob, is_best) is called once per epoch; the best
    checkpoint is the one with the lowest test loss (train loss if no test
    split is provided).
    """
    if not train_data:
        raise ConfigError("empty training set")
    opt = Adam(model.parameters(), config.learning_rate, config.beta1,
               config.beta2, config.adam_eps, config.grad_clip)
    result = TrainResult()
    best_loss = math.inf
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(
            [config.seed, 23, epoch]).permutation(len(train_data))
        epoch_loss = 0.0
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_data[i] for i in order[start:start + config.batch_size]]
            opt.zero_grad()
            batch_loss = 0.0
            for k, seq in enumerate(batch):
                rng = np.random.default_rng([config.seed, 29, epoch, step, k])
                res = forward(model, seq.design, seq.process, seq.labels,
                              mode=TEACHER_FORCED, rng=rng)
                loss = T.scale(sequence_loss(res, seq.labels), 1.0 / len(batch))
                loss.backward()
                batch_loss += float(loss.data)
            if not math.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {step}")
            opt.step()
            epoch_loss += batch_loss * len(batch)
        train_loss = epoch_loss / len(train_data)
        test_loss = dataset_loss(model, test_data) if test_data else None
        result.history.append((epoch, train_loss, test_loss))
        if log is not None:
            shown = "-" if test_loss is None else f"{test_loss:.4f}"
            log(f"epoch {epoch:3d}  train {train_loss:.4f}  test {shown}")
        blob = save_checkpoint(model)
        result.last_checkpoint = blob
        select = test_loss if test_loss is not None else train_loss
        is_best = select < best_loss
        if is_best:
            best_loss = select
            result.best_checkpoint = blob
            result.best_epoch = epoch
        if checkpoint_hook is not None:
            checkpoint_hook(epoch, blob, is_best)
    return result


# --------------------------------------------------------------------------
# Metrics.

@dataclass
class HeadMetrics:
    accuracy: float
    f1: float
    precision: float
    recall: float

    def row(self):
        return [self.accuracy, self.f1, self.precision, self.recall]


@dataclass
class MetricsReport:
    mode: str
    main: HeadMetrics
    sub: HeadMetrics
    joint: HeadMetrics
    n_sequences: int
    n_steps: int
    predictions: list  # (sample_id, t, true_main, true_sub, pred_main, pred_sub)


def _macro_metrics(true, pred):
    """Accuracy plus macro F1/precision/recall over classes present in true."""
    true = np.asarray(true)
    pred = np.asarray(pred)
    acc = float((true == pred).mean()) if len(true) else 0.0
    precs, recs, f1s = [], [], []
    for c in np.unique(true):
        tp = int(((pred == c) & (true == c)).sum())
        fp = int(((pred == c) & (true != c)).sum())
        fn = int(((pred != c) & (true == c)).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precs.append(p)
        recs.append(r)
        f1s.append(f)
    return HeadMetrics(acc, float(np.mean(f1s)), float(np.mean(precs)),
                       float(np.mean(recs)))


def evaluate(model: Model, data, mode=TEACHER_FORCED) -> MetricsReport:
    tm, ts_, pm, ps = [], [], [], []
    predictions = []
    n_steps = 0
    for seq in data:
        res = forward(model, seq.design, seq.process, seq.labels, mode=mode)
        for t, lab in enumerate(seq.labels):
            tm.append(lab.main_index)
            ts_.append(lab.sub_index)
            pm.append(res.pred_main[t])
            ps.append(res.pred_sub[t])
            predictions.append((seq.sample_id, t + 1, lab.main_index,
                                lab.sub_index, res.pred_main[t], res.pred_sub[t]))
            n_steps += 1
    n_sub = len(SUB_OPS)
    tj = [a * n_sub + b for a, b in zip(tm, ts_)]
    pj = [a * n_sub + b for a, b in zip(pm, ps)]
    return MetricsReport(mode, _macro_metrics(tm, pm), _macro_metrics(ts_, ps),
                         _macro_metrics(tj, pj), len(data), n_steps, predictions)


# --------------------------------------------------------------------------
# Sweeps, ablations, embedding export.

def run_config(train_data, test_data, model_cfg: ModelConfig,
               train_cfg: TrainConfig, model_seed=None, log=None,
               checkpoint_hook=None):
    """Train one configuration on prepared splits; returns model + metrics."""
    model = Model(model_cfg, seed=train_cfg.seed if model_seed is None else model_seed)
    result = train(model, train_data, train_cfg, test_data=test_data, log=log,
                   checkpoint_hook=checkpoint_hook)
    best = load_checkpoint(result.best_checkpoint)
    reports = {
        "train": evaluate(best, train_data, mode=train_cfg.eval_mode),
        "test": evaluate(best, test_data, mode=train_cfg.eval_mode),
    }
    return best, result, reports


# Default sweep settings: (batch size, learning rate, epochs).
DEFAULT_SWEEP = (
    (8, 0.01, 5),
    (16, 0.01, 5),
    (128, 0.01, 5),
    (16, 0.001, 5),
    (128, 0.001, 20),
    (256, 0.001, 20),
)


def sweep(train_data, test_data, model_cfg: ModelConfig, train_cfgs, log=None):
    """Train/evaluate a list of TrainConfigs on identical data; returns rows."""
    rows = []
    for tc in train_cfgs:
        _best, result, reports = run_config(train_data, test_data, model_cfg,
                                            tc, log=log)
        rows.append({"config": tc, "result": result, "reports": reports})
    return rows


ABLATION_VARIANTS = (
    ("nn-encoder", {"encoder": "nn"}),
    ("encoder-mode", {"decoder_mode": "bidirectional"}),
    ("full-model", {}),
)


def run_ablations(train_data, test_data, model_cfg: ModelConfig,
                  train_cfg: TrainConfig, log=None):
    """Train the two ablation variants and the full model on identical data/seed."""
    rows = []
    base = {k: getattr(model_cfg, k) for k in vars(model_cfg)}
    for name, overrides in ABLATION_VARIANTS:
        cfg = ModelConfig(**{**base, **overrides})
        _best, result, reports = run_config(train_data, test_data, cfg,
                                            train_cfg, log=log)
        rows.append({"variant": name, "result": result, "reports": reports})
    return rows


def export_embeddings(model: Model, data, mode=TEACHER_FORCED):
    """Rows of (sample id, t, decoder output embedding, true labels)."""
    rows = []
    for seq in data:
        res = forward(model, seq.design, seq.process, seq.labels, mode=mode)
        for t, lab in enumerate(seq.labels):
            rows.append((seq.sample_id, t + 1, res.embeddings[t].data[0].copy(),
                         MAIN_OPS[lab.main_index], SUB_OPS[lab.sub_index]))
    return rows
