"""Desk-scale classifier harness: wavelet-summary features, a from-scratch
MLP trained with Adam, gradient checking, metrics, stratified
cross-validation, and the three-arm augmentation comparison.

The network is deliberately small and fully deterministic given its seed;
its backward pass is validated against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cleanse import cleanse_records
from .core_data import ClassId, DatasetManifest, EcgRecord, RngStream
from .errors import ArgumentError, DataError, InputError
from .fusion import FusedSample, FusionConfig, rebalance_class, select_balanced
from .wavelet import FilterBank, _analyze_axis, bior13

FEATURES_PER_LEAD = 12  # 4 subbands x (mean, variance, energy)


def featurize_batch(matrices: np.ndarray, fb: FilterBank | None = None) -> np.ndarray:
    """Feature matrix for a (batch, leads, samples) stack; one row per input.

    Identical arithmetic to featurize applied per record, vectorized over
    the batch axis.
    """
    if fb is None:
        fb = bior13()
    x = np.asarray(matrices, dtype=np.float64)
    if x.ndim != 3:
        raise ArgumentError(f"need a (batch, leads, samples) stack, got ndim={x.ndim}")
    batch, leads, cols = x.shape
    if cols % 4:
        raise ArgumentError(f"sample count must be divisible by 4, got {cols}")
    stacked = x.reshape(batch, leads, 2, cols // 2)
    v_low, v_high = _analyze_axis(stacked, fb, axis=3)
    ll, hl = _analyze_axis(v_low, fb, axis=2)
    lh, hh = _analyze_axis(v_high, fb, axis=2)
    feats = np.empty((batch, leads, FEATURES_PER_LEAD))
    for b, band in enumerate((ll, lh, hl, hh)):
        flat = band.reshape(batch, leads, -1)
        feats[:, :, 3 * b + 0] = flat.mean(axis=2)
        feats[:, :, 3 * b + 1] = flat.var(axis=2)
        feats[:, :, 3 * b + 2] = np.mean(flat * flat, axis=2)
    return feats.reshape(batch, leads * FEATURES_PER_LEAD)


def featurize(matrix: np.ndarray, fb: FilterBank | None = None) -> np.ndarray:
    """Per-lead subband summary vector.

    Each lead is reshaped to two half-length rows and decomposed once; the
    mean, variance, and mean-square energy of each subband form the lead's
    block, so swapping leads swaps feature blocks.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise ArgumentError(f"need a matrix, got ndim={x.ndim}")
    return featurize_batch(x[None, :, :], fb)[0]


@dataclass(frozen=True)
class NetConfig:
    """Fully-connected network and training hyperparameters.

    ``widths`` is the full layer chain including input and output; the
    final width must equal the class count at train time.
    """

    widths: tuple[int, ...] = (144, 64, 3)
    learning_rate: float = 0.001
    batch_size: int = 10
    epochs: int = 150
    steps_per_epoch: int | None = 50
    loss: str = "cross_entropy"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ArgumentError(f"widths must be >= 1 with at least two layers, "
                                f"got {self.widths}")
        if self.loss not in ("cross_entropy", "squared"):
            raise ArgumentError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ArgumentError("batch_size must be >= 1 and epochs >= 0")

    def n_parameters(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))


def _init_params(cfg: NetConfig) -> list[np.ndarray]:
    """He-scaled weights and zero biases, flattened as [W1, b1, W2, b2, ...]."""
    rng = cfg.seed.substream("init").generator()
    params = []
    for a, b in zip(cfg.widths[:-1], cfg.widths[1:]):
        params.append(rng.standard_normal((a, b)) * math.sqrt(2.0 / a))
        params.append(np.zeros(b))
    return params


def _forward(params: list[np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits plus the post-activation cache needed by the backward pass."""
    acts = [x]
    h = x
    n_layers = len(params) // 2
    for layer in range(n_layers):
        w, b = params[2 * layer], params[2 * layer + 1]
        z = h @ w + b
        if layer < n_layers - 1:
            h = np.maximum(z, 0.0)
        else:
            h = z
        acts.append(h)
    return h, acts


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grads(params: list[np.ndarray], x: np.ndarray, y: np.ndarray,
                    loss: str) -> tuple[float, list[np.ndarray]]:
    """Mean loss over the batch and analytic gradients for every parameter.

    ``y`` is integer labels for cross-entropy and a target matrix for the
    squared loss.
    """
    logits, acts = _forward(params, x)
    n = x.shape[0]
    if loss == "cross_entropy":
        probs = _softmax(logits)
        value = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
    else:
        diff = logits - y
        value = float(0.5 * np.mean(np.sum(diff * diff, axis=1)))
        delta = diff / n
    grads: list[np.ndarray] = [np.empty(0)] * len(params)
    n_layers = len(params) // 2
    for layer in range(n_layers - 1, -1, -1):
        h_in = acts[layer]
        grads[2 * layer] = h_in.T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params[2 * layer].T) * (acts[layer] > 0)
    return value, grads


def gradient_check(cfg: NetConfig, batch: tuple[np.ndarray, np.ndarray],
                   h: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference
    gradients over every parameter of a freshly initialized network."""
    if cfg.n_parameters() > 10_000:
        raise ArgumentError(f"gradient check limited to 1e4 parameters, "
                            f"config has {cfg.n_parameters()}")
    x, y = batch
    params = _init_params(cfg)
    _, grads = _loss_and_grads(params, x, y, cfg.loss)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up, _ = _loss_and_grads(params, x, y, cfg.loss)
            flat[i] = keep - h
            down, _ = _loss_and_grads(params, x, y, cfg.loss)
            flat[i] = keep
            numeric = (up - down) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst


@dataclass
class TrainingCurves:
    loss: list[float]
    accuracy: list[float]


@dataclass
class Model:
    """Trained network with its feature standardization and label map."""

    config: NetConfig
    params: list[np.ndarray]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    classes: list[ClassId]
    curves: TrainingCurves

    def scores(self, features: np.ndarray) -> np.ndarray:
        x = (np.atleast_2d(features) - self.feature_mean) / self.feature_std
        logits, _ = _forward(self.params, x)
        return _softmax(logits)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.scores(features).argmax(axis=1)


def _class_order(labels: Sequence[ClassId]) -> list[ClassId]:
    seen: dict[int, ClassId] = {}
    for lab in labels:
        seen.setdefault(lab.index, lab)
    return [seen[i] for i in sorted(seen)]


def train_on_features(features: np.ndarray, labels: Sequence[ClassId],
                      cfg: NetConfig) -> Model:
    """Train the MLP on a feature matrix; deterministic given cfg.seed."""
    x = np.asarray(features, dtype=np.float64)
    classes = _class_order(labels)
    if len(classes) < 2:
        raise InputError(f"need at least 2 classes, got {len(classes)}")
    index_of = {c.index: i for i, c in enumerate(classes)}
    y = np.array([index_of[lab.index] for lab in labels])
    if x.shape[0] < cfg.batch_size:
        raise InputError(f"need at least batch_size={cfg.batch_size} samples, "
                         f"got {x.shape[0]}")
    if cfg.widths[0] != x.shape[1]:
        raise ArgumentError(f"input width {cfg.widths[0]} does not match feature "
                            f"dimension {x.shape[1]}")
    if cfg.widths[-1] != len(classes):
        raise ArgumentError(f"output width {cfg.widths[-1]} does not match class "
                            f"count {len(classes)}")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std

    if cfg.loss == "squared":
        targets = np.eye(len(classes))[y]
    else:
        targets = y

    params = _init_params(cfg)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    shuffle_rng = cfg.seed.substream("shuffle").generator()
    n = xs.shape[0]
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    if cfg.steps_per_epoch is not None:
        batches_per_epoch = min(batches_per_epoch, cfg.steps_per_epoch)
    curves = TrainingCurves(loss=[], accuracy=[])
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for b in range(batches_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            if idx.size == 0:
                break
            value, grads = _loss_and_grads(params, xs[idx], targets[idx], cfg.loss)
            if not np.isfinite(value):
                raise DataError(f"training diverged at epoch {epoch}: loss={value}")
            step += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= cfg.beta1
                mi += (1 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1 - cfg.beta2) * (g * g)
                m_hat = mi / (1 - cfg.beta1 ** step)
                v_hat = vi / (1 - cfg.beta2 ** step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
            epoch_loss += value * idx.size
            seen += idx.size
        logits, _ = _forward(params, xs)
        train_acc = float(np.mean(logits.argmax(axis=1) == y))
        curves.loss.append(epoch_loss / max(seen, 1))
        curves.accuracy.append(train_acc)
    return Model(config=cfg, params=params, feature_mean=mean, feature_std=std,
                 classes=classes, curves=curves)


def _features_of(samples: Sequence[FusedSample],
                 cache: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Featurize a sample list, batching same-shaped misses in one pass."""
    rows: list[np.ndarray | None] = []
    misses: list[int] = []
    for i, s in enumerate(samples):
        if cache is not None and s.id in cache:
            rows.append(cache[s.id])
        else:
            rows.append(None)
            misses.append(i)
    if misses:
        shapes = {samples[i].matrix.shape for i in misses}
        if len(shapes) == 1:
            fresh = featurize_batch(np.stack([samples[i].matrix for i in misses]))
        else:
            fresh = [featurize(samples[i].matrix) for i in misses]
        for row, i in zip(fresh, misses):
            rows[i] = row
            if cache is not None:
                cache[samples[i].id] = row
    return np.vstack(rows)


def train(train_samples: Sequence[FusedSample], cfg: NetConfig,
          cache: dict[str, np.ndarray] | None = None) -> Model:
    """Featurize a train split and fit the network."""
    features = _features_of(train_samples, cache)
    return train_on_features(features, [s.label for s in train_samples], cfg)


@dataclass
class Metrics:
    """Confusion-matrix-derived metrics plus per-class one-vs-rest AUC."""

    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    confusion: np.ndarray
    auc: list[float | None]
    class_names: list[str]

    def macro_f1(self) -> float:
        f1 = []
        for p, r in zip(self.precision, self.recall):
            f1.append(0.0 if p + r == 0 else 2 * p * r / (p + r))
        return float(np.mean(f1))

    def one_vs_rest_accuracy(self) -> np.ndarray:
        """Per-class (TP+TN)/total; reported alongside recall because
        'per-class accuracy' is ambiguous between the two."""
        total = self.confusion.sum()
        diag = np.diag(self.confusion)
        row = self.confusion.sum(axis=1)
        col = self.confusion.sum(axis=0)
        tn = total - row - col + diag
        return (diag + tn) / total

    def to_json(self) -> dict:
        ovr = self.one_vs_rest_accuracy()
        return {
            "accuracy": self.accuracy,
            "per_class": [{"name": n, "precision": float(p), "recall": float(r),
                           "ovr_accuracy": float(a)}
                          for n, p, r, a in zip(self.class_names, self.precision,
                                                self.recall, ovr)],
            "confusion": self.confusion.tolist(),
            "auc": [None if a is None else float(a) for a in self.auc],
            "macro_f1": self.macro_f1(),
        }


def _ranks_with_ties(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties averaged."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _auc_ovr(y_true: np.ndarray, scores: np.ndarray, cls: int) -> float | None:
    pos = y_true == cls
    n_pos = int(pos.sum())
    n_neg = y_true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _ranks_with_ties(scores[:, cls])
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def metrics_from_scores(y_true: np.ndarray, scores: np.ndarray,
                        classes: Sequence[ClassId]) -> Metrics:
    """Build Metrics from dense class indices and per-class scores."""
    c = len(classes)
    y_pred = scores.argmax(axis=1)
    confusion = np.zeros((c, c), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[t, p] += 1
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    diag = np.diag(confusion)
    precision = np.divide(diag, col, out=np.zeros(c, dtype=np.float64), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros(c, dtype=np.float64), where=row > 0)
    auc = [_auc_ovr(y_true, scores, k) for k in range(c)]
    return Metrics(accuracy=accuracy, precision=precision, recall=recall,
                   confusion=confusion, auc=auc,
                   class_names=[cls.name for cls in classes])


def evaluate(model: Model, test_samples: Sequence[FusedSample],
             cache: dict[str, np.ndarray] | None = None) -> Metrics:
    """Score a test split and derive all metrics."""
    if not test_samples:
        raise InputError("empty test set")
    features = _features_of(test_samples, cache)
    index_of = {c.index: i for i, c in enumerate(model.classes)}
    try:
        y_true = np.array([index_of[s.label.index] for s in test_samples])
    except KeyError as exc:
        raise InputError(f"test label {exc} never seen in training") from exc
    scores = model.scores(features)
    return metrics_from_scores(y_true, scores, model.classes)


def cross_validate(samples: Sequence[FusedSample], cfg: NetConfig, folds: int = 5,
                   ) -> tuple[list[Metrics], dict]:
    """Stratified k-fold CV over a sample pool; per-fold metrics plus
    mean/std aggregates."""
    if folds < 2:
        raise ArgumentError(f"need at least 2 folds, got {folds}")
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.label.index, []).append(i)
    for k, idx in sorted(by_class.items()):
        if len(idx) < folds:
            name = samples[idx[0]].label.name
            raise InputError(f"class {name!r} has {len(idx)} samples, fewer than "
                             f"{folds} folds")
    rng = cfg.seed.substream("folds").generator()
    assignment = np.empty(len(samples), dtype=np.int64)
    for k in sorted(by_class):
        idx = np.array(by_class[k])
        perm = rng.permutation(idx.size)
        assignment[idx[perm]] = np.arange(idx.size) % folds

    cache: dict[str, np.ndarray] = {}
    features = _features_of(samples, cache)
    labels = [s.label for s in samples]
    classes = _class_order(labels)
    index_of = {c.index: i for i, c in enumerate(classes)}
    y = np.array([index_of[lab.index] for lab in labels])

    per_fold: list[Metrics] = []
    for f in range(folds):
        test_mask = assignment == f
        model = train_on_features(features[~test_mask],
                                  [labels[i] for i in np.flatnonzero(~test_mask)], cfg)
        scores = model.scores(features[test_mask])
        per_fold.append(metrics_from_scores(y[test_mask], scores, classes))
    accs = np.array([m.accuracy for m in per_fold])
    f1s = np.array([m.macro_f1() for m in per_fold])
    summary = {"folds": folds,
               "mean_accuracy": float(accs.mean()), "std_accuracy": float(accs.std()),
               "mean_macro_f1": float(f1s.mean()), "std_macro_f1": float(f1s.std())}
    return per_fold, summary


def _as_samples(records: Sequence[EcgRecord]) -> list[FusedSample]:
    return [FusedSample(matrix=r.leads, label=r.label, source_id=r.id,
                        library_index=-1, id=r.id) for r in records]


def _oversample(records: Sequence[EcgRecord]) -> list[EcgRecord]:
    """Duplicate-oversample every class up to the majority count by cycling
    records in order."""
    by_class: dict[int, list[EcgRecord]] = {}
    for r in records:
        by_class.setdefault(r.label.index, []).append(r)
    target = max(len(v) for v in by_class.values())
    out: list[EcgRecord] = []
    for k in sorted(by_class):
        pool = by_class[k]
        for i in range(target):
            out.append(pool[i % len(pool)])
    return out


def compare_augmentation(manifest: DatasetManifest, config: FusionConfig,
                         cfg: NetConfig) -> dict:
    """Three-arm study on one manifest: imbalanced raw, naive duplicate
    oversampling, and the wavelet-fusion rebalanced pipeline.

    All arms share the same held-out test records (the pipeline's test
    originals; the rebalanced arm sees them fused with its test library,
    which is that arm's test-time protocol).
    """
    records, _ = cleanse_records(manifest.iter_records())
    by_class: dict[int, list[EcgRecord]] = {}
    for r in records:
        by_class.setdefault(r.label.index, []).append(r)
    counts = {k: len(v) for k, v in by_class.items()}
    minority = min(sorted(counts), key=lambda k: counts[k])

    n, selected = select_balanced(by_class, config.seed)
    fb = bior13()
    class_ids = {k: recs[0].label for k, recs in selected.items()}
    train_fused: list[FusedSample] = []
    test_fused: list[FusedSample] = []
    for k in sorted(selected):
        cls_train, cls_test, _ = rebalance_class(selected[k], config, fb, class_ids[k])
        train_fused.extend(cls_train)
        test_fused.extend(cls_test)

    test_ids = {s.source_id for s in test_fused}
    raw_test = [r for r in records if r.id in test_ids]
    raw_train = [r for r in records if r.id not in test_ids]

    cache: dict[str, np.ndarray] = {}
    arms = {
        "imbalanced": (_as_samples(raw_train), _as_samples(raw_test)),
        "oversampled": (_as_samples(_oversample(raw_train)), _as_samples(raw_test)),
        "rebalanced": (train_fused, test_fused),
    }
    report: dict = {"counts": {str(k): counts[k] for k in sorted(counts)},
                    "minority_class": class_ids[minority].name,
                    "n": n, "arms": {}}
    minority_pos = sorted(counts).index(minority)
    for name, (train_split, test_split) in arms.items():
        model = train(train_split, cfg, cache)
        metrics = evaluate(model, test_split, cache)
        report["arms"][name] = {
            "train_size": len(train_split),
            "test_source_ids": sorted({s.source_id for s in test_split}),
            "per_class_recall": [float(r) for r in metrics.recall],
            "per_class_precision": [float(p) for p in metrics.precision],
            "macro_f1": metrics.macro_f1(),
            "accuracy": metrics.accuracy,
            "minority_recall": float(metrics.recall[minority_pos]),
        }
    report["minority_recall_delta"] = (report["arms"]["rebalanced"]["minority_recall"]
                                       - report["arms"]["imbalanced"]["minority_recall"])
    return report
