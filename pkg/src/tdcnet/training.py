"""SGD training with a step learning-rate schedule, per-class average
precision evaluation, and coefficient-distribution dumps."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DataError, DimensionError, NonFiniteError, VariantError

LOSS_MODES = ("single-label", "multi-label")


@dataclass
class TrainConfig:
    lr0: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_drop_factor: float = 0.1
    lr_drop_every: int = 32
    max_epochs: int = 40
    batch_size: int = 12
    seed: int = 0
    loss_mode: str = "single-label"

    def __post_init__(self):
        if self.lr0 <= 0 or self.lr_drop_every <= 0 or self.batch_size <= 0:
            raise DataError("learning rate, drop interval and batch size must be positive")
        if not 0 < self.lr_drop_factor <= 1:
            raise DataError(f"lr_drop_factor must be in (0, 1], got {self.lr_drop_factor}")
        if self.loss_mode not in LOSS_MODES:
            raise DataError(f"loss_mode must be one of {LOSS_MODES}")

    def lr_at(self, epoch):
        return self.lr0 * self.lr_drop_factor ** (epoch // self.lr_drop_every)

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("lr0", "momentum", "weight_decay", "lr_drop_factor", "lr_drop_every",
                 "max_epochs", "batch_size", "seed", "loss_mode")}


def loss(logits: Tensor, label, mode="single-label") -> Tensor:
    """Scalar training loss: softmax cross-entropy or mean per-class logistic."""
    if mode == "single-label":
        return ad.cross_entropy_logits(logits, int(label))
    return ad.multilabel_logistic_loss(logits, label)


class SgdOptimizer:
    """Momentum SGD: v <- mu*v - lr*(g + wd*p); p <- p + v."""

    def __init__(self, params, momentum, weight_decay):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.values) for p in self.params]

    def step(self, lr):
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else 0.0
            v *= self.momentum
            v -= lr * (g + self.weight_decay * p.values)
            p.values = p.values + v


def train(model, train_samples, cfg: TrainConfig, test_samples=None,
          eval_every=1, log_fn=None):
    """Train in place; returns the per-epoch log as a list of dicts.

    Deterministic for a fixed config: the shuffle order comes from cfg.seed
    alone. test mAP is computed every `eval_every` epochs (0 = never) when
    test samples are given. `log_fn` receives each epoch record as produced.
    """
    if not train_samples:
        raise DataError("training set is empty")
    params = model.parameters()
    names = [n for n, _ in model.named_parameters()]
    opt = SgdOptimizer(params, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    log = []
    for epoch in range(cfg.max_epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(train_samples))
        total_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grad()
            try:
                with Tape() as tape:
                    batch_loss = None
                    for sample in batch:
                        term = loss(model.forward(sample), sample.label, cfg.loss_mode)
                        batch_loss = term if batch_loss is None else ad.add(batch_loss, term)
                    batch_loss = ad.scale(batch_loss, 1.0 / len(batch))
                ad.backward(batch_loss, tape, params=params)
            except NonFiniteError as e:
                worst = max(zip((float(np.abs(p.values).max()) for p in params), names))
                raise NonFiniteError(
                    f"training diverged at epoch {epoch}, batch {start // cfg.batch_size}: "
                    f"{e}; largest parameter {worst[1]} with max |value| {worst[0]:.3e}"
                ) from None
            total_loss += batch_loss.item() * len(batch)
            opt.step(lr)
        record = {"epoch": epoch, "lr": lr,
                  "train_loss": total_loss / len(train_samples)}
        if test_samples and eval_every and (epoch + 1) % eval_every == 0:
            record["test_mAP"] = evaluate(model, test_samples,
                                          model.config.num_classes).mean_ap
        if log_fn is not None:
            log_fn(record)
        log.append(record)
    return log


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def average_precision(scores, positives):
    """AP with a stable descending sort; ties keep original index order."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives).astype(bool)
    if scores.shape != positives.shape:
        raise DimensionError(f"scores ({scores.shape}) vs positives "
                             f"({positives.shape}) length mismatch")
    if not positives.any():
        raise DataError("average_precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    precision_at = np.cumsum(hits)[ranks - 1] / ranks
    return float(precision_at.mean())


@dataclass
class EvalReport:
    per_class_ap: dict          # class index -> AP, absent if no positives
    mean_ap: float
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
                "mAP": self.mean_ap, "meta": self.meta}


def evaluate(model, samples, num_classes, meta=None) -> EvalReport:
    """Per-class AP over all samples and their mean; read-only on the model."""
    if not samples:
        raise DataError("evaluation set is empty")
    scores = np.zeros((len(samples), num_classes))
    labels = np.zeros((len(samples), num_classes), dtype=bool)
    for i, s in enumerate(samples):
        scores[i] = model.forward(s).values.reshape(-1)
        if isinstance(s.label, int):
            labels[i, s.label] = True
        else:
            labels[i] = np.asarray(s.label) > 0.5
    per_class = {}
    for c in range(num_classes):
        if not labels[:, c].any():
            warnings.warn(f"class {c} has no positives; excluded from mAP")
            continue
        per_class[c] = average_precision(scores[:, c], labels[:, c])
    mean_ap = float(np.mean(list(per_class.values())))
    return EvalReport(per_class, mean_ap, meta or {})


# ---------------------------------------------------------------------------
# coefficient inspection
# ---------------------------------------------------------------------------

@dataclass
class CoefficientDump:
    """Class-averaged channel coefficients and adjacent-width differences.

    means: (class, block, width, channel) -> mean coefficient
    diffs: (class, block, "w2-w1", channel) -> difference of means
    """

    kernel_widths: tuple
    means: dict
    diffs: dict

    def blocks(self):
        return sorted({k[1] for k in self.means})


def _block_label(key):
    kind, name = key
    return name if kind == "in" else f"{kind}:{name}"


def dump_coefficients(model, samples, num_classes) -> CoefficientDump:
    """Average each block's channel coefficients per class over `samples`."""
    if not model.has_tdc:
        raise VariantError("the baseline variant has no dynamic convolution "
                           "coefficients to inspect")
    widths = model.config.kernel_widths
    sums, counts = {}, {}
    for s in sorted(samples, key=lambda s: s.id):
        capture = {}
        model.forward(s, capture=capture)
        label = s.label if isinstance(s.label, int) else int(np.argmax(s.label))
        for key, coeffs in capture.items():
            block = _block_label(key)
            slot = (label, block)
            if slot not in sums:
                sums[slot] = np.zeros_like(coeffs["a_k"])
                counts[slot] = 0
            sums[slot] += coeffs["a_k"]
            counts[slot] += 1
    means, diffs = {}, {}
    for (label, block), total in sums.items():
        avg = total / counts[(label, block)]  # (channels, J)
        for j, w in enumerate(widths):
            for c in range(avg.shape[0]):
                means[(label, block, w, c)] = float(avg[c, j])
        for j in range(1, len(widths)):
            pair = f"{widths[j]}-{widths[j - 1]}"
            for c in range(avg.shape[0]):
                diffs[(label, block, pair, c)] = float(avg[c, j] - avg[c, j - 1])
    return CoefficientDump(widths, means, diffs)


def write_coefficient_csvs(dump: CoefficientDump, means_path, diffs_path):
    with open(means_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "concept_type", "width", "channel", "mean_coeff"])
        for key in sorted(dump.means):
            writer.writerow([*key, repr(dump.means[key])])
    with open(diffs_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "concept_type", "width_pair", "channel", "diff"])
        for key in sorted(dump.diffs):
            writer.writerow([*key, repr(dump.diffs[key])])
