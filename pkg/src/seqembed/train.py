"""Class-balanced batch sampling and the cross-entropy training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .codec import LabeledDataset, LabeledRecord, LengthPolicy, encode_onehot, stack_onehot
from .errors import DatasetError, PreconditionError
from .model import EmbedNet, save_checkpoint
from .nn import Adam, softmax_cross_entropy, softmax_xent_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 100
    steps: int = 2000
    lr: float = 0.001
    seed: int = 0
    eval_every: int = 0
    checkpoint_path: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise PreconditionError("batch_size must be >= 1")
        if self.steps < 0:
            raise PreconditionError("steps must be >= 0")


class EncodingCache:
    """One-hot encodings keyed by record id, computed on first use."""

    def __init__(self, max_len: int, policy=LengthPolicy.REJECT):
        self.max_len = max_len
        self.policy = policy
        self._cache: dict[str, object] = {}

    def get(self, rec: LabeledRecord):
        m = self._cache.get(rec.id)
        if m is None:
            m = encode_onehot(rec.sequence, self.max_len, self.policy)
            self._cache[rec.id] = m
        return m

    def batch(self, records):
        x, lens = stack_onehot([self.get(r) for r in records])
        y = np.array([r.class_index for r in records])
        return x, lens, y


def _by_class(records, num_classes: int) -> list[list[LabeledRecord]]:
    groups: list[list[LabeledRecord]] = [[] for _ in range(num_classes)]
    for r in records:
        groups[r.class_index].append(r)
    return groups


def sample_batch(ds: LabeledDataset, batch_size: int, rng, groups=None) -> list[LabeledRecord]:
    """Draw a class uniformly, then a record uniformly within it, ``batch_size`` times."""
    if groups is None:
        records = ds.train if ds.split is not None else ds.records
        groups = _by_class(records, ds.num_classes)
    for c, g in enumerate(groups):
        if not g:
            raise DatasetError(f"class {ds.labels[c]!r} has no training records")
    classes = rng.integers(0, len(groups), batch_size)
    picks = [int(rng.integers(0, len(groups[c]))) for c in classes]
    return [groups[c][i] for c, i in zip(classes, picks)]


def train_step(net: EmbedNet, batch, optimizer: Adam, cache: EncodingCache | None = None) -> float:
    """One Adam update on ``batch`` (records or an ``(x, lens, y)`` tuple). Returns mean loss."""
    if not len(batch):
        raise PreconditionError("empty batch")
    if isinstance(batch, tuple):
        x, lens, y = batch
    else:
        cache = cache or EncodingCache(net.config.max_len)
        x, lens, y = cache.batch(batch)
    logits = net.logits_arrays(x, lens)
    losses, probs = softmax_cross_entropy(logits, y)
    net.backward(softmax_xent_grad(probs, y) / len(y))
    optimizer.step()
    return float(np.mean(losses))


def eval_accuracy(net: EmbedNet, records, cache: EncodingCache | None = None,
                  batch_size: int = 64) -> float:
    pred, truth = predict_records(net, records, cache, batch_size)
    return float(np.mean(pred == truth))


def predict_records(net: EmbedNet, records, cache: EncodingCache | None = None,
                    batch_size: int = 64):
    """Argmax predictions and true class indices for ``records``."""
    if not records:
        raise PreconditionError("no records to evaluate")
    cache = cache or EncodingCache(net.config.max_len)
    res = net.forward_logits([cache.get(r) for r in records], batch_size)
    if res.errors:
        raise PreconditionError(next(iter(res.errors.values())))
    truth = np.array([r.class_index for r in records])
    return np.argmax(res.outputs, axis=1), truth


@dataclass
class LogEntry:
    step: int
    loss: float
    test_acc: float | None = None

    def tsv(self) -> str:
        acc = "" if self.test_acc is None else f"{self.test_acc:.6f}"
        return f"{self.step}\t{self.loss:.9g}\t{acc}"


@dataclass
class TrainLog:
    entries: list[LogEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def losses(self):
        return [e.loss for e in self.entries]

    def tsv(self) -> str:
        return "".join(e.tsv() + "\n" for e in self.entries)


def fit(net: EmbedNet, ds: LabeledDataset, cfg: TrainConfig, progress=None) -> TrainLog:
    """Run ``cfg.steps`` balanced-batch Adam steps.

    Every ``eval_every`` steps the test accuracy is logged and, if a
    checkpoint path is set, the network is saved atomically.
    """
    out = TrainLog()
    if cfg.steps == 0:
        return out
    train_recs = ds.train if ds.split is not None else ds.records
    test_recs = ds.test if ds.split is not None else []
    groups = _by_class(train_recs, ds.num_classes)
    sampler = rngmod.stream(cfg.seed, rngmod.SAMPLER)
    opt = Adam(list(net.parameters().values()), lr=cfg.lr)
    cache = EncodingCache(net.config.max_len)
    logfh = open(cfg.log_path, "w", encoding="utf-8") if cfg.log_path else None
    try:
        for step in range(1, cfg.steps + 1):
            batch = sample_batch(ds, cfg.batch_size, sampler, groups)
            loss = train_step(net, batch, opt, cache)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at step {step}")
            entry = LogEntry(step, loss)
            if cfg.eval_every and (step % cfg.eval_every == 0 or step == cfg.steps):
                if test_recs:
                    entry.test_acc = eval_accuracy(net, test_recs, cache)
                if cfg.checkpoint_path:
                    save_checkpoint(net, cfg.checkpoint_path)
                log.info("step %d loss %.4f test_acc %s", step, loss, entry.test_acc)
            out.entries.append(entry)
            if logfh:
                logfh.write(entry.tsv() + "\n")
                logfh.flush()
            if progress:
                progress(entry)
    finally:
        if logfh:
            logfh.close()
    if cfg.checkpoint_path and not cfg.eval_every:
        save_checkpoint(net, cfg.checkpoint_path)
    return out


def read_log(path) -> TrainLog:
    out = TrainLog()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        step, loss, acc = line.split("\t")
        out.entries.append(LogEntry(int(step), float(loss), float(acc) if acc else None))
    return out
