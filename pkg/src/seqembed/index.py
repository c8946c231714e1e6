"""Embedding database, exact Euclidean k-NN, and the evaluation protocols."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from . import rng as rngmod
from .codec import LabeledRecord
from .errors import IngestionError, PreconditionError, ProtocolError
from .noise import NoiseSpec
from .train import EncodingCache, predict_records

DEFAULT_NS = (1, 10, 20, 50)


@dataclass(frozen=True)
class Neighbor:
    id: str
    label: str
    distance: float
    position: int


class QueryResult(list):
    """Neighbors in ascending distance; ties keep database insertion order."""

    @property
    def ids(self):
        return [n.id for n in self]


class EmbeddingDatabase:
    """Ordered ``(id, label, vector)`` entries searched by brute force."""

    def __init__(self, dim: int, ids=(), labels=(), vectors=None):
        self.dim = int(dim)
        self.ids: list[str] = list(ids)
        self.labels: list[str] = list(labels)
        if vectors is None:
            vectors = np.zeros((0, dim))
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float64).reshape(-1, dim)
        if not (len(self.ids) == len(self.labels) == self.vectors.shape[0]):
            raise PreconditionError("ids, labels and vectors disagree in length")
        if len(set(self.ids)) != len(self.ids):
            raise PreconditionError("database ids must be unique")
        self.skipped: dict[str, str] = {}

    def __len__(self):
        return len(self.ids)

    def add(self, id_: str, label: str, vector):
        v = np.asarray(vector, dtype=np.float64).reshape(1, -1)
        if v.shape[1] != self.dim:
            raise PreconditionError(f"vector of dim {v.shape[1]} in a dim-{self.dim} database")
        if id_ in self.ids:
            raise PreconditionError(f"duplicate id {id_!r}")
        self.ids.append(id_)
        self.labels.append(label)
        self.vectors = np.vstack([self.vectors, v])


def build_db(net, records, batch_size: int = 64, cache: EncodingCache | None = None
             ) -> EmbeddingDatabase:
    """Embed every record. Records that cannot be encoded are skipped and listed in ``skipped``."""
    cache = cache or EncodingCache(net.config.max_len)
    mats, kept, skipped = [], [], {}
    for r in records:
        try:
            mats.append(cache.get(r))
            kept.append(r)
        except ValueError as e:
            skipped[r.id] = str(e)
    res = net.forward_embedding(mats, batch_size)
    for pos, msg in res.errors.items():
        skipped[kept[pos].id] = msg
    ok = [kept[i] for i in res.index]
    db = EmbeddingDatabase(net.config.embedding_dim, [r.id for r in ok],
                           [r.class_label for r in ok], res.outputs)
    db.skipped = skipped
    return db


def rank_all(vectors, query) -> tuple[np.ndarray, np.ndarray]:
    """Positions of all rows by ascending distance to ``query`` (stable) and the squared distances."""
    d2 = kernels.squared_distances(vectors, query)
    return np.argsort(d2, kind="stable"), d2


def knn_query(db: EmbeddingDatabase, query, k: int) -> QueryResult:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != db.dim:
        raise PreconditionError(f"query dim {q.shape[0]} != database dim {db.dim}")
    if not 1 <= k <= len(db):
        raise PreconditionError(f"k={k} outside [1, {len(db)}]")
    d2 = kernels.squared_distances(db.vectors, q)
    if k < len(db):
        # everything within the k-th smallest distance, then a stable sort
        kth = np.partition(d2, k - 1)[k - 1]
        cand = np.nonzero(d2 <= kth)[0]
        order = cand[np.argsort(d2[cand], kind="stable")][:k]
    else:
        order = np.argsort(d2, kind="stable")
    return QueryResult(Neighbor(db.ids[i], db.labels[i], float(np.sqrt(d2[i])), int(i))
                       for i in order)


# --------------------------------------------------------------------------
# recall


@dataclass
class RecallReport:
    recall: dict[int, float]
    num_pairs: int
    ranks: list[int] = field(default_factory=list)

    def tsv(self) -> str:
        lines = ["N\trecall\tnum_pairs"]
        lines += [f"{n}\t{r:.6f}\t{self.num_pairs}" for n, r in sorted(self.recall.items())]
        return "\n".join(lines) + "\n"


def partner_ranks(query_vecs, db_vecs) -> list[int]:
    """1-based rank of database row ``i`` when searching with query ``i``."""
    ranks = []
    for i, q in enumerate(np.asarray(query_vecs, dtype=np.float64)):
        order, _ = rank_all(db_vecs, q)
        ranks.append(int(np.nonzero(order == i)[0][0]) + 1)
    return ranks


def recall_from_ranks(ranks, ns=DEFAULT_NS) -> RecallReport:
    ranks = np.asarray(ranks)
    return RecallReport({int(n): float(np.mean(ranks <= n)) for n in ns}, len(ranks), ranks.tolist())


def recall_at_n(net, heldout_pairs, ns=DEFAULT_NS, batch_size: int = 64) -> RecallReport:
    """Query with the first record of each pair; the second records form the database."""
    labels = [q.class_label for q, _ in heldout_pairs]
    if len(set(labels)) != len(labels):
        raise ProtocolError("each class may contribute only one pair")
    for q, d in heldout_pairs:
        if q.class_label != d.class_label:
            raise ProtocolError(f"pair ({q.id}, {d.id}) mixes classes")
    cache = EncodingCache(net.config.max_len)
    qdb = build_db(net, [q for q, _ in heldout_pairs], batch_size, cache)
    ddb = build_db(net, [d for _, d in heldout_pairs], batch_size, cache)
    if qdb.skipped or ddb.skipped:
        raise ProtocolError(f"could not embed: {sorted({**qdb.skipped, **ddb.skipped})}")
    return recall_from_ranks(partner_ranks(qdb.vectors, ddb.vectors), ns)


def sample_pairs(records, rng) -> list[tuple[LabeledRecord, LabeledRecord]]:
    """One random (query, database) pair per class, classes in sorted-label order."""
    by_label: dict[str, list[LabeledRecord]] = {}
    for r in records:
        by_label.setdefault(r.class_label, []).append(r)
    pairs = []
    for lab in sorted(by_label):
        members = by_label[lab]
        if len(members) < 2:
            raise ProtocolError(f"class {lab!r} has fewer than two records")
        i, j = rng.choice(len(members), 2, replace=False)
        pairs.append((members[int(i)], members[int(j)]))
    return pairs


def repeated_recall(net, records, repetitions: int, seed: int, ns=DEFAULT_NS,
                    vectors: dict | None = None) -> list[RecallReport]:
    """Recall over ``repetitions`` independent pair draws, embedding each record once."""
    if vectors is None:
        db = build_db(net, records)
        vectors = dict(zip(db.ids, db.vectors))
    out = []
    for rep in range(repetitions):
        pairs = sample_pairs(records, rngmod.stream(seed, rngmod.PAIRS, rep))
        q = np.array([vectors[a.id] for a, _ in pairs])
        d = np.array([vectors[b.id] for _, b in pairs])
        out.append(recall_from_ranks(partner_ranks(q, d), ns))
    return out


# --------------------------------------------------------------------------
# classification reports


@dataclass
class ClassReport:
    accuracy: float
    confusion: np.ndarray
    labels: list[str]
    length_bins: list[tuple[float, float, int, float]]
    deviation_bins: list[tuple[float, float, int, float]]

    def confusion_tsv(self) -> str:
        head = "true\\pred\t" + "\t".join(self.labels)
        rows = [lab + "\t" + "\t".join(str(int(v)) for v in row)
                for lab, row in zip(self.labels, self.confusion)]
        return "\n".join([head] + rows) + "\n"

    @staticmethod
    def _bins_tsv(bins, name):
        lines = [f"{name}_lo\t{name}_hi\tcount\taccuracy"]
        for lo, hi, n, acc in bins:
            a = "" if n == 0 else f"{acc:.6f}"
            lines.append(f"{lo:.6g}\t{hi:.6g}\t{n}\t{a}")
        return "\n".join(lines) + "\n"

    def length_tsv(self):
        return self._bins_tsv(self.length_bins, "length")

    def deviation_tsv(self):
        return self._bins_tsv(self.deviation_bins, "abs_dev")

    def summary_tsv(self):
        return f"metric\tvalue\naccuracy\t{self.accuracy:.6f}\nn\t{int(self.confusion.sum())}\n"


def confusion_matrix(truth, pred, num_classes: int) -> np.ndarray:
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(truth), np.asarray(pred)), 1)
    return m


def binned_accuracy(values, correct, bins: int = 10):
    values = np.asarray(values, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    which = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
    out = []
    for b in range(bins):
        sel = which == b
        n = int(sel.sum())
        out.append((float(edges[b]), float(edges[b + 1]), n,
                    float(correct[sel].mean()) if n else float("nan")))
    return out


def report_from_predictions(truth, pred, lengths, labels, length_bins: int = 10) -> ClassReport:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    lengths = np.asarray(lengths, dtype=np.float64)
    cm = confusion_matrix(truth, pred, len(labels))
    correct = truth == pred
    means = {c: lengths[truth == c].mean() for c in np.unique(truth)}
    dev = np.abs(lengths - np.array([means[c] for c in truth]))
    return ClassReport(float(np.trace(cm) / cm.sum()), cm, list(labels),
                       binned_accuracy(lengths, correct, length_bins),
                       binned_accuracy(dev, correct, length_bins))


def classification_report(net, records, labels, length_bins: int = 10) -> ClassReport:
    pred, truth = predict_records(net, records)
    lengths = [len(r.sequence) for r in records]
    return report_from_predictions(truth, pred, lengths, labels, length_bins)


def block_error_share(cm: np.ndarray, a: int, b: int) -> float:
    """Share of the errors on classes ``a`` and ``b`` that land on the other of the two."""
    errors = cm[a].sum() - cm[a, a] + cm[b].sum() - cm[b, b]
    if errors == 0:
        return 1.0
    return float((cm[a, b] + cm[b, a]) / errors)


# --------------------------------------------------------------------------
# noise sweeps


def noise_sweep(net, records, kind: str, p_list, seed: int = 0, codon_aligned: bool = True,
                batch_size: int = 64) -> list[tuple[float, float]]:
    """Accuracy after perturbing every record at each noise level ``p``."""
    out = []
    for k, p in enumerate(p_list):
        spec = NoiseSpec(kind, p, codon_aligned, seed)
        rng = rngmod.stream(seed, rngmod.NOISE, k)
        noisy = [LabeledRecord(spec.apply(r.sequence, rng), r.class_label, r.class_index)
                 for r in records]
        pred, truth = predict_records(net, noisy, batch_size=batch_size)
        out.append((float(p), float(np.mean(pred == truth))))
    return out


def sweep_tsv(rows, kind: str) -> str:
    return "p\taccuracy\tkind\n" + "".join(f"{p:g}\t{a:.6f}\t{kind}\n" for p, a in rows)


# --------------------------------------------------------------------------
# embedding TSV


def export_embeddings(db: EmbeddingDatabase, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tlabel\t" + "\t".join(f"v{j + 1}" for j in range(db.dim)) + "\n")
        for id_, lab, v in zip(db.ids, db.labels, db.vectors):
            fh.write(f"{id_}\t{lab}\t" + "\t".join(repr(float(x)) for x in v) + "\n")


def load_embeddings(path) -> EmbeddingDatabase:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError("empty embeddings file", path, 1) from None
        if header[:2] != ["id", "label"]:
            raise IngestionError("header must start with id, label", path, 1)
        dim = len(header) - 2
        ids, labels, rows = [], [], []
        for lineno, row in enumerate(reader, 2):
            if len(row) != dim + 2:
                raise IngestionError(f"expected {dim + 2} columns, got {len(row)}", path, lineno)
            ids.append(row[0])
            labels.append(row[1])
            try:
                rows.append([float(x) for x in row[2:]])
            except ValueError as e:
                raise IngestionError(str(e), path, lineno) from None
    return EmbeddingDatabase(dim, ids, labels, np.array(rows) if rows else None)
