"""DNA sequences, one-hot encoding, and FASTA / label-file I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CodecError, IngestionError, SequenceLengthError
from .nn import MaskedSequence

ALPHABET = "ACGT"
_VALID = frozenset("ACGTN")
_INDEX = {b: i for i, b in enumerate(ALPHABET)}

PAPER_MAX_LEN = 4500
DESK_MAX_LEN = 600


class LengthPolicy(str, Enum):
    REJECT = "reject"
    TRUNCATE_CODON_BOUNDARY = "truncate_codon_boundary"


@dataclass(frozen=True)
class DnaSequence:
    id: str
    bases: str

    def __post_init__(self):
        bases = self.bases.upper()
        if not bases:
            raise CodecError(f"sequence {self.id!r} is empty")
        bad = set(bases) - _VALID
        if bad:
            raise CodecError(f"sequence {self.id!r} contains invalid symbols {sorted(bad)}")
        object.__setattr__(self, "bases", bases)

    def __len__(self):
        return len(self.bases)


@dataclass(frozen=True)
class LabeledRecord:
    sequence: DnaSequence
    class_label: str
    class_index: int

    @property
    def id(self):
        return self.sequence.id


@dataclass
class LabeledDataset:
    """Records plus the label dictionary and an optional train/test tag per record."""

    records: list[LabeledRecord]
    labels: list[str]
    split: list[str] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.records)

    def subset(self, tag: str) -> list[LabeledRecord]:
        if self.split is None:
            raise ValueError("dataset has no split tags")
        return [r for r, s in zip(self.records, self.split) if s == tag]

    @property
    def train(self):
        return self.subset("train")

    @property
    def test(self):
        return self.subset("test")

    @classmethod
    def from_pairs(cls, pairs, split=None) -> "LabeledDataset":
        """Build from ``(DnaSequence, label)`` pairs with sorted-label indexing."""
        pairs = list(pairs)
        labels = sorted({lab for _, lab in pairs})
        index = {lab: i for i, lab in enumerate(labels)}
        records = [LabeledRecord(s, lab, index[lab]) for s, lab in pairs]
        return cls(records, labels, None if split is None else list(split))


class OneHotMatrix(MaskedSequence):
    """``max_len x 4`` encoding in channel order A, C, G, T."""

    @property
    def max_len(self):
        return self.steps.shape[0]


def encode_onehot(seq: DnaSequence, max_len: int = DESK_MAX_LEN,
                  length_policy: LengthPolicy | str = LengthPolicy.REJECT) -> OneHotMatrix:
    if max_len < 1:
        raise CodecError("max_len must be >= 1")
    policy = LengthPolicy(length_policy)
    bases = seq.bases
    if len(bases) > max_len:
        if policy is LengthPolicy.REJECT:
            raise SequenceLengthError(seq.id, len(bases), max_len)
        bases = bases[: (max_len // 3) * 3]
        if not bases:
            raise SequenceLengthError(seq.id, len(seq.bases), max_len,
                                      f"sequence {seq.id!r}: max_len {max_len} leaves no whole codon")
    codes = np.frombuffer(bases.encode("ascii"), dtype=np.uint8)
    m = np.zeros((max_len, 4))
    for ch, col in _INDEX.items():
        rows = np.nonzero(codes == ord(ch))[0]
        m[rows, col] = 1.0
    return OneHotMatrix(m, len(bases))


def decode_onehot(m: MaskedSequence, seq_id: str = "decoded") -> DnaSequence:
    valid = m.steps[: m.valid_len]
    if valid.shape[0] == 0:
        raise CodecError("one-hot matrix has no valid rows")
    sums = valid.sum(axis=1)
    if np.any(sums > 1) or np.any((valid != 0) & (valid != 1)):
        bad = int(np.nonzero((sums > 1) | np.any((valid != 0) & (valid != 1), axis=1))[0][0])
        raise CodecError(f"row {bad} is not a one-hot row")
    out = np.full(valid.shape[0], "N")
    hot = sums == 1
    out[hot] = np.array(list(ALPHABET))[np.argmax(valid[hot], axis=1)]
    return DnaSequence(seq_id, "".join(out))


def stack_onehot(mats) -> tuple[np.ndarray, np.ndarray]:
    """Stack encodings into a ``(B, T, 4)`` batch, T being the longest valid length."""
    lens = np.array([m.valid_len for m in mats], dtype=np.int64)
    T = int(lens.max())
    x = np.zeros((len(mats), T, 4))
    for i, m in enumerate(mats):
        x[i, : m.valid_len] = m.steps[: m.valid_len]
    return x, lens


# --------------------------------------------------------------------------
# FASTA / labels


def read_fasta(path) -> list[DnaSequence]:
    path = Path(path)
    out: list[DnaSequence] = []
    seen: dict[str, int] = {}
    cur_id = None
    cur_line = 0
    chunks: list[str] = []

    def flush():
        if cur_id is None:
            return
        if not chunks:
            raise IngestionError(f"record {cur_id!r} has no sequence", path, cur_line)
        try:
            out.append(DnaSequence(cur_id, "".join(chunks)))
        except CodecError as e:
            raise IngestionError(str(e), path, cur_line) from e

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith(">"):
                flush()
                header = line[1:].strip()
                if not header:
                    raise IngestionError("empty FASTA header", path, lineno)
                cur_id = header.split()[0]
                if cur_id in seen:
                    raise IngestionError(
                        f"duplicate id {cur_id!r} (first seen at line {seen[cur_id]})", path, lineno)
                seen[cur_id] = lineno
                cur_line = lineno
                chunks = []
            else:
                if cur_id is None:
                    raise IngestionError("sequence data before first '>' header", path, lineno)
                chunks.append(line)
    flush()
    return out


def write_fasta(path, seqs, width: int = 60):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in seqs:
            fh.write(f">{s.id}\n")
            for i in range(0, len(s.bases), width):
                fh.write(s.bases[i : i + width] + "\n")


def read_labels(path) -> tuple[dict[str, str], dict[str, str]]:
    """Parse ``id<TAB>label[<TAB>split]`` lines. Returns (labels, splits)."""
    labels: dict[str, str] = {}
    splits: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
                raise IngestionError("expected 'id<TAB>label[<TAB>split]'", path, lineno)
            sid = parts[0]
            if sid in labels:
                raise IngestionError(f"duplicate id {sid!r} in label file", path, lineno)
            labels[sid] = parts[1]
            if len(parts) == 3:
                if parts[2] not in ("train", "test"):
                    raise IngestionError(f"split must be train or test, got {parts[2]!r}", path, lineno)
                splits[sid] = parts[2]
    return labels, splits


def load_dataset(fasta_path, labels_path) -> LabeledDataset:
    seqs = read_fasta(fasta_path)
    labels, splits = read_labels(labels_path)
    ids = {s.id for s in seqs}
    for sid in labels:
        if sid not in ids:
            raise IngestionError(f"label file names unknown id {sid!r}", labels_path)
    pairs = []
    for s in seqs:
        if s.id not in labels:
            raise IngestionError(f"no label for id {s.id!r}", labels_path)
        pairs.append((s, labels[s.id]))
    split = None
    if splits:
        missing = [s.id for s in seqs if s.id not in splits]
        if missing:
            raise IngestionError(f"split column missing for id {missing[0]!r}", labels_path)
        split = [splits[s.id] for s in seqs]
    return LabeledDataset.from_pairs(pairs, split)


def write_dataset(ds: LabeledDataset, fasta_path, labels_path):
    write_fasta(fasta_path, [r.sequence for r in ds.records])
    tmp = f"{labels_path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for i, r in enumerate(ds.records):
            row = [r.id, r.class_label]
            if ds.split is not None:
                row.append(ds.split[i])
            fh.write("\t".join(row) + "\n")
    os.replace(tmp, labels_path)
