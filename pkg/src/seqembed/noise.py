"""Test-time perturbations: per-base substitution and contiguous deletion."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .codec import DnaSequence
from .datagen import _substitute
from .errors import PreconditionError


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    p: float
    codon_aligned: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("substitution", "deletion"):
            raise PreconditionError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise PreconditionError(f"p={self.p} outside [0, 1]")
        if self.kind == "deletion" and self.p >= 1.0:
            raise PreconditionError("deletion requires p < 1")

    def apply(self, seq: DnaSequence, rng) -> DnaSequence:
        if self.kind == "substitution":
            return substitute(seq, self.p, rng)
        return delete_segment(seq, self.p, self.codon_aligned, rng)


def substitute(seq: DnaSequence, p: float, rng) -> DnaSequence:
    """Flip each base with probability ``p`` to one of the other three bases."""
    if not 0.0 <= p <= 1.0:
        raise PreconditionError(f"p={p} outside [0, 1]")
    return DnaSequence(seq.id, _substitute(seq.bases, p, rng))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def deletion_length(n: int, p: float, codon_aligned: bool) -> int:
    if codon_aligned:
        return 3 * _round_half_up(p * n / 3)
    return _round_half_up(p * n)


def delete_segment(seq: DnaSequence, p: float, codon_aligned: bool, rng) -> DnaSequence:
    """Remove one contiguous run of about ``p * len`` bases.

    In codon-aligned mode the run starts at a multiple of 3 and its length is
    rounded to the nearest multiple of 3, so downstream codons keep their frame.
    """
    if not 0.0 <= p < 1.0:
        raise PreconditionError(f"p={p} outside [0, 1)")
    n = len(seq)
    d = deletion_length(n, p, codon_aligned)
    if d == 0:
        return seq
    if d >= n:
        raise PreconditionError(f"sequence {seq.id!r}: deleting {d} of {n} bases leaves nothing")
    last = n - d
    if codon_aligned:
        start = 3 * int(rng.integers(0, last // 3 + 1))
    else:
        start = int(rng.integers(0, last + 1))
    return DnaSequence(seq.id, seq.bases[:start] + seq.bases[start + d :])
