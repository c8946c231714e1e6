import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqembed.codec import DnaSequence
from seqembed.errors import PreconditionError
from seqembed.noise import NoiseSpec, delete_segment, deletion_length, substitute

from .conftest import random_dna


def codons(s, start=0):
    return [s[i : i + 3] for i in range(start, len(s) - 2, 3)]


def test_substitute_edges(rng):
    seq = random_dna(rng, 400)
    assert substitute(seq, 0.0, rng).bases == seq.bases
    out = substitute(seq, 1.0, rng)
    assert all(a != b for a, b in zip(seq.bases, out.bases))
    with pytest.raises(PreconditionError):
        substitute(seq, 1.5, rng)


def test_substitute_binomial(rng):
    seq = random_dna(rng, 1000)
    k = sum(a != b for a, b in zip(seq.bases, substitute(seq, 0.2, rng).bases))
    assert abs(k - 200) < 3 * math.sqrt(1000 * 0.2 * 0.8)


def test_substitute_targets_uniform(rng):
    seq = DnaSequence("a", "A" * 30000)
    out = substitute(seq, 1.0, rng).bases
    counts = np.array([out.count(b) for b in "CGT"])
    assert np.all(np.abs(counts - 10000) < 3 * math.sqrt(30000 * (1 / 3) * (2 / 3)))


def test_delete_aligned_arithmetic(rng):
    seq = random_dna(rng, 300)
    assert delete_segment(seq, 0.0, True, rng).bases == seq.bases
    for _ in range(50):
        out = delete_segment(seq, 0.1, True, rng).bases
        assert len(out) == 270
        assert any(seq.bases[:s] + seq.bases[s + 30 :] == out for s in range(0, 271, 3))


def test_unaligned_deletion_shifts_frame():
    seq = DnaSequence("x", "ATGGCCAAATTTGGGCCCAAATTT")
    out = seq.bases[:4] + seq.bases[5:]
    assert codons(out)[2:] != codons(seq.bases)[2:]
    assert codons(out, 2)[1:] == codons(seq.bases, 3)[1:]


@given(st.integers(3, 600), st.floats(0, 0.95), st.booleans(), st.integers(0, 2**32 - 1))
def test_deletion_properties(n, p, aligned, seed):
    rng = np.random.default_rng(seed)
    seq = DnaSequence("x", "".join(rng.choice(list("ACGT"), n)))
    d = deletion_length(n, p, aligned)
    if d >= n:
        with pytest.raises(PreconditionError):
            delete_segment(seq, p, aligned, rng)
        return
    out = delete_segment(seq, p, aligned, rng).bases
    assert len(out) == n - d
    if aligned:
        assert d % 3 == 0
        ok = [s for s in range(0, n - d + 1, 3) if seq.bases[:s] + seq.bases[s + d :] == out]
        assert ok


def test_noise_spec_validation(rng):
    with pytest.raises(PreconditionError):
        NoiseSpec("insertion", 0.1)
    with pytest.raises(PreconditionError):
        NoiseSpec("deletion", 1.0)
    seq = random_dna(rng, 90)
    assert len(NoiseSpec("deletion", 0.1).apply(seq, rng)) == 81
