"""Synthetic gene families: shared codon-aligned motifs over a random prototype.

Each family has a prototype sequence with motifs planted at codon-aligned
positions. Members are mutated copies of the prototype. The background and
the motif regions mutate at separate rates so that the class signal can be
concentrated in the motifs, and each member may lose a random number of
whole codons from its 3' end (never reaching into the motif region), so that
sequence length is only loosely tied to family.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import rng as rngmod
from .codec import ALPHABET, DnaSequence, LabeledDataset
from .errors import DatasetError, GenerationError

_BASES = np.array(list(ALPHABET))
_LUT = np.full(256, -1, dtype=np.int64)
for _i, _b in enumerate(ALPHABET):
    _LUT[ord(_b)] = _i


@dataclass
class FamilySpec:
    family_id: int
    motifs: list[tuple[str, tuple[int, int]]]
    length_range: tuple[int, int]
    within_family_substitution_rate: float = 0.0
    motif_substitution_rate: float = 0.0
    length_jitter: float = 0.0

    def validate(self):
        if not 0.0 <= self.length_jitter < 1.0:
            raise GenerationError(f"family {self.family_id}: length_jitter outside [0, 1)")
        lo, hi = self.length_range
        if lo % 3 or hi % 3 or lo > hi or lo <= 0:
            raise GenerationError(f"family {self.family_id}: length_range {self.length_range} "
                                  "must be positive multiples of 3 with min <= max")
        for r in (self.within_family_substitution_rate, self.motif_substitution_rate):
            if not 0.0 <= r < 1.0:
                raise GenerationError(f"family {self.family_id}: rate {r} outside [0, 1)")
        for motif, (a, b) in self.motifs:
            if a % 3 or b % 3 or a > b:
                raise GenerationError(f"family {self.family_id}: anchor range {(a, b)} not codon-aligned")
            if b + len(motif) > lo:
                raise GenerationError(f"family {self.family_id}: motif at {b} does not fit in {lo} nt")
        return self


@dataclass
class GenSpec:
    num_families: int = 10
    sequences_per_family: int = 100
    motif_count: tuple[int, int] = (3, 5)
    motif_length: tuple[int, int] = (9, 15)
    length_range: tuple[int, int] = (420, 450)
    within_family_substitution_rate: float = 0.75
    motif_substitution_rate: float = 0.02
    length_jitter: float = 0.3
    motif_library_size: int = 20
    library_seed: int | None = None
    seed: int = 0
    first_family_id: int = 0

    def validate(self):
        for name in ("num_families", "sequences_per_family"):
            if getattr(self, name) <= 0:
                raise GenerationError(f"{name} must be positive")
        for name in ("motif_count", "motif_length", "length_range"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise GenerationError(f"{name} must be a positive (min, max) range, got {(lo, hi)}")
        lo, hi = self.length_range
        if lo % 3 or hi % 3:
            raise GenerationError("length_range bounds must be multiples of 3")
        if not 0.0 <= self.length_jitter < 1.0:
            raise GenerationError(f"length_jitter {self.length_jitter} outside [0, 1)")
        if self.motif_library_size < 0:
            raise GenerationError("motif_library_size must be >= 0")
        if 0 < self.motif_library_size < self.motif_count[1]:
            raise GenerationError(f"motif library of {self.motif_library_size} cannot supply "
                                  f"{self.motif_count[1]} distinct motifs")
        return self

    @classmethod
    def from_manifest(cls, text: str) -> "GenSpec":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key not in kinds:
                raise GenerationError(f"unknown manifest key {key!r}")
            kind = kinds[key]
            if "tuple" in kind:
                kw[key] = tuple(int(x) for x in value.split(","))
            elif value == "None":
                kw[key] = None
            elif "float" in kind:
                kw[key] = float(value)
            else:
                kw[key] = int(value)
        return cls(**kw)

    def manifest(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def heldout(self, seed: int, num_families: int | None = None,
                sequences_per_family: int | None = None) -> "GenSpec":
        """Same distribution (and motif library), new seed and disjoint family ids."""
        return replace(
            self, seed=seed,
            library_seed=self.seed if self.library_seed is None else self.library_seed,
            first_family_id=self.first_family_id + self.num_families + 100_000,
            num_families=num_families or self.num_families,
            sequences_per_family=sequences_per_family or self.sequences_per_family)


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _random_bases(rng, n: int) -> str:
    return "".join(_BASES[rng.integers(0, 4, n)])


def mutate_sequence(seq: DnaSequence, rate: float, rng, seq_id: str | None = None) -> DnaSequence:
    """Replace each base, with probability ``rate``, by one of the other three."""
    if not 0.0 <= rate < 1.0:
        raise GenerationError(f"mutation rate {rate} outside [0, 1)")
    return DnaSequence(seq_id or seq.id, _substitute(seq.bases, rate, rng))


def _substitute(bases: str, rate: float, rng, positions=None) -> str:
    codes = np.frombuffer(bases.encode("ascii"), dtype=np.uint8)
    idx = _LUT[codes]
    hit = rng.random(len(idx)) < rate
    shift = rng.integers(1, 4, len(idx))
    if positions is not None:
        hit &= positions
    hit &= idx >= 0  # ambiguous bases are left alone
    out = np.where(hit, (idx + shift) % 4, idx)
    chars = np.where(out >= 0, _BASES[np.clip(out, 0, 3)], "N")
    return "".join(chars)


def _motif_length(rng, length_range) -> int:
    return 3 * int(rng.integers(-(-length_range[0] // 3), length_range[1] // 3 + 1))


def motif_library(spec: "GenSpec") -> list[str]:
    """Shared motif vocabulary, a function of ``library_seed`` (or ``seed``) only."""
    seed = spec.seed if spec.library_seed is None else spec.library_seed
    rng = rngmod.stream(seed, rngmod.DATAGEN, 0xFFFF)
    return [_random_bases(rng, _motif_length(rng, spec.motif_length))
            for _ in range(spec.motif_library_size)]


def random_motifs(rng, count: int, length_range, min_len: int, library=None
                  ) -> list[tuple[str, tuple[int, int]]]:
    """Draw motifs and give each a disjoint codon-aligned anchor range within ``min_len``.

    With a ``library``, ``count`` distinct library motifs are used in random order.
    """
    if library:
        if count > len(library):
            raise GenerationError(f"{count} motifs requested from a library of {len(library)}")
        strings = [library[int(i)] for i in rng.choice(len(library), count, replace=False)]
    else:
        strings = [_random_bases(rng, _motif_length(rng, length_range)) for _ in range(count)]
    lens = [len(m) for m in strings]
    if sum(lens) > min_len:
        raise GenerationError(f"{count} motifs totalling {sum(lens)} nt cannot fit in {min_len} nt")
    slot = (min_len // count) // 3 * 3
    motifs = []
    for i, m in enumerate(lens):
        start = i * slot
        if m > slot:
            raise GenerationError(f"motif of {m} nt does not fit a {slot} nt slot")
        last = start + (slot - m) // 3 * 3
        motifs.append((strings[i], (start, last)))
    return motifs


@dataclass
class Family:
    spec: FamilySpec
    prototype: DnaSequence
    anchors: list[int] = field(default_factory=list)

    def motif_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.prototype), dtype=bool)
        for (motif, _), a in zip(self.spec.motifs, self.anchors):
            mask[a : a + len(motif)] = True
        return mask


def build_prototype(fs: FamilySpec, rng) -> Family:
    fs.validate()
    lo, hi = fs.length_range
    length = 3 * int(rng.integers(lo // 3, hi // 3 + 1))
    bases = list(_random_bases(rng, length))
    anchors = []
    taken = np.zeros(length, dtype=bool)
    for motif, (a, b) in fs.motifs:
        anchor = 3 * int(rng.integers(a // 3, b // 3 + 1))
        if taken[anchor : anchor + len(motif)].any():
            raise GenerationError(f"family {fs.family_id}: overlapping motif anchors")
        taken[anchor : anchor + len(motif)] = True
        bases[anchor : anchor + len(motif)] = motif
        anchors.append(anchor)
    proto = DnaSequence(f"proto{fs.family_id:04d}", "".join(bases))
    return Family(fs, proto, anchors)


def family_label(family_id: int) -> str:
    return f"family_{family_id:04d}"


def sample_members(fam: Family, n: int, rng) -> list[DnaSequence]:
    fs = fam.spec
    mask = fam.motif_mask()
    length = len(fam.prototype)
    motif_end = max((a + len(m) for (m, _), a in zip(fs.motifs, fam.anchors)), default=3)
    max_trim = min(int(fs.length_jitter * length) // 3, (length - max(motif_end, 3)) // 3)
    out = []
    for j in range(n):
        bases = _substitute(fam.prototype.bases, fs.within_family_substitution_rate, rng, ~mask)
        bases = _substitute(bases, fs.motif_substitution_rate, rng, mask)
        trim = 3 * int(rng.integers(0, max_trim + 1)) if max_trim > 0 else 0
        out.append(DnaSequence(f"fam{fs.family_id:04d}_{j:05d}", bases[: length - trim]))
    return out


def family_specs(spec: GenSpec) -> list[FamilySpec]:
    spec.validate()
    library = motif_library(spec)
    out = []
    for k in range(spec.num_families):
        fid = spec.first_family_id + k
        rng = rngmod.stream(spec.seed, rngmod.DATAGEN, fid, 0)
        count = int(rng.integers(spec.motif_count[0], spec.motif_count[1] + 1))
        # motifs live in the prefix that survives the largest 3' trim
        region = int(spec.length_range[0] * (1.0 - spec.length_jitter)) // 3 * 3
        motifs = random_motifs(rng, count, spec.motif_length, region, library)
        out.append(FamilySpec(fid, motifs, spec.length_range,
                              spec.within_family_substitution_rate, spec.motif_substitution_rate,
                              spec.length_jitter))
    return out


def generate_from_specs(specs: list[FamilySpec], per_family: int, seed: int):
    """Prototype and members for each family spec; deterministic in ``seed``."""
    pairs, families = [], []
    for fs in specs:
        rng = rngmod.stream(seed, rngmod.DATAGEN, fs.family_id, 1)
        fam = build_prototype(fs, rng)
        families.append(fam)
        for s in sample_members(fam, per_family, rng):
            pairs.append((s, family_label(fs.family_id)))
    return LabeledDataset.from_pairs(pairs), families


def generate_families(spec: GenSpec):
    """Return ``(dataset, families)`` for ``spec``."""
    ds, families = generate_from_specs(family_specs(spec), spec.sequences_per_family, spec.seed)
    ds.meta["manifest"] = spec.manifest()
    return ds, families


def split(ds: LabeledDataset, test_fraction: float, rng) -> LabeledDataset:
    """Stratified train/test split: ``max(1, floor(n * fraction))`` test members per class."""
    if not 0.0 <= test_fraction < 1.0:
        raise DatasetError(f"test_fraction {test_fraction} outside [0, 1)")
    by_class: dict[int, list[int]] = {}
    for i, r in enumerate(ds.records):
        by_class.setdefault(r.class_index, []).append(i)
    tags = ["train"] * len(ds.records)
    for c in sorted(by_class):
        members = by_class[c]
        if len(members) < 2:
            raise DatasetError(f"class {ds.labels[c]!r} has {len(members)} member(s); need >= 2")
        n_test = max(1, int(np.floor(len(members) * test_fraction)))
        for i in rng.choice(members, size=n_test, replace=False):
            tags[int(i)] = "test"
    return LabeledDataset(ds.records, ds.labels, tags, dict(ds.meta))
