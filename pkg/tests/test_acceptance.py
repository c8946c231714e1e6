"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``criterion N PASS|FAIL`` line to the terminal summary.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from seqembed import rng as rngmod
from seqembed.codec import encode_onehot, stack_onehot
from seqembed.datagen import GenSpec, family_specs, generate_from_specs, generate_families, split
from seqembed.index import (
    block_error_share,
    build_db,
    confusion_matrix,
    export_embeddings,
    knn_query,
    load_embeddings,
    noise_sweep,
    partner_ranks,
    recall_from_ranks,
    repeated_recall,
)
from seqembed.model import PAPER_PRESET, EmbedNet, load_checkpoint, preset, save_checkpoint
from seqembed.nn import (
    LSTM,
    BiLSTM,
    Conv1D,
    Dense,
    MaxPool1D,
    Parameter,
    ReLU,
    grad_check,
    softmax_cross_entropy,
    softmax_xent_grad,
)
from seqembed.train import TrainConfig, fit, predict_records

from .conftest import ACCEPTANCE_LINES, padded_batch, random_dna

pytestmark = pytest.mark.slow


def report(n, ok, detail):
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def train_desk(ds, steps, batch_size=32, seed=0):
    net = EmbedNet(preset("desk", num_classes=ds.num_classes, seed=seed))
    log = fit(net, ds, TrainConfig(batch_size=batch_size, steps=steps, seed=seed))
    return net, log


@pytest.fixture(scope="session")
def classifier():
    """Desk model trained on 10 families x 200 sequences (shared by criteria 4 and 8)."""
    ds, _ = generate_families(GenSpec(num_families=10, sequences_per_family=200, seed=101))
    ds = split(ds, 0.2, rngmod.stream(101, rngmod.SPLIT))
    t0 = time.perf_counter()
    net, _ = train_desk(ds, steps=2000, seed=1)
    return net, ds, time.perf_counter() - t0


@pytest.fixture(scope="session")
def recall_setup():
    """Desk model trained on 20 families plus 20 disjoint held-out families."""
    spec = GenSpec(num_families=20, sequences_per_family=100, seed=201)
    ds, _ = generate_families(spec)
    held, _ = generate_families(spec.heldout(seed=202, sequences_per_family=20))
    t0 = time.perf_counter()
    net, _ = train_desk(ds, steps=2000, seed=2)
    return net, held, time.perf_counter() - t0


# -- 1 ----------------------------------------------------------------------


def _seq_layer_check(layer, x, lens, rng):
    xp = Parameter(x)
    out = layer.forward(x, lens)
    R = rng.normal(size=(out[0] if isinstance(out, tuple) else out).shape)

    def f(backward):
        out = layer.forward(xp.value, lens)
        y = out[0] if isinstance(out, tuple) else out
        if backward:
            dx = layer.backward(R)
            if dx is not None:
                xp.grad += dx
        return float(np.sum(y * R))

    return grad_check(f, {**layer.parameters(), "input": xp}, tolerance=1e-5, max_elements=64)


def test_criterion_01_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}
    x, lens = padded_batch(rng, [13, 8], 14, 3)
    cases = {
        "conv1d": (Conv1D(3, 3, 4, stride=3, rng=rng), x, lens),
        "relu": (ReLU(), rng.normal(size=(2, 6, 3)), None),
        "maxpool": (MaxPool1D(3, 2), x, lens),
        "lstm": (LSTM(3, 2, rng=rng), x[:, :3], np.array([3, 2])),
        "lstm_seq": (LSTM(3, 2, return_all=True, rng=rng), x[:, :4], np.array([4, 3])),
        "bilstm": (BiLSTM(3, 2, rng=rng), x[:, :5], np.array([5, 3])),
    }
    ok = True
    for name, (layer, xi, li) in cases.items():
        if hasattr(layer, "bias"):
            layer.bias.value[...] = rng.normal(size=layer.bias.value.shape)
        rep = _seq_layer_check(layer, xi, li, rng)
        worst[name] = max(rep.max_rel_error.values())
        ok &= rep.passed

    dense = Dense(5, 3, rng=rng)
    dense.bias.value[...] = rng.normal(size=3)
    xp = Parameter(rng.normal(size=(2, 5)))
    y = np.array([0, 2])

    def fd(backward):
        loss, p = softmax_cross_entropy(dense.forward(xp.value), y)
        if backward:
            xp.grad += dense.backward(softmax_xent_grad(p, y))
        return float(loss.sum())

    rep = grad_check(fd, {**dense.parameters(), "x": xp}, tolerance=1e-5)
    worst["dense+softmax"] = max(rep.max_rel_error.values())
    ok &= rep.passed

    net = EmbedNet(preset("desk"))
    mats = [encode_onehot(random_dna(rng, n), 600) for n in (90, 130)]
    xb, lb = stack_onehot(mats)
    # a random linear readout keeps |f| small, which keeps finite-difference roundoff
    # below the tiniest sampled gradients; softmax is checked with the dense layer above
    R = rng.normal(size=(2, net.config.num_classes))

    def fn(backward):
        z = net.logits_arrays(xb, lb)
        if backward:
            net.backward(R)
        return float(np.sum(z * R))

    rep = grad_check(fn, net.parameters(), tolerance=1e-4, max_elements=8)
    e2e = max(rep.max_rel_error.values())
    ok &= rep.passed
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    layers = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(1, ok, f"per-layer max rel err [{layers}] < 1e-5; end-to-end {e2e:.1e} < 1e-4; "
                  f"{elapsed:.1f}s < 120s")


# -- 2 ----------------------------------------------------------------------


def test_criterion_02_masking_invariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    net = EmbedNet(preset("desk"))
    seqs = [random_dna(rng, int(n), f"m{i}") for i, n in enumerate(rng.integers(57, 601, 100))]
    short = [encode_onehot(s, 600) for s in seqs]
    long_ = [encode_onehot(s, 1000) for s in seqs]
    same = True
    for a, b in ((net.forward_embedding(short), net.forward_embedding(long_)),
                 (net.forward_logits(short), net.forward_logits(long_))):
        same &= np.array_equal(a.outputs, b.outputs)
    # raw padded arrays bypass the list interface's trimming
    for s in range(0, 100, 25):
        xa = np.stack([m.steps for m in short[s : s + 25]])
        xb = np.stack([m.steps for m in long_[s : s + 25]])
        lens = np.array([m.valid_len for m in short[s : s + 25]])
        same &= np.array_equal(net.embed_arrays(xa, lens), net.embed_arrays(xb, lens))
        same &= np.array_equal(net.logits_arrays(xa, lens), net.logits_arrays(xb, lens))
    elapsed = time.perf_counter() - t0
    report(2, same and elapsed < 60,
           f"100 sequences padded to 600 and 1000: embeddings and logits bitwise equal={same}; "
           f"{elapsed:.1f}s < 60s")


# -- 3 ----------------------------------------------------------------------


def test_criterion_03_shape_algebra():
    chain = PAPER_PRESET.step_chain(4500)
    net = EmbedNet(PAPER_PRESET)
    x = np.zeros((1, 4500, 4))
    x[0, np.arange(4500), np.arange(4500) % 4] = 1
    emb = net.embed_arrays(x, [4500])
    ok = chain == [1500, 1475, 113] and emb.shape == (1, 256)
    report(3, ok, f"paper preset chain {chain} (want [1500, 1475, 113]); embedding {emb.shape[1]}")


# -- 4 ----------------------------------------------------------------------


def test_criterion_04_classification(classifier):
    net, ds, elapsed = classifier
    pred, truth = predict_records(net, ds.test)
    acc = float(np.mean(pred == truth))
    report(4, acc >= 0.90 and elapsed < 900,
           f"10 families x 200, 2000 steps batch 32: test accuracy {acc:.3f} >= 0.90; "
           f"training {elapsed:.0f}s < 900s")


# -- 5 and 6 ---------------------------------------------------------------


def test_criterion_05_heldout_recall(recall_setup):
    net, held, elapsed = recall_setup
    t0 = time.perf_counter()
    reps = repeated_recall(net, held.records, 20, seed=205, ns=(1, 5))
    r1 = float(np.mean([r.recall[1] for r in reps]))
    r5 = float(np.mean([r.recall[5] for r in reps]))
    total = elapsed + time.perf_counter() - t0
    report(5, r1 >= 0.15 and r5 >= 0.5 and total < 1200,
           f"20 held-out families, 20 repetitions: mean recall@1 {r1:.3f} >= 0.15, "
           f"recall@5 {r5:.3f} >= 0.5; {total:.0f}s < 1200s")


def _null_sigma_of_mean(pairs=20, repetitions=20, sims=4000):
    """Std of the mean recall@1 over ``repetitions`` under random embeddings (Monte Carlo)."""
    rng = np.random.default_rng(6)
    hits = [recall_from_ranks(partner_ranks(*rng.normal(size=(2, pairs, 8))), ns=(1,)).recall[1]
            for _ in range(sims)]
    return float(np.std(hits)) / math.sqrt(repetitions)


def test_criterion_06_null_control(recall_setup):
    _, held, _ = recall_setup
    net = EmbedNet(preset("desk", num_classes=20, seed=2))
    reps = repeated_recall(net, held.records, 20, seed=205, ns=(1,))
    r1 = float(np.mean([r.recall[1] for r in reps]))
    sigma = _null_sigma_of_mean()
    report(6, abs(r1 - 0.05) <= 3 * sigma,
           f"untrained net: mean recall@1 {r1:.3f}, |r1 - 0.05| <= 3 sigma = {3 * sigma:.3f}")


# -- 7 ----------------------------------------------------------------------


def _naive(vectors, q, k):
    d = []
    for v in vectors:
        s = 0.0
        for a, b in zip(v.tolist(), q.tolist()):
            s += (a - b) * (a - b)
        d.append(s)
    return sorted(range(len(d)), key=lambda i: (d[i], i))[:k]


def test_criterion_07_knn_oracle():
    from seqembed.index import EmbeddingDatabase

    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = 0
    ties = 0
    for trial in range(1000):
        n = int(rng.integers(1, 201))
        d = int(rng.integers(1, 65))
        if trial % 2:
            vecs = rng.integers(-1, 2, size=(n, d)).astype(float)
            q = rng.integers(-1, 2, size=d).astype(float)
        else:
            vecs = rng.normal(size=(n, d))
            q = rng.normal(size=d)
            if n > 1:
                vecs[rng.integers(0, n, n // 4)] = vecs[0]  # duplicated rows tie exactly
        k = int(rng.integers(1, n + 1))
        db = EmbeddingDatabase(d, [str(i) for i in range(n)], ["x"] * n, vecs)
        got = [nb.position for nb in knn_query(db, q, k)]
        want = _naive(vecs, q, k)
        mismatches += got != want
        ties += len(np.unique(vecs, axis=0)) < n
    elapsed = time.perf_counter() - t0
    report(7, mismatches == 0 and elapsed < 60,
           f"1000 instances ({ties} with tied rows): {mismatches} mismatches vs naive full sort; "
           f"{elapsed:.1f}s < 60s")


# -- 8 ----------------------------------------------------------------------


def test_criterion_08_noise_sweeps(classifier):
    net, ds, _ = classifier
    t0 = time.perf_counter()
    sub = dict(noise_sweep(net, ds.test, "substitution", [0.05, 0.4], seed=8))
    aligned = noise_sweep(net, ds.test, "deletion", [0.1], seed=8, codon_aligned=True)[0][1]
    unaligned = noise_sweep(net, ds.test, "deletion", [0.1], seed=8, codon_aligned=False)[0][1]
    elapsed = time.perf_counter() - t0
    ok = sub[0.4] < sub[0.05] and aligned >= unaligned and elapsed < 600
    report(8, ok, f"substitution acc p=0.05 {sub[0.05]:.3f} > p=0.4 {sub[0.4]:.3f}; "
                  f"deletion p=0.1 aligned {aligned:.3f} >= unaligned {unaligned:.3f}; "
                  f"{elapsed:.0f}s")


# -- 9 ----------------------------------------------------------------------


def test_criterion_09_overlap_confusion():
    spec = GenSpec(num_families=6, sequences_per_family=120, seed=901)
    specs = family_specs(spec)
    # families 0 and 1 get the same motifs pinned to the same anchors: one distribution
    pinned = [(m, (a, a)) for m, (a, _) in specs[0].motifs]
    specs[0] = dataclasses.replace(specs[0], motifs=pinned)
    specs[1] = dataclasses.replace(specs[1], motifs=pinned)
    ds, _ = generate_from_specs(specs, spec.sequences_per_family, spec.seed)
    ds = split(ds, 0.25, rngmod.stream(901, rngmod.SPLIT))
    net, _ = train_desk(ds, steps=1000, seed=9)
    pred, truth = predict_records(net, ds.test)
    cm = confusion_matrix(truth, pred, ds.num_classes)
    a, b = 0, 1
    errors = int(cm[a].sum() - cm[a, a] + cm[b].sum() - cm[b, b])
    share = block_error_share(cm, a, b)
    report(9, errors > 0 and share >= 0.6,
           f"identical-motif pair: {errors} errors on the pair, "
           f"{share:.2f} of them inside the 2x2 block (>= 0.60)")


# -- 10 ---------------------------------------------------------------------


def _pipeline(tmp, tag):
    ds, _ = generate_families(GenSpec(num_families=4, sequences_per_family=30, seed=1001))
    ds = split(ds, 0.2, rngmod.stream(1001, rngmod.SPLIT))
    net = EmbedNet(preset("desk", num_classes=4, seed=3))
    log = fit(net, ds, TrainConfig(batch_size=16, steps=30, seed=3, eval_every=10,
                                   checkpoint_path=str(tmp / f"{tag}.ckpt"),
                                   log_path=str(tmp / f"{tag}.tsv")))
    return net, ds, log


def _rankings(db, queries):
    return [knn_query(db, q, len(db)).ids for q in queries]


def test_criterion_10_determinism_and_persistence(tmp_path):
    net_a, ds, log_a = _pipeline(tmp_path, "a")
    net_b, _, log_b = _pipeline(tmp_path, "b")
    same_run = (log_a.losses == log_b.losses
                and (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
                and (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes())

    db = build_db(net_a, ds.records)
    queries = db.vectors[::7] + 1e-3
    ckpt = tmp_path / "rt.ckpt"
    save_checkpoint(net_a, ckpt)
    reloaded = build_db(load_checkpoint(ckpt), ds.records)
    ckpt_ok = _rankings(reloaded, queries) == _rankings(db, queries)

    export_embeddings(db, tmp_path / "emb.tsv")
    back = load_embeddings(tmp_path / "emb.tsv")
    tsv_ok = np.array_equal(back.vectors, db.vectors) and _rankings(back, queries) == _rankings(db, queries)
    report(10, same_run and ckpt_ok and tsv_ok,
           f"rerun bit-identical={same_run}; checkpoint round trip keeps rankings={ckpt_ok}; "
           f"embedding TSV round trip keeps rankings={tsv_ok}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
