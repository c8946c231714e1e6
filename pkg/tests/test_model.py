import numpy as np
import pytest

from seqembed.codec import DnaSequence, encode_onehot
from seqembed.errors import (
    BadMagicError,
    ChecksumMismatchError,
    ConfigError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from seqembed.model import (
    DESK_PRESET,
    PAPER_PRESET,
    EmbedNet,
    ModelConfig,
    load_checkpoint,
    preset,
    save_checkpoint,
)
from seqembed.nn import grad_check

from .conftest import random_dna


@pytest.fixture(scope="module")
def desk_net():
    return EmbedNet(DESK_PRESET)


def _mats(rng, lengths, max_len=600):
    return [encode_onehot(random_dna(rng, n, f"s{i}"), max_len) for i, n in enumerate(lengths)]


def test_full_preset_chain_and_min_length():
    assert PAPER_PRESET.step_chain(4500) == [1500, 1475, 113]
    assert PAPER_PRESET.min_input_length() == 114
    assert PAPER_PRESET.step_chain(114)[-1] == 1


def test_desk_builds_and_min_length(desk_net):
    assert desk_net.min_input_length == DESK_PRESET.min_input_length()
    assert DESK_PRESET.step_chain(600) == [200, 188, 26]


def test_infeasible_config_names_layer():
    with pytest.raises(ConfigError, match="maxpool"):
        ModelConfig(max_len=60, pool_kernel=40).validate()
    with pytest.raises(ConfigError, match="conv2_filters"):
        ModelConfig(conv2_filters=0).validate()
    with pytest.raises(ConfigError):
        preset("huge")


def test_config_text_round_trip():
    cfg = preset("paper", seed=9)
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_text("bogus=1\n")


def test_probabilities_and_identical_inputs(desk_net, rng):
    m = _mats(rng, [150])[0]
    res = desk_net.forward_logits([m, m, m])
    np.testing.assert_allclose(res.outputs.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_array_equal(res.outputs[0], res.outputs[1])
    emb = desk_net.forward_embedding([m, m]).outputs
    assert emb.shape == (2, 64)
    assert np.linalg.norm(emb[0] - emb[1]) == 0.0


def test_padding_extended_duplicate(desk_net, rng):
    seq = random_dna(rng, 200)
    a = desk_net.forward_logits([encode_onehot(seq, 200)]).outputs
    b = desk_net.forward_logits([encode_onehot(seq, 600)]).outputs
    np.testing.assert_array_equal(a, b)


def test_short_example_is_reported_not_fatal(desk_net, rng):
    mats = _mats(rng, [150, 20, 160])
    res = desk_net.forward_embedding(mats)
    assert res.index == [0, 2]
    assert list(res.errors) == [1]
    assert "min_input_length" in res.errors[1]


def test_full_preset_embedding_width():
    net = EmbedNet(preset("paper"))
    m = encode_onehot(DnaSequence("x", "ACG" * 40), 4500)
    assert net.forward_embedding([m]).outputs.shape == (1, 256)


def test_head_is_off_the_embedding_path(rng):
    net = EmbedNet(DESK_PRESET)
    mats = _mats(rng, [130, 170])
    before = net.forward_embedding(mats).outputs
    net.head.weight.value += rng.normal(size=net.head.weight.value.shape)
    np.testing.assert_array_equal(net.forward_embedding(mats).outputs, before)


def test_end_to_end_gradient(rng):
    net = EmbedNet(DESK_PRESET)
    from seqembed.codec import stack_onehot

    x, lens = stack_onehot(_mats(rng, [90, 120]))
    R = rng.normal(size=(2, 10))

    def f(backward):
        z = net.logits_arrays(x, lens)
        if backward:
            net.backward(R)
        return float(np.sum(z * R))

    rep = grad_check(f, net.parameters(), tolerance=1e-4, max_elements=6)
    assert rep.passed, rep.failures


# -- checkpoints ----------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, rng):
    net = EmbedNet(preset("desk", num_classes=30, seed=4))
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.config.num_classes == 30
    save_checkpoint(back, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
    mats = _mats(rng, [140, 300])
    a = load_checkpoint(path).forward_embedding(mats).outputs
    np.testing.assert_array_equal(a, back.forward_embedding(mats).outputs)


@pytest.mark.parametrize(
    "mutate,err",
    [
        (lambda b: b"XXXX" + b[4:], BadMagicError),
        (lambda b: b[:4] + (7).to_bytes(4, "little") + b[8:], VersionMismatchError),
        (lambda b: b[:-100], TruncatedCheckpointError),
        (lambda b: b[:8], TruncatedCheckpointError),
        (lambda b: b[:500] + bytes([b[500] ^ 1]) + b[501:], ChecksumMismatchError),
    ],
)
def test_checkpoint_corruption(tmp_path, mutate, err):
    path = tmp_path / "m.ckpt"
    save_checkpoint(EmbedNet(DESK_PRESET), path)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(err):
        load_checkpoint(path)
