import numpy as np
import pytest

from seqembed import _kernels_py, kernels

compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                              reason="compiled kernels not built")


def test_backend_selected():
    assert kernels.BACKEND in kernels.available_backends()


@compiled
def test_lstm_cell_backends_agree(rng):
    c_mod = kernels.get_backend("compiled")
    z = rng.normal(size=(5, 12)) * 3
    c_prev = rng.normal(size=(5, 3))
    a = _kernels_py.lstm_cell_forward(z, c_prev)
    b = c_mod.lstm_cell_forward(z, c_prev)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-15)
    dh, dc = rng.normal(size=(2, 5, 3))
    gates, _, tc, _ = a
    for x, y in zip(_kernels_py.lstm_cell_backward(dh, dc, gates, c_prev, tc),
                    c_mod.lstm_cell_backward(dh, dc, gates, c_prev, tc)):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-15)


@compiled
def test_col2im_and_distances_agree_exactly(rng):
    c_mod = kernels.get_backend("compiled")
    dcols = rng.normal(size=(2, 6, 3, 4))
    np.testing.assert_array_equal(_kernels_py.col2im_add(dcols, 2, 14), c_mod.col2im_add(dcols, 2, 14))
    v = rng.normal(size=(100, 17))
    q = rng.normal(size=17)
    np.testing.assert_array_equal(_kernels_py.squared_distances(v, q), c_mod.squared_distances(v, q))


def test_col2im_matches_loop(rng):
    dcols = rng.normal(size=(1, 4, 3, 2))
    out = np.zeros((1, 10, 2))
    for t in range(4):
        out[0, 2 * t : 2 * t + 3] += dcols[0, t]
    np.testing.assert_allclose(kernels.col2im_add(dcols, 2, 10), out, rtol=1e-15)


@compiled
def test_training_gradients_agree_across_backends():
    from seqembed.codec import encode_onehot, stack_onehot
    from seqembed.model import DESK_PRESET, EmbedNet
    from seqembed.nn import softmax_cross_entropy, softmax_xent_grad

    from .conftest import random_dna

    rng = np.random.default_rng(0)
    x, lens = stack_onehot([encode_onehot(random_dna(rng, n), 600) for n in (150, 240)])
    y = np.array([1, 4])
    grads = {}
    for name in ("python", "compiled"):
        net = EmbedNet(DESK_PRESET)
        with kernels.use_backend(name):
            _, p = softmax_cross_entropy(net.logits_arrays(x, lens), y)
            net.backward(softmax_xent_grad(p, y))
        grads[name] = {k: v.grad.copy() for k, v in net.parameters().items()}
    for k, g in grads["python"].items():
        np.testing.assert_allclose(grads["compiled"][k], g, rtol=1e-9, atol=1e-13)
