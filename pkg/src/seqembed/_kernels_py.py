"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, or when
``SEQEMBED_PURE_PYTHON=1`` is set. Signatures match the extension exactly.
"""

import numpy as np


def _sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell_forward(z, c_prev):
    """Fused gate nonlinearities and cell update.

    ``z`` is the (B, 4H) pre-activation in gate order input, forget,
    candidate, output. Returns ``(gates, c, tanh_c, h)`` where ``gates`` holds
    the activated gates in the same layout as ``z``.
    """
    H = c_prev.shape[1]
    gates = np.empty_like(z)
    gates[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
    gates[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
    gates[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    g = gates[:, 2 * H : 3 * H]
    o = gates[:, 3 * H :]
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return gates, c, tc, h


def lstm_cell_backward(dh, dc, gates, c_prev, tc):
    """Backward of :func:`lstm_cell_forward`. Returns ``(dz, dc_prev)``."""
    H = c_prev.shape[1]
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    g = gates[:, 2 * H : 3 * H]
    o = gates[:, 3 * H :]
    dc_total = dc + dh * o * (1.0 - tc * tc)
    dz = np.empty_like(gates)
    dz[:, :H] = dc_total * g * i * (1.0 - i)
    dz[:, H : 2 * H] = dc_total * c_prev * f * (1.0 - f)
    dz[:, 2 * H : 3 * H] = dc_total * i * (1.0 - g * g)
    dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
    return dz, dc_total * f


def squared_distances(vectors, query):
    """Squared Euclidean distance from ``query`` to every row of ``vectors``.

    Accumulates coordinates left to right so results are independent of the
    number of rows.
    """
    out = np.zeros(vectors.shape[0], dtype=np.float64)
    for j in range(vectors.shape[1]):
        diff = vectors[:, j] - query[j]
        out += diff * diff
    return out


def col2im_add(dcols, stride, t_in):
    """Scatter-add ``(B, Tp, K, C)`` window gradients back onto ``(B, t_in, C)``."""
    B, Tp, K, C = dcols.shape
    dx = np.zeros((B, t_in, C))
    for k in range(K):
        dx[:, k : k + stride * (Tp - 1) + 1 : stride] += dcols[:, :, k]
    return dx
