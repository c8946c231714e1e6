"""The conv + recurrent embedding network, its forward passes, and checkpoints."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .codec import OneHotMatrix, stack_onehot
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    ConfigError,
    PreconditionError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from .nn import LSTM, BiLSTM, Conv1D, Dense, MaxPool1D, ReLU, out_length, softmax


@dataclass(frozen=True)
class ModelConfig:
    max_len: int = 600
    conv1_kernel: int = 3
    conv1_stride: int = 3
    conv1_filters: int = 26
    conv2_kernel: int = 13
    conv2_stride: int = 1
    conv2_filters: int = 64
    pool_kernel: int = 7
    pool_stride: int = 7
    bilstm_dim_per_dir: int = 64
    embedding_dim: int = 64
    num_classes: int = 10
    seed: int = 0

    def strided_layers(self):
        return [
            ("conv1", self.conv1_kernel, self.conv1_stride),
            ("conv2", self.conv2_kernel, self.conv2_stride),
            ("maxpool", self.pool_kernel, self.pool_stride),
        ]

    def step_chain(self, length: int) -> list[int]:
        """Step counts after conv1, conv2 and the pool for an input of ``length``."""
        chain = []
        n = length
        for name, k, s in self.strided_layers():
            if n < k:
                raise ConfigError(f"{name}: input of {n} steps shorter than kernel {k}")
            n = int(out_length(n, k, s))
            chain.append(n)
        return chain

    def min_input_length(self) -> int:
        for L in range(1, self.max_len + 1):
            try:
                self.step_chain(L)
            except ConfigError:
                continue
            return L
        # report the layer that fails at max_len
        self.step_chain(self.max_len)
        raise AssertionError("unreachable")

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "seed" and v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        self.step_chain(self.max_len)
        return self

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            k, _, v = line.partition("=")
            if k not in known:
                raise ConfigError(f"unknown model config key {k!r}")
            kw[k] = int(v)
        return cls(**kw)


PAPER_PRESET = ModelConfig(
    max_len=4500, conv1_kernel=3, conv1_stride=3, conv1_filters=26,
    conv2_kernel=26, conv2_stride=1, conv2_filters=320, pool_kernel=13, pool_stride=13,
    bilstm_dim_per_dir=320, embedding_dim=256, num_classes=30,
)
DESK_PRESET = ModelConfig()
PRESETS = {"paper": PAPER_PRESET, "desk": DESK_PRESET}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


@dataclass
class BatchResult:
    """Outputs for the examples that could be processed.

    ``index`` gives each output row's position in the submitted batch;
    ``errors`` maps skipped positions to a message.
    """

    outputs: np.ndarray
    index: list[int]
    errors: dict[int, str]


class EmbedNet:
    """conv1 -> ReLU -> conv2 -> ReLU -> maxpool -> BiLSTM -> LSTM -> [dense head]."""

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        self.min_input_length = config.min_input_length()
        c = config
        g = rngmod.stream(c.seed, rngmod.INIT)
        self.conv1 = Conv1D(c.conv1_kernel, 4, c.conv1_filters, c.conv1_stride, rng=g, name="conv1")
        self.conv1.input_grad = False  # one-hot input is not trainable
        self.relu1 = ReLU()
        self.conv2 = Conv1D(c.conv2_kernel, c.conv1_filters, c.conv2_filters, c.conv2_stride,
                            rng=g, name="conv2")
        self.relu2 = ReLU()
        self.pool = MaxPool1D(c.pool_kernel, c.pool_stride, name="maxpool")
        self.bilstm = BiLSTM(c.conv2_filters, c.bilstm_dim_per_dir, rng=g, name="bilstm")
        self.lstm = LSTM(2 * c.bilstm_dim_per_dir, c.embedding_dim, return_all=False, rng=g,
                         name="lstm")
        self.head = Dense(c.embedding_dim, c.num_classes, rng=g, name="head")
        self._seq = [self.conv1, self.relu1, self.conv2, self.relu2, self.pool, self.bilstm]

    def parameters(self) -> dict:
        out = {}
        for lname in ("conv1", "conv2", "bilstm", "lstm", "head"):
            for pname, p in getattr(self, lname).parameters().items():
                out[f"{lname}.{pname}"] = p
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    # -- batched array interface ------------------------------------------

    def embed_arrays(self, x, lens):
        """Embedding for a ``(B, T, 4)`` batch; caches activations for backward."""
        lens = np.asarray(lens)
        if np.any(lens < self.min_input_length):
            raise PreconditionError(
                f"sequence shorter than min_input_length {self.min_input_length}")
        for layer in self._seq:
            x, lens = layer.forward(x, lens)
        return self.lstm.forward(x, lens)

    def logits_arrays(self, x, lens):
        return self.head.forward(self.embed_arrays(x, lens))

    def backward(self, dlogits=None, dembed=None):
        """Backpropagate from logits (and/or directly from the embedding)."""
        d = np.zeros((0,))
        if dlogits is not None:
            d = self.head.backward(dlogits)
        if dembed is not None:
            d = d + dembed if d.size else dembed
        d = self.lstm.backward(d)
        for layer in reversed(self._seq):
            d = layer.backward(d)
        return d

    # -- OneHotMatrix list interface --------------------------------------

    def _run(self, batch, fn, batch_size):
        ok, errors = [], {}
        for i, m in enumerate(batch):
            if m.valid_len < self.min_input_length:
                errors[i] = (f"example {i}: valid length {m.valid_len} < "
                             f"min_input_length {self.min_input_length}")
            else:
                ok.append(i)
        outs = []
        for s in range(0, len(ok), batch_size):
            chunk = ok[s : s + batch_size]
            x, lens = stack_onehot([batch[i] for i in chunk])
            outs.append(fn(x, lens))
        width = self.config.num_classes if fn == self._probs else self.config.embedding_dim
        arr = np.concatenate(outs) if outs else np.zeros((0, width))
        return BatchResult(arr, ok, errors)

    def _probs(self, x, lens):
        return softmax(self.logits_arrays(x, lens))

    def forward_logits(self, batch: list[OneHotMatrix], batch_size: int = 64) -> BatchResult:
        """Class probabilities per example (rows sum to one)."""
        return self._run(batch, self._probs, batch_size)

    def forward_embedding(self, batch: list[OneHotMatrix], batch_size: int = 64) -> BatchResult:
        """Final-LSTM hidden state at the last valid step, unnormalized."""
        return self._run(batch, self.embed_arrays, batch_size)

    def predict(self, batch, batch_size: int = 64):
        res = self.forward_logits(batch, batch_size)
        return np.argmax(res.outputs, axis=1) if len(res.index) else np.zeros(0, int), res


def build(config: ModelConfig) -> EmbedNet:
    return EmbedNet(config)


# --------------------------------------------------------------------------
# checkpoints
#
# layout: magic(4) version(u32) payload_len(u64) payload checksum(u64)
# payload: config_len(u32) config_text n_tensors(u32)
#          { name_len(u16) name ndim(u8) dims(u32 * ndim) float32 data }*
# checksum: blake2b-64 of payload. All integers little-endian.

MAGIC = b"SQE1"
VERSION = 1


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def save_checkpoint(net: EmbedNet, path):
    parts = []
    cfg = net.config.to_text().encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    params = net.parameters()
    parts.append(struct.pack("<I", len(params)))
    for name, p in params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        shape = p.value.shape
        parts.append(struct.pack("<B", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(p.value.astype("<f4").tobytes())
    payload = b"".join(parts)
    blob = MAGIC + struct.pack("<IQ", VERSION, len(payload)) + payload + struct.pack(
        "<Q", _checksum(payload))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> EmbedNet:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise TruncatedCheckpointError(f"{path}: file too short ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    version, plen = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {VERSION}")
    if len(data) < 16 + plen + 8:
        raise TruncatedCheckpointError(f"{path}: truncated (need {16 + plen + 8} bytes, have {len(data)})")
    payload = data[16 : 16 + plen]
    (stored,) = struct.unpack_from("<Q", data, 16 + plen)
    if stored != _checksum(payload):
        raise ChecksumMismatchError(f"{path}: checksum mismatch")
    off = 0
    (clen,) = struct.unpack_from("<I", payload, off)
    off += 4
    config = ModelConfig.from_text(payload[off : off + clen].decode("utf-8"))
    off += clen
    net = EmbedNet(config)
    params = net.parameters()
    (n,) = struct.unpack_from("<I", payload, off)
    off += 4
    if n != len(params):
        raise ConfigError(f"{path}: {n} tensors stored, architecture needs {len(params)}")
    for _ in range(n):
        (nlen,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", payload, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        if name not in params or params[name].value.shape != tuple(shape):
            raise ConfigError(f"{path}: unexpected tensor {name!r} with shape {tuple(shape)}")
        params[name].value[...] = arr.astype(np.float64)
    return net


def round_to_float32(net: EmbedNet):
    """Round every parameter to float32 precision in place (what a checkpoint stores)."""
    for p in net.parameters().values():
        p.value[...] = p.value.astype(np.float32).astype(np.float64)
