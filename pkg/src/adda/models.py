"""Digit-classification architectures and checkpoint serialization.

Three fixed networks: a small two-conv encoder producing 500-d features
(28 -> 24 -> 12 -> 8 -> 4 spatially, then 800 -> 500), a one-layer affine
classifier over those features, and a three-layer MLP discriminator that
scores feature vectors with a single logit.

Checkpoints are a simple little-endian binary container: magic ``ADDA``,
a u16 format version, a length-prefixed fingerprint of layer names and
shapes, a length-prefixed JSON metadata blob, then the flat float32
payload. Loading verifies the fingerprint before reading any floats.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DimensionError, FormatError, ValidationError
from .tensor import Parameter, Tensor, conv2d, linear, maxpool2, relu, reshape

CHECKPOINT_MAGIC = b"ADDA"
CHECKPOINT_VERSION = 1

# layer tables: (name, shape); order defines the payload layout
ENCODER_LAYOUT = (
    ("conv1.weight", (20, 1, 5, 5)),
    ("conv1.bias", (20,)),
    ("conv2.weight", (50, 20, 5, 5)),
    ("conv2.bias", (50,)),
    ("fc.weight", (500, 800)),
    ("fc.bias", (500,)),
)
CLASSIFIER_LAYOUT = (
    ("fc.weight", (10, 500)),
    ("fc.bias", (10,)),
)
DISCRIMINATOR_LAYOUT = (
    ("fc1.weight", (500, 500)),
    ("fc1.bias", (500,)),
    ("fc2.weight", (500, 500)),
    ("fc2.bias", (500,)),
    ("fc3.weight", (1, 500)),
    ("fc3.bias", (1,)),
)

_LAYOUTS = {
    "encoder": ENCODER_LAYOUT,
    "classifier": CLASSIFIER_LAYOUT,
    "discriminator": DISCRIMINATOR_LAYOUT,
}


def _glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    if len(shape) == 4:  # conv: fan counts include the receptive field
        recept = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * recept, shape[0] * recept
    else:
        fan_in, fan_out = shape[1], shape[0]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


class _Model:
    """Base for the three architectures: a named, ordered parameter bag."""

    ARCH = ""
    LAYOUT: tuple = ()

    def __init__(self, params: dict[str, Parameter]):
        expected = [name for name, _ in self.LAYOUT]
        if list(params) != expected:
            raise ValidationError(f"{self.ARCH}: expected layers {expected}, got {list(params)}")
        for name, shape in self.LAYOUT:
            if params[name].shape != shape:
                raise DimensionError(
                    f"{self.ARCH}.{name}: expected shape {shape}, got {params[name].shape}"
                )
        self._params = params

    @classmethod
    def init(cls, seed: int, dtype=np.float32) -> "_Model":
        """Glorot-uniform weights, zero biases, fully determined by seed."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        params = {}
        for name, shape in cls.LAYOUT:
            if name.endswith(".bias"):
                data = np.zeros(shape, dtype=dtype)
            else:
                data = _glorot_uniform(rng, shape, dtype)
            params[name] = Parameter(data, name=f"{cls.ARCH}.{name}")
        return cls(params)

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True

    def copy(self, frozen: bool = False) -> "_Model":
        cloned = {
            name: p.copy(frozen=frozen) for name, p in self._params.items()
        }
        return type(self)(cloned)

    def state_bytes(self) -> bytes:
        """Concatenated raw parameter bytes; handy for bit-identity checks."""
        return b"".join(p.data.tobytes() for p in self.parameters())


class Encoder(_Model):
    """conv1 -> relu -> pool -> conv2 -> relu -> pool -> flatten -> fc -> relu."""

    ARCH = "encoder"
    LAYOUT = ENCODER_LAYOUT
    PARAM_COUNT = 426_070
    FEATURE_DIM = 500

    def forward(self, batch: Tensor) -> Tensor:
        if batch.data.ndim != 4 or batch.shape[1:] != (1, 28, 28):
            raise DimensionError(f"encoder: expected N,1,28,28 input, got {batch.shape}")
        h = relu(conv2d(batch, self["conv1.weight"], self["conv1.bias"]))
        h = maxpool2(h)
        h = relu(conv2d(h, self["conv2.weight"], self["conv2.bias"]))
        h = maxpool2(h)
        h = reshape(h, (batch.shape[0], 800))
        return relu(linear(h, self["fc.weight"], self["fc.bias"]))

    __call__ = forward


class Classifier(_Model):
    """Single affine map from 500-d features to 10 logits."""

    ARCH = "classifier"
    LAYOUT = CLASSIFIER_LAYOUT
    PARAM_COUNT = 5_010

    def forward(self, features: Tensor) -> Tensor:
        if features.data.ndim != 2 or features.shape[1] != 500:
            raise DimensionError(f"classifier: expected N,500 features, got {features.shape}")
        return linear(features, self["fc.weight"], self["fc.bias"])

    __call__ = forward


class Discriminator(_Model):
    """500 -> 500 -> 500 -> 1 MLP returning one raw logit per example."""

    ARCH = "discriminator"
    LAYOUT = DISCRIMINATOR_LAYOUT
    PARAM_COUNT = 501_501

    def forward(self, features: Tensor) -> Tensor:
        if features.data.ndim != 2 or features.shape[1] != 500:
            raise DimensionError(f"discriminator: expected N,500 features, got {features.shape}")
        h = relu(linear(features, self["fc1.weight"], self["fc1.bias"]))
        h = relu(linear(h, self["fc2.weight"], self["fc2.bias"]))
        return linear(h, self["fc3.weight"], self["fc3.bias"])

    __call__ = forward


_ARCHS = {"encoder": Encoder, "classifier": Classifier, "discriminator": Discriminator}


def init_weights(seed: int, arch: str, dtype=np.float32) -> _Model:
    """Seed-deterministic fresh model of the named architecture."""
    if arch not in _ARCHS:
        raise ValidationError(f"unknown architecture {arch!r}; choose from {sorted(_ARCHS)}")
    return _ARCHS[arch].init(seed, dtype=dtype)


def _fingerprint(model: _Model) -> str:
    parts = [model.ARCH]
    parts += [f"{name}:{','.join(map(str, shape))}" for name, shape in model.LAYOUT]
    return "|".join(parts)


def save_checkpoint(model: _Model, metadata: dict | None = None) -> bytes:
    """Serialize a model to bytes; payload is little-endian float32."""
    for p in model.parameters():
        if p.data.dtype != np.float32:
            raise ValidationError("checkpoints store float32 parameters; cast the model first")
    fp = _fingerprint(model).encode("utf-8")
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    payload = b"".join(p.data.astype("<f4", copy=False).tobytes() for p in model.parameters())
    head = CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION)
    return head + struct.pack("<I", len(fp)) + fp + struct.pack("<I", len(meta)) + meta + payload


def header_size(model: _Model, metadata: dict | None = None) -> int:
    """Byte length of everything before the float payload."""
    fp = _fingerprint(model).encode("utf-8")
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    return 4 + 2 + 4 + len(fp) + 4 + len(meta)


def load_checkpoint(blob: bytes, expected_arch: str | None = None) -> tuple[_Model, dict]:
    """Parse checkpoint bytes back into a model plus its metadata.

    The fingerprint is validated against the known layer tables (and
    ``expected_arch`` when given) before any parameter bytes are read.
    """
    if len(blob) < 10 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad-magic", "not a checkpoint file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError("bad-version", f"got {version}, expected {CHECKPOINT_VERSION}")
    off = 6
    (fp_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    fp = blob[off : off + fp_len].decode("utf-8", errors="replace")
    off += fp_len
    if off + 4 > len(blob):
        raise FormatError("truncated", "metadata length missing")
    (meta_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    meta_raw = blob[off : off + meta_len]
    off += meta_len

    arch = fp.split("|", 1)[0]
    cls = _ARCHS.get(arch)
    if cls is None or fp != _fingerprint(cls):
        raise FormatError("bad-fingerprint", f"unrecognized architecture table {fp[:60]!r}")
    if expected_arch is not None and arch != expected_arch:
        raise FormatError("bad-fingerprint", f"expected {expected_arch}, found {arch}")

    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError("truncated", f"metadata unreadable: {e}") from None

    count = sum(int(np.prod(shape)) for _, shape in cls.LAYOUT)
    if len(blob) - off != 4 * count:
        raise FormatError(
            "truncated", f"payload is {len(blob) - off} bytes, expected {4 * count}"
        )
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=off).astype(np.float32)
    params = {}
    pos = 0
    for name, shape in cls.LAYOUT:
        n = int(np.prod(shape))
        params[name] = Parameter(flat[pos : pos + n].reshape(shape).copy(), name=f"{arch}.{name}")
        pos += n
    return cls(params), metadata
