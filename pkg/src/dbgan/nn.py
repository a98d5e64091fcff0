"""Encoder, generator and critic networks, Glorot init, Adam, checkpoints.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic  b"DBGANCKP"
    u32       format version (1)
    u32       metadata length L, then L bytes of UTF-8 JSON
    u32       tensor count
    per tensor:
        u16   name length, then the UTF-8 name (e.g. "encoder.0.weight")
        u8    ndim, then ndim x u64 dimensions
        f64   values in row-major order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import NormalizedAdjacency

CHECKPOINT_MAGIC = b"DBGANCKP"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "relu": ad.relu,
    "linear": lambda x: x,
    "sigmoid": ad.sigmoid,
}


class CheckpointError(ValueError):
    pass


@dataclass
class GcnLayer:
    weight: Tensor
    activation: str = "relu"


@dataclass
class Mlp:
    """Per-row critic: relu hidden layers, scalar linear output."""

    weights: List[Tensor]
    biases: List[Tensor]


@dataclass
class ModelParams:
    encoder: List[GcnLayer]
    generator: List[GcnLayer]
    d_z: Mlp
    d_x: Mlp

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.encoder[0].weight.shape[0]

    def named_tensors(self) -> List[Tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.encoder):
            out.append((f"encoder.{i}.weight", layer.weight))
        for i, layer in enumerate(self.generator):
            out.append((f"generator.{i}.weight", layer.weight))
        for tag, mlp in (("d_z", self.d_z), ("d_x", self.d_x)):
            for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                out.append((f"{tag}.{i}.weight", w))
                out.append((f"{tag}.{i}.bias", b))
        return out

    def group(self, name: str) -> List[Tensor]:
        prefix = name + "."
        return [t for n, t in self.named_tensors() if n.startswith(prefix)]

    def names(self) -> Dict[Tensor, str]:
        return {t: n for n, t in self.named_tensors()}

    def copy(self) -> "ModelParams":
        def gcn(layers):
            return [GcnLayer(Tensor(l.weight.data.copy(), True), l.activation) for l in layers]

        def mlp(m):
            return Mlp(
                [Tensor(w.data.copy(), True) for w in m.weights],
                [Tensor(b.data.copy(), True) for b in m.biases],
            )

        return ModelParams(gcn(self.encoder), gcn(self.generator), mlp(self.d_z), mlp(self.d_x))

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        def count(prefix):
            return len({k.split(".")[1] for k in arrays if k.startswith(prefix + ".")})

        def gcn(prefix, last):
            n = count(prefix)
            return [
                GcnLayer(
                    Tensor(arrays[f"{prefix}.{i}.weight"], True),
                    last if i == n - 1 else "relu",
                )
                for i in range(n)
            ]

        def mlp(prefix):
            n = count(prefix)
            return Mlp(
                [Tensor(arrays[f"{prefix}.{i}.weight"], True) for i in range(n)],
                [Tensor(arrays[f"{prefix}.{i}.bias"], True) for i in range(n)],
            )

        try:
            return cls(gcn("encoder", "linear"), gcn("generator", "sigmoid"), mlp("d_z"), mlp("d_x"))
        except KeyError as exc:
            raise CheckpointError(f"checkpoint is missing tensor {exc}") from None


def glorot_init(shape: Tuple[int, int], seed=None) -> np.ndarray:
    """Uniform Glorot init in ``+-sqrt(6 / (fan_in + fan_out))``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    fan_in, fan_out = shape
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"glorot_init needs positive dims, got {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _gcn_stack(dims: Sequence[int], last: str, rng) -> List[GcnLayer]:
    layers = []
    for i in range(len(dims) - 1):
        act = last if i == len(dims) - 2 else "relu"
        layers.append(GcnLayer(Tensor(glorot_init((dims[i], dims[i + 1]), rng), True), act))
    return layers


def _mlp(dims: Sequence[int], rng) -> Mlp:
    weights, biases = [], []
    for i in range(len(dims) - 1):
        weights.append(Tensor(glorot_init((dims[i], dims[i + 1]), rng), True))
        biases.append(Tensor(np.zeros((1, dims[i + 1])), True))
    return Mlp(weights, biases)


def init_model(
    feature_dim: int,
    latent_dim: int,
    encoder_hidden: Sequence[int] = (32,),
    generator_hidden: Sequence[int] = (256, 512),
    dz_hidden: Sequence[int] = (64, 32),
    dx_hidden: Sequence[int] = (512, 256),
    seed=0,
) -> ModelParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ModelParams(
        encoder=_gcn_stack([feature_dim, *encoder_hidden, latent_dim], "linear", rng),
        generator=_gcn_stack([latent_dim, *generator_hidden, feature_dim], "sigmoid", rng),
        d_z=_mlp([latent_dim, *dz_hidden, 1], rng),
        d_x=_mlp([feature_dim, *dx_hidden, 1], rng),
    )


# ---------------------------------------------------------------- forward passes


def _adj_matrix(adj):
    return adj.matrix if isinstance(adj, NormalizedAdjacency) else adj


def gcn_layer(adj, h, layer: GcnLayer) -> Tensor:
    """``activation(A @ H @ W)`` with the sparse product taken first."""
    return _ACTIVATIONS[layer.activation](ad.matmul(ad.spmm(_adj_matrix(adj), h), layer.weight))


def gcn_forward(x, adj, layers: Sequence[GcnLayer]) -> Tensor:
    h = ad.as_tensor(x)
    for layer in layers:
        h = gcn_layer(adj, h, layer)
    return h


def encoder_forward(x, adj, params: ModelParams) -> Tensor:
    return gcn_forward(x, adj, params.encoder)


def generator_forward(z, adj, params: ModelParams) -> Tensor:
    return gcn_forward(z, adj, params.generator)


def discriminator_forward(x, mlp: Mlp) -> Tensor:
    h = ad.as_tensor(x)
    if h.data.ndim != 2 or h.shape[1] != mlp.weights[0].shape[0]:
        raise ad.ShapeError(
            f"critic expects (n, {mlp.weights[0].shape[0]}) input, got {h.shape}"
        )
    ones = Tensor(np.ones((h.shape[0], 1)))
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = ad.matmul(h, w) + ad.matmul(ones, b)
        if i < last:
            h = ad.relu(h)
    return h


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: ad.GradientMap, state: AdamState, lr: float):
    """Bias-corrected Adam update applied in place to ``params``.

    Parameters missing from ``grads`` are treated as having zero gradient.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        key = id(p)
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[key]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[key], state.v[key] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: ModelParams, meta: Optional[dict] = None):
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    tensors = params.named_tensors()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[ModelParams, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = 8
    try:
        version, meta_len = struct.unpack_from("<II", data, pos)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos += 8
        meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            arrays[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    return ModelParams.from_arrays(arrays), meta
