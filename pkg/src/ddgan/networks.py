"""The sub-networks of the model and their checkpoint format.

All networks are three fully connected layers with LeakyReLU between them and
no activation after the last layer:

=========  =====================  ==================================
name       maps                   role
=========  =====================  ==================================
ei_a/ei_b  D -> latent            domain-invariant encoder per domain
es_a/es_b  D -> latent            domain-specific encoder per domain
phi        latent -> embed        semantic mapper, shared by domains
gen        embed + latent -> D    shared generator (reconstruction,
                                  cross-domain and unseen generation)
disc_a/b   D -> 1                 discriminator logits per domain
=========  =====================  ==================================

Checkpoint layout (little-endian, no compression)::

    b"DDGANCK1"                     8-byte magic
    uint64                          length of the JSON header in bytes
    JSON header (UTF-8)             {"config": {...}, "meta": {...},
                                     "tensors": [{"name", "shape"}, ...]}
    float64 data                    every tensor, C order, header order
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Domain
from .errors import DimensionError, ParseError

MAGIC = b"DDGANCK1"


@dataclass(frozen=True)
class NetworkConfig:
    feature_dim: int = 2048
    latent_dim: int = 300
    embed_dim: int = 300
    encoder_hidden: tuple = (1024, 512)
    mapper_hidden: tuple = (300, 300)
    generator_hidden: tuple = (512, 1024)
    discriminator_hidden: tuple = (512, 256)
    slope: float = 0.2

    def __post_init__(self):
        for name in ("encoder_hidden", "mapper_hidden", "generator_hidden", "discriminator_hidden"):
            widths = tuple(int(w) for w in getattr(self, name))
            if len(widths) != 2 or min(widths) < 1:
                raise ValueError(f"{name} must be two positive widths, got {widths}")
            object.__setattr__(self, name, widths)

    def layer_widths(self):
        D, L, E = self.feature_dim, self.latent_dim, self.embed_dim
        enc = (D, *self.encoder_hidden, L)
        return {
            "ei_a": enc,
            "ei_b": enc,
            "es_a": enc,
            "es_b": enc,
            "phi": (L, *self.mapper_hidden, E),
            "gen": (E + L, *self.generator_hidden, D),
            "disc_a": (D, *self.discriminator_hidden, 1),
            "disc_b": (D, *self.discriminator_hidden, 1),
        }

    def parameter_count(self):
        return sum(
            w_in * w_out + w_out
            for widths in self.layer_widths().values()
            for w_in, w_out in zip(widths[:-1], widths[1:])
        )

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


class MLP:
    def __init__(self, name, widths, slope=0.2):
        self.name = name
        self.widths = tuple(widths)
        self.slope = slope
        self.layers = []
        for i, (w_in, w_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self.layers.append((
                T.parameter(np.zeros((w_in, w_out)), name=f"{name}.{i}.weight"),
                T.parameter(np.zeros((1, w_out)), name=f"{name}.{i}.bias"),
            ))

    @property
    def in_width(self):
        return self.widths[0]

    @property
    def out_width(self):
        return self.widths[-1]

    def parameters(self):
        return [p for layer in self.layers for p in layer]

    def init_uniform(self, rng):
        """Glorot-uniform weights, zero biases."""
        for weight, bias in self.layers:
            fan_in, fan_out = weight.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weight.value[...] = rng.uniform(-bound, bound, size=weight.shape)
            bias.value[...] = 0.0

    def __call__(self, x):
        x = _as_input(x)
        if x.shape[1] != self.in_width:
            raise DimensionError(f"{self.name}: expected input width {self.in_width}, got {x.shape[1]}")
        last = len(self.layers) - 1
        for i, (weight, bias) in enumerate(self.layers):
            x = T.linear(x, weight, bias)
            if i < last:
                x = T.leaky_relu(x, self.slope)
        return x


def _as_input(x):
    if isinstance(x, T.Tensor):
        return x
    return T.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))


class ModelBundle:
    NETWORKS = ("ei_a", "ei_b", "es_a", "es_b", "phi", "gen", "disc_a", "disc_b")
    GENERATOR_SIDE = ("ei_a", "ei_b", "es_a", "es_b", "phi", "gen")
    DISCRIMINATOR_SIDE = ("disc_a", "disc_b")

    def __init__(self, config, seed=None):
        self.config = config
        for name, widths in config.layer_widths().items():
            setattr(self, name, MLP(name, widths, config.slope))
        if seed is not None:
            self.init(seed)

    def init(self, seed):
        rng = np.random.default_rng(seed)
        for name in self.NETWORKS:
            getattr(self, name).init_uniform(rng)
        return self

    def network(self, name):
        if name not in self.NETWORKS:
            raise KeyError(name)
        return getattr(self, name)

    def parameters(self, networks=None):
        names = self.NETWORKS if networks is None else networks
        return [p for name in names for p in getattr(self, name).parameters()]

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def state(self):
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state(self, state):
        for name, p in self.named_parameters():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.value[...] = value

    def copy(self):
        other = ModelBundle(self.config)
        other.load_state(self.state())
        return other

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def invariant_encoder(self, domain):
        return self.ei_a if Domain(domain) is Domain.SHAPE else self.ei_b

    def specific_encoder(self, domain):
        return self.es_a if Domain(domain) is Domain.SHAPE else self.es_b

    def discriminator(self, domain):
        return self.disc_a if Domain(domain) is Domain.SHAPE else self.disc_b


@dataclass
class DisentangledPair:
    invariant: T.Tensor
    specific: T.Tensor
    semantic: T.Tensor = field(repr=False)


def encode(model, features, domain):
    """Invariant, specific and semantic codes for a batch from one domain."""
    x = _as_input(features)
    if x.shape[1] != model.config.feature_dim:
        raise DimensionError(
            f"feature width {x.shape[1]} does not match model width {model.config.feature_dim}"
        )
    invariant = model.invariant_encoder(domain)(x)
    specific = model.specific_encoder(domain)(x)
    return DisentangledPair(invariant, specific, model.phi(invariant))


def disentangle(model, record):
    return encode(model, record.feature.reshape(1, -1), record.domain)


def _generate(model, code, specific):
    code, specific = _as_input(code), _as_input(specific)
    cfg = model.config
    if code.shape[1] != cfg.embed_dim or specific.shape[1] != cfg.latent_dim:
        raise DimensionError(
            f"generator expects widths ({cfg.embed_dim}, {cfg.latent_dim}), "
            f"got ({code.shape[1]}, {specific.shape[1]})"
        )
    return model.gen(T.concat_cols(code, specific))


def reconstruct(model, semantic, specific):
    return _generate(model, semantic, specific)


def cross_generate(model, semantic_other, specific_self):
    return _generate(model, semantic_other, specific_self)


def generate_unseen(model, word_embedding, specific_seen):
    return _generate(model, word_embedding, specific_seen)


def discriminator_logits(model, domain, features):
    x = _as_input(features)
    if x.shape[1] != model.config.feature_dim:
        raise DimensionError(
            f"discriminator expects width {model.config.feature_dim}, got {x.shape[1]}"
        )
    return model.discriminator(domain)(x)


def discriminate(model, domain, features):
    """Probability that ``features`` are real samples of ``domain``."""
    p = T.sigmoid(discriminator_logits(model, domain, features))
    return np.clip(p.value, T.PROB_MIN, T.PROB_MAX)


def invariant_features(model, features, domain):
    """Numpy invariant features for a batch, evaluated without recording."""
    return model.invariant_encoder(domain)(_as_input(features)).value.copy()


def specific_features(model, features, domain):
    return model.specific_encoder(domain)(_as_input(features)).value.copy()


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model, path, meta=None):
    tensors = model.named_parameters()
    header = {
        "config": model.config.to_json(),
        "meta": meta or {},
        "tensors": [{"name": name, "shape": list(p.shape)} for name, p in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in tensors:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return ``(config, state, meta)`` from a checkpoint file."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ParseError("not a model checkpoint (bad magic)", path=path)
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    offset = 16 + n
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise ParseError(f"truncated checkpoint at tensor {entry['name']}", path=path)
        state[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise ParseError("trailing bytes after the last tensor", path=path)
    return NetworkConfig.from_json(header["config"]), state, header.get("meta", {})


def load_checkpoint(path):
    config, state, meta = read_checkpoint(path)
    model = ModelBundle(config)
    model.load_state(state)
    return model, meta
