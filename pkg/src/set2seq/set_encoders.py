"""Permutation-invariant set encoders: DeepSets and three Set Transformer variants.

All encoders work on *packed* input: the instances of several sets stacked
into one matrix with a segment id per row.  Attention is restricted to each
set with a block mask, so packing never mixes sets.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .nn import AttentionBlock, Linear, MLP, Module, param
from .tensor import Tensor

VARIANTS = ("deepsets", "st_sab_pma", "st_isab_pma", "st_isab_pma_sab")


class ConfigError(ValueError):
    pass


@dataclass
class SetEncoderSpec:
    variant: str = "deepsets"
    pooling: str = "max"
    d_in: int = 8
    d_hidden: int = 32
    d_out: int = 64
    n_heads: int = 4
    n_inducing: int = 16
    n_blocks: int = 2

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown set encoder variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "deepsets" and self.pooling not in ("mean", "max"):
            raise ConfigError(f"DeepSets pooling must be 'mean' or 'max', got {self.pooling!r}")
        if self.variant != "deepsets" and self.d_hidden % self.n_heads:
            raise ConfigError(f"d_hidden={self.d_hidden} is not divisible by n_heads={self.n_heads}")
        if "isab" in self.variant and self.n_inducing < 1:
            raise ConfigError("n_inducing must be >= 1 for ISAB variants")
        if min(self.d_in, self.d_hidden, self.d_out, self.n_blocks) < 1:
            raise ConfigError("set encoder dimensions and block count must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)


def _as_features(x):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise T.DimensionError(f"an instance set is a non-empty [n x d] matrix, got shape {arr.shape}")
    return Tensor(arr)


class SetEncoder(Module):
    spec: SetEncoderSpec

    def encode_packed(self, x, segments, n_sets):
        raise NotImplementedError

    def __call__(self, features):
        """Encode a single set [n x d_in] into a vector of length d_out."""
        x = _as_features(features)
        if x.shape[1] != self.spec.d_in:
            raise T.DimensionError(f"set has feature width {x.shape[1]}, encoder expects {self.spec.d_in}")
        out = self.encode_packed(x, np.zeros(x.shape[0], dtype=np.int64), 1)
        return T.reshape(out, (self.spec.d_out,))


class DeepSets(SetEncoder):
    """Four-layer encoder, symmetric pooling, three-layer decoder ending at d_out."""

    def __init__(self, spec, rng):
        self.spec = spec.validate()
        h = spec.d_hidden
        self.encoder = MLP([spec.d_in, h, h, h, h], rng)
        self.decoder = MLP([h, h, h, spec.d_out], rng)

    def encode_packed(self, x, segments, n_sets):
        z = self.encoder(x)
        pooled = T.segment_pool(z, segments, n_sets, self.spec.pooling)
        return self.decoder(pooled)


class ISAB(Module):
    def __init__(self, d, n_heads, n_inducing, rng):
        self.inducing = param(rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_inducing, d)))
        self.mab_in = AttentionBlock(d, n_heads, d, rng)
        self.mab_out = AttentionBlock(d, n_heads, d, rng)

    def __call__(self, x, segments, n_sets):
        m = self.inducing.shape[0]
        idx = np.tile(np.arange(m), n_sets)
        iseg = np.repeat(np.arange(n_sets), m)
        ind = T.gather_rows(self.inducing, idx)
        if n_sets == 1:
            h = self.mab_in(ind, x)
            return self.mab_out(x, h)
        h = self.mab_in(ind, x, T.block_mask(iseg, segments))
        return self.mab_out(x, h, T.block_mask(segments, iseg))


class SetTransformer(SetEncoder):
    """Input projection, stacked SAB or ISAB, single-seed PMA, optional SABs, output FC."""

    def __init__(self, spec, rng):
        self.spec = spec.validate()
        if spec.variant == "deepsets":
            raise ConfigError("SetTransformer needs an attention variant")
        d, a = spec.d_hidden, spec.n_heads
        self.proj = Linear(spec.d_in, d, rng)
        if spec.variant == "st_sab_pma":
            self.blocks = [AttentionBlock(d, a, d, rng) for _ in range(spec.n_blocks)]
        else:
            self.blocks = [ISAB(d, a, spec.n_inducing, rng) for _ in range(spec.n_blocks)]
        self.seed = param(rng.normal(0.0, 1.0 / np.sqrt(d), size=(1, d)))
        self.pma = AttentionBlock(d, a, d, rng)
        n_post = spec.n_blocks if spec.variant == "st_isab_pma_sab" else 0
        self.post = [AttentionBlock(d, a, d, rng) for _ in range(n_post)]
        self.out = Linear(d, spec.d_out, rng)

    def encode_packed(self, x, segments, n_sets):
        segments = np.asarray(segments, dtype=np.int64)
        single = n_sets == 1
        h = self.proj(x)
        self_mask = None if single else T.block_mask(segments, segments)
        for block in self.blocks:
            if isinstance(block, ISAB):
                h = block(h, segments, n_sets)
            else:
                h = block(h, h, self_mask)
        seeds = T.gather_rows(self.seed, np.zeros(n_sets, dtype=np.int64))
        sets = np.arange(n_sets)
        h = self.pma(seeds, h, None if single else T.block_mask(sets, segments))
        # after pooling every set is one row; it may only attend to itself
        post_mask = None if single else T.block_mask(sets, sets)
        for block in self.post:
            h = block(h, h, post_mask)
        return self.out(h)


def build_set_encoder(spec, rng):
    spec.validate()
    if spec.variant == "deepsets":
        return DeepSets(spec, rng)
    return SetTransformer(spec, rng)


# functional entry points ----------------------------------------------------

def deepsets_encode(features, encoder, pooling=None):
    """Encode one set with a :class:`DeepSets` module, optionally overriding pooling."""
    if pooling is not None and pooling != encoder.spec.pooling:
        saved = encoder.spec.pooling
        encoder.spec.pooling = pooling
        try:
            return encoder(features)
        finally:
            encoder.spec.pooling = saved
    return encoder(features)


def multihead_attention_block(x, y, block, mask=None):
    return block(_as_features(x), _as_features(y), mask)


def set_transformer_encode(features, encoder):
    return encoder(features)
