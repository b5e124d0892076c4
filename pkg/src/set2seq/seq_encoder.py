"""Sequence models over ordered sequences of instance sets.

``Set2SeqTransformer`` encodes every timestep's set, adds a fixed sinusoidal
position encoding and a learned per-year embedding, runs a post-norm
Transformer encoder, mean-pools over timesteps and regresses one score.  The
baselines share the same head contract.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .nn import AttentionBlock, Linear, Module, param
from .set_encoders import ConfigError, DeepSets, SetEncoderSpec, build_set_encoder
from .tensor import Tensor

MODEL_KINDS = (
    "set2seq",
    "temporal_deepsets",
    "flattened_transformer",
    "static_deepsets",
    "static_set_transformer",
    "vanilla",
)
OOV_POLICIES = ("zero", "nearest_year", "error")


@dataclass
class Timestep:
    position: int
    year: int
    features: np.ndarray


@dataclass
class SetSequence:
    """One entity: timesteps in career order plus a scalar target."""

    entity_id: str
    timesteps: list
    target: float = 0.0

    def __post_init__(self):
        if not self.timesteps:
            raise ValueError(f"{self.entity_id}: a sequence needs at least one timestep")
        prev_year = None
        for i, ts in enumerate(self.timesteps):
            if ts.position != i:
                raise ValueError(f"{self.entity_id}: position indices must run 0..N-1, got {ts.position} at {i}")
            if prev_year is not None and ts.year < prev_year:
                raise ValueError(f"{self.entity_id}: years must be non-decreasing")
            if np.ndim(ts.features) != 2 or len(ts.features) < 1:
                raise ValueError(f"{self.entity_id}: timestep {i} has no instances")
            prev_year = ts.year

    @classmethod
    def from_sets(cls, entity_id, years, sets, target=0.0):
        steps = [Timestep(i, int(y), np.asarray(s, dtype=np.float64)) for i, (y, s) in enumerate(zip(years, sets))]
        return cls(entity_id, steps, float(target))

    def __len__(self):
        return len(self.timesteps)

    @property
    def years(self):
        return np.array([ts.year for ts in self.timesteps], dtype=np.int64)

    @property
    def positions(self):
        return np.array([ts.position for ts in self.timesteps], dtype=np.int64)

    @property
    def feature_dim(self):
        return self.timesteps[0].features.shape[1]

    def packed(self):
        """All instances stacked [M x d] and the timestep index of each row."""
        x = np.concatenate([ts.features for ts in self.timesteps], axis=0)
        seg = np.repeat(np.arange(len(self.timesteps)), [len(ts.features) for ts in self.timesteps])
        return x, seg

    def reordered(self, order):
        """Same sets and years re-assigned to positions in ``order`` (years re-sorted)."""
        steps = [self.timesteps[i] for i in order]
        years = sorted(ts.year for ts in self.timesteps)
        return SetSequence(self.entity_id, [Timestep(i, y, s.features) for i, (y, s) in enumerate(zip(years, steps))], self.target)


# --------------------------------------------------------------------------
# position and time
# --------------------------------------------------------------------------

def positional_encoding(position, H, k=10000.0):
    """Sinusoidal encoding: sin on even dims, cos on odd dims, frequency k^(-2l/H)."""
    return positional_encodings([position], H, k)[0]


def positional_encodings(positions, H, k=10000.0):
    if H % 2:
        raise ConfigError(f"positional encoding needs an even width, got H={H}")
    pos = np.asarray(positions, dtype=np.float64)
    if np.any(pos < 0):
        raise ValueError("positions must be >= 0")
    angles = pos[:, None] / np.power(float(k), np.arange(0, H, 2) / H)[None, :]
    out = np.empty((len(pos), H))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


class TemporalEmbeddingTable(Module):
    """Learned vector per calendar year, shared by every entity."""

    def __init__(self, years, H, rng, oov_policy="zero"):
        if oov_policy not in OOV_POLICIES:
            raise ConfigError(f"unknown oov_policy {oov_policy!r}; expected one of {OOV_POLICIES}")
        self.known_years = np.array(sorted(set(int(y) for y in years)), dtype=np.int64)
        if len(self.known_years) == 0:
            raise ValueError("temporal embedding table needs at least one year")
        self.year_to_row = {int(y): i for i, y in enumerate(self.known_years)}
        self.oov_policy = oov_policy
        self.weights = param(rng.normal(0.0, 0.02, size=(len(self.known_years), H)))

    def row(self, year):
        year = int(year)
        r = self.year_to_row.get(year)
        if r is not None:
            return r
        if self.oov_policy == "zero":
            return -1
        if self.oov_policy == "nearest_year":
            dist = np.abs(self.known_years - year)
            return int(np.argmin(dist))  # first minimum = earlier year on ties
        raise KeyError(f"year {year} has no temporal embedding and oov_policy is 'error'")

    def __call__(self, years):
        return T.gather_rows(self.weights, [self.row(y) for y in years])


def temporal_embed(year, table):
    r = table.row(year)
    return np.zeros(table.weights.shape[1]) if r < 0 else table.weights.data[r].copy()


def compose_timestep(s, u, v, use_positional=True, use_temporal=True):
    s, u, v = (np.asarray(a, dtype=np.float64) for a in (s, u, v))
    if not s.shape == u.shape == v.shape:
        raise T.DimensionError(f"compose_timestep: shapes {s.shape}, {u.shape}, {v.shape} differ")
    out = s.copy()
    if use_positional:
        out = out + u
    if use_temporal:
        out = out + v
    return out


# --------------------------------------------------------------------------
# model configuration
# --------------------------------------------------------------------------

@dataclass
class ModelSpec:
    kind: str = "set2seq"
    set_encoder: SetEncoderSpec = field(default_factory=SetEncoderSpec)
    use_positional: bool = True
    use_temporal: bool = True
    n_layers: int = 2
    hidden: int = 64
    n_heads: int = 4
    ff_dim: int = 0  # 0 means 2 * hidden
    pe_base: float = 10000.0
    oov_policy: str = "zero"

    def __post_init__(self):
        if isinstance(self.set_encoder, dict):
            self.set_encoder = SetEncoderSpec(**self.set_encoder)
        if not self.ff_dim:
            self.ff_dim = 2 * self.hidden

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        uses_transformer = self.kind in ("set2seq", "flattened_transformer")
        if uses_transformer:
            if self.hidden % self.n_heads:
                raise ConfigError(f"hidden={self.hidden} is not divisible by n_heads={self.n_heads}")
            if self.hidden % 2:
                raise ConfigError(f"hidden={self.hidden} must be even for sinusoidal encodings")
            if self.n_layers < 1:
                raise ConfigError("n_layers must be >= 1")
        if self.oov_policy not in OOV_POLICIES:
            raise ConfigError(f"unknown oov_policy {self.oov_policy!r}")
        if self.kind in ("temporal_deepsets", "static_deepsets") and self.set_encoder.variant != "deepsets":
            raise ConfigError(f"{self.kind} requires the deepsets set encoder")
        if self.kind == "static_set_transformer" and self.set_encoder.variant == "deepsets":
            raise ConfigError("static_set_transformer requires an attention set encoder variant")
        self.set_encoder.d_out = self.hidden
        self.set_encoder.validate()
        return self

    def to_dict(self):
        return asdict(self)


class TransformerEncoder(Module):
    def __init__(self, H, n_heads, ff_dim, n_layers, rng):
        self.blocks = [AttentionBlock(H, n_heads, ff_dim, rng) for _ in range(n_layers)]

    def __call__(self, x):
        for block in self.blocks:
            x = block(x, x)
        return x


def transformer_encoder_forward(embeddings, encoder):
    """Encode an [N x H] sequence and mean-pool it over timesteps to [H]."""
    x = embeddings if isinstance(embeddings, Tensor) else Tensor(embeddings)
    return T.reduce_pool(encoder(x), 0, "mean")


class _Regressor(Module):
    def forward(self, sample):
        raise NotImplementedError

    def __call__(self, sample):
        return self.forward(sample)

    def predict(self, sample):
        return self.forward(sample).item()

    def _head(self, pooled):
        return T.reshape(self.head(T.reshape(pooled, (1, pooled.shape[0]))), (1,))


class Set2SeqTransformer(_Regressor):
    def __init__(self, spec, years, rng):
        self.spec = spec
        H = spec.hidden
        self.set_encoder = build_set_encoder(spec.set_encoder, rng)
        self.temporal = TemporalEmbeddingTable(years, H, rng, spec.oov_policy) if spec.use_temporal else None
        self.encoder = TransformerEncoder(H, spec.n_heads, spec.ff_dim, spec.n_layers, rng)
        self.head = Linear(H, 1, rng)

    def embeddings(self, sample):
        """Per-timestep set, position, year and composed embeddings (each [N x H] or None)."""
        x, seg = sample.packed()
        n = len(sample)
        s = self.set_encoder.encode_packed(Tensor(x), seg, n)
        u = Tensor(positional_encodings(sample.positions, self.spec.hidden, self.spec.pe_base)) if self.spec.use_positional else None
        v = self.temporal(sample.years) if self.temporal is not None else None
        t = s
        if u is not None:
            t = T.add(t, u)
        if v is not None:
            t = T.add(t, v)
        return s, u, v, t

    def forward(self, sample):
        *_, t = self.embeddings(sample)
        return self._head(T.reduce_pool(self.encoder(t), 0, "mean"))

    def components(self, sample):
        """Numpy copies of every intermediate for analysis."""
        s, u, v, t = self.embeddings(sample)
        H = self.spec.hidden
        zeros = np.zeros((len(sample), H))
        return {
            "set": s.data.copy(),
            "positional": u.data.copy() if u is not None else zeros,
            "temporal": v.data.copy() if v is not None else zeros.copy(),
            "composed": t.data.copy(),
            "encoded": self.encoder(t).data.copy(),
        }


class TemporalDeepSets(_Regressor):
    """DeepSets per timestep, mean over timesteps, FC head; blind to order."""

    def __init__(self, spec, rng):
        self.spec = spec
        self.set_encoder = DeepSets(spec.set_encoder, rng)
        self.head = Linear(spec.hidden, 1, rng)

    def forward(self, sample):
        x, seg = sample.packed()
        s = self.set_encoder.encode_packed(Tensor(x), seg, len(sample))
        return self._head(T.reduce_pool(s, 0, "mean"))


class FlattenedTransformer(_Regressor):
    """Every instance is its own token: projected features + its timestep's PE and TE."""

    def __init__(self, spec, years, rng):
        self.spec = spec
        H = spec.hidden
        self.proj = Linear(spec.set_encoder.d_in, H, rng)
        self.temporal = TemporalEmbeddingTable(years, H, rng, spec.oov_policy) if spec.use_temporal else None
        self.encoder = TransformerEncoder(H, spec.n_heads, spec.ff_dim, spec.n_layers, rng)
        self.head = Linear(H, 1, rng)

    def forward(self, sample):
        x, seg = sample.packed()
        t = self.proj(Tensor(x))
        if self.spec.use_positional:
            pe = positional_encodings(sample.positions, self.spec.hidden, self.spec.pe_base)
            t = T.add(t, Tensor(pe[seg]))
        if self.temporal is not None:
            t = T.add(t, self.temporal(sample.years[seg]))
        return self._head(T.reduce_pool(self.encoder(t), 0, "mean"))


class StaticSetModel(_Regressor):
    """Whole career as one unordered set, encoded then regressed."""

    def __init__(self, spec, rng):
        self.spec = spec
        self.set_encoder = build_set_encoder(spec.set_encoder, rng)
        self.head = Linear(spec.hidden, 1, rng)

    def forward(self, sample):
        x, _ = sample.packed()
        return self._head(self.set_encoder(Tensor(x)))


class VanillaRegressor(_Regressor):
    """Linear regression on the mean and max of all instance features."""

    def __init__(self, spec, rng):
        self.spec = spec
        d = spec.set_encoder.d_in
        self.head = Linear(2 * d, 1, rng)

    def forward(self, sample):
        x, _ = sample.packed()
        agg = np.concatenate([x.mean(axis=0), x.max(axis=0)])
        return self._head(Tensor(agg))


def build_model(spec, feature_dim, years=(), seed=0):
    """Instantiate a model of ``spec.kind``; ``years`` seeds the temporal table."""
    spec.set_encoder.d_in = int(feature_dim)
    spec.validate()
    rng = np.random.default_rng(seed)
    needs_years = spec.kind in ("set2seq", "flattened_transformer") and spec.use_temporal
    if needs_years and len(years) == 0:
        raise ConfigError(f"{spec.kind} with temporal embeddings needs the training years")
    if spec.kind == "set2seq":
        return Set2SeqTransformer(spec, years, rng)
    if spec.kind == "flattened_transformer":
        return FlattenedTransformer(spec, years, rng)
    if spec.kind == "temporal_deepsets":
        return TemporalDeepSets(spec, rng)
    if spec.kind == "vanilla":
        return VanillaRegressor(spec, rng)
    return StaticSetModel(spec, rng)


def set2seq_forward(sample, model):
    return model(sample)


def temporal_deepsets_forward(sample, model):
    return model(sample)


def flattened_transformer_forward(sample, model):
    return model(sample)
