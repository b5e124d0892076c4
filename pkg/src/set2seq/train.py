"""Run configuration, the training loop with early stopping, and evaluation."""
import hashlib
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__, _kernels, checkpoint
from .data import load_manifest, make_split
from .optim import AdamState, adam_step
from .ranking import TIE_POLICIES, kendall_tau, mae, mse_loss, ranking_targets
from .seq_encoder import ModelSpec, build_model
from .set_encoders import ConfigError, SetEncoderSpec
from .tensor import Graph

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass
class DataConfig:
    manifest: str = ""
    ranking: str = "target"
    split: str = "stratified"
    split_seed: int = -1  # -1: use the run seed
    min_instances: int = 10


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8


@dataclass
class EarlyStopping:
    patience: int = 10
    max_epochs: int = 100


@dataclass
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataConfig = field(default_factory=DataConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    early_stopping: EarlyStopping = field(default_factory=EarlyStopping)
    seed: int = 0
    tie_policy: str = "skip_ties"
    output_dir: str = "runs/default"

    def validate(self):
        self.model.validate()
        if self.early_stopping.patience < 1:
            raise ConfigError("early_stopping.patience must be >= 1")
        if self.early_stopping.max_epochs < 1:
            raise ConfigError("early_stopping.max_epochs must be >= 1")
        if self.optimizer.batch_size < 1:
            raise ConfigError("optimizer.batch_size must be >= 1")
        if self.tie_policy not in TIE_POLICIES:
            raise ConfigError(f"tie_policy must be one of {TIE_POLICIES}")
        if self.data.split not in ("stratified", "time_series"):
            raise ConfigError(f"data.split must be 'stratified' or 'time_series', got {self.data.split!r}")
        return self

    @property
    def split_seed(self):
        return self.seed if self.data.split_seed < 0 else self.data.split_seed

    def to_dict(self):
        return asdict(self)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d, base_dir=None):
        d = dict(d)
        model = dict(d.pop("model", {}))
        enc = _build(SetEncoderSpec, model.pop("set_encoder", {}), "model.set_encoder")
        cfg = cls(
            model=_build(ModelSpec, dict(model, set_encoder=enc), "model"),
            data=_build(DataConfig, d.pop("data", {}), "data"),
            optimizer=_build(OptimizerConfig, d.pop("optimizer", {}), "optimizer"),
            early_stopping=_build(EarlyStopping, d.pop("early_stopping", {}), "early_stopping"),
        )
        for key, val in d.items():
            if key not in ("seed", "tie_policy", "output_dir"):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, val)
        if base_dir and cfg.data.manifest and not os.path.isabs(cfg.data.manifest):
            cfg.data.manifest = os.path.normpath(os.path.join(base_dir, cfg.data.manifest))
        return cfg.validate()

    @classmethod
    def from_toml(cls, path):
        with open(path, "rb") as f:
            try:
                raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)))


def _build(klass, d, section):
    if isinstance(d, klass):
        return d
    known = {f.name for f in fields(klass)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return klass(**d)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def _threads():
    try:
        return max(1, int(os.environ.get("SET2SEQ_THREADS", "1")))
    except ValueError:
        return 1


def predict(model, sequences, threads=None):
    """Raw predictions, one sample at a time (batch size 1)."""
    threads = threads or _threads()
    if threads == 1 or len(sequences) < 2:
        return np.array([model.predict(s) for s in sequences])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(model.predict, sequences)))


def metrics_for(targets, raw_predictions, tie_policy="skip_ties"):
    """MSE on raw outputs; tau and MAE on predictions clamped to [0, 1]."""
    y = np.asarray(targets, dtype=np.float64)
    p = np.asarray(raw_predictions, dtype=np.float64)
    clamped = np.clip(p, 0.0, 1.0)
    return {
        "mse": mse_loss(y, p),
        "tau": kendall_tau(y, clamped, tie_policy) if len(y) >= 2 else float("nan"),
        "mae": mae(y, clamped),
        "K": int(len(y)),
        "tie_policy": tie_policy,
    }


def evaluate(model, sequences, tie_policy="skip_ties", threads=None):
    preds = predict(model, sequences, threads)
    return metrics_for([s.target for s in sequences], preds, tie_policy), preds


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int
    split: object
    meta: dict
    out_dir: str = None


def _nonfinite_params(model):
    return [n for n, p in model.named_parameters() if not np.all(np.isfinite(p.data))]


def train(config, manifest=None, out_dir=None, write=True):
    """Fit ``config.model`` and keep the parameters of the best validation epoch.

    Writes ``checkpoint.bin``, ``metrics.jsonl`` (one record per epoch) and
    ``run_manifest.json`` to ``out_dir`` unless ``write`` is false.
    """
    config.validate()
    if manifest is None:
        manifest = load_manifest(config.data.manifest, config.data.min_instances)
    ranking = manifest.ranking(config.data.ranking)
    split = make_split(manifest, config.data.split, ranking, config.split_seed)
    seqs = {s.entity_id: s for s in manifest.sequences(config.data.ranking)}
    train_set = [seqs[e] for e in split.train]
    val_set = [seqs[e] for e in split.val]
    if not train_set:
        raise ConfigError("the training split is empty")
    monitor_train = not val_set
    if monitor_train:
        warnings.warn("validation split is empty; early stopping monitors training loss")

    years = sorted({int(y) for s in train_set for y in s.years})
    spec = config.model
    ss = np.random.SeedSequence(config.seed)
    init_seed, order_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    model = build_model(spec, manifest.feature_dim, years, init_seed)
    params = model.parameters()
    model.zero_grad()
    opt = config.optimizer
    state = AdamState(lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps).init(params)
    order_rng = np.random.default_rng(order_seed)

    history = []
    best_loss, best_epoch, best_state, wait = math.inf, -1, model.state_dict(), 0
    metrics_lines = []
    for epoch in range(config.early_stopping.max_epochs):
        order = order_rng.permutation(len(train_set))
        sq_errors = []
        for start in range(0, len(order), opt.batch_size):
            chunk = order[start:start + opt.batch_size]
            for i in chunk:
                s = train_set[i]
                with Graph() as g:
                    pred = model(s)
                    loss = mse_loss([s.target], pred)
                    sq_errors.append(loss.item())
                    if not math.isfinite(sq_errors[-1]):
                        raise NumericError(f"non-finite loss at epoch {epoch} on entity {s.entity_id!r}")
                    g.backward(loss * (1.0 / len(chunk)))
            adam_step(params, state)
        bad = _nonfinite_params(model)
        if bad:
            raise NumericError(f"non-finite parameters after epoch {epoch}: {bad[:5]}")
        train_loss = float(np.mean(sq_errors))
        rec = {"epoch": epoch, "train_loss": train_loss}
        if val_set:
            m, _ = evaluate(model, val_set, config.tie_policy, threads=1)
            rec.update(val_loss=m["mse"], val_tau=m["tau"], val_mae=m["mae"], val_K=m["K"])
            monitored = m["mse"]
        else:
            monitored = train_loss
        history.append(rec)
        metrics_lines.append(json.dumps(rec, sort_keys=True))
        log.info("epoch %d %s", epoch, rec)
        if monitored < best_loss:
            best_loss, best_epoch, best_state, wait = monitored, epoch, model.state_dict(), 0
        else:
            wait += 1
            if wait >= config.early_stopping.patience:
                break
    model.load_state_dict(best_state)

    meta = {
        "format": "set2seq-checkpoint",
        "model": spec.to_dict(),
        "feature_dim": manifest.feature_dim,
        "years": years,
        "init_seed": init_seed,
        # the output location is not part of the model; it stays in run_manifest.json
        "config": {k: v for k, v in config.to_dict().items() if k != "output_dir"},
        "best_epoch": best_epoch,
        "split": {"strategy": split.strategy, "seed": split.seed, "ranking": config.data.ranking},
    }
    result = TrainResult(model, history, best_epoch, split, meta, out_dir)
    if write:
        out_dir = out_dir or config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        checkpoint.save(os.path.join(out_dir, "checkpoint.bin"), model.state_dict(), meta)
        with open(os.path.join(out_dir, "metrics.jsonl"), "w") as f:
            f.write("\n".join(metrics_lines) + "\n")
        run_manifest = {
            "config": config.to_dict(),
            "config_sha256": config.digest(),
            "seed": config.seed,
            "provenance": f"set2seq {__version__}; kernels={_kernels.backend()}; numpy {np.__version__}",
            "best_epoch": best_epoch,
            "epochs_run": len(history),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        with open(os.path.join(out_dir, "run_manifest.json"), "w") as f:
            json.dump(run_manifest, f, indent=2, sort_keys=True)
        result.out_dir = out_dir
    return result


def load_model(path):
    """Rebuild a model from a checkpoint; returns ``(model, meta)``."""
    params, meta = checkpoint.load(path)
    spec = ModelSpec(**meta["model"])
    model = build_model(spec, meta["feature_dim"], meta["years"], meta.get("init_seed", 0))
    model.load_state_dict(params)
    return model, meta
