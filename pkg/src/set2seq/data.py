"""Manifests, the synthetic benchmark, and the two split protocols.

Manifest format (JSON Lines)::

    {"kind": "header", "feature_dim": 8, "rankings": {"target": "corpus.target.csv"}, "metadata": {...}}
    {"kind": "entity", "entity_id": "e0001", "works": [{"year": 1901, "features": [...]}, ...]}

A work may carry ``"feature_file"`` (a ``.npy`` vector, path relative to the
manifest) instead of inline ``"features"``.  Each ranking is a sidecar CSV
``entity_id,rank``.
"""
import csv
import hashlib
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .ranking import Ranking, ranking_targets, read_ranking_csv, write_ranking_csv
from .seq_encoder import SetSequence, Timestep

TS_TRAIN_BEFORE = 1930
TS_TEST_FROM = 1951
TARGET_RULES = ("static_mean", "early_burst", "epoch_drift")


class ManifestError(ValueError):
    pass


@dataclass
class EntityRecord:
    entity_id: str
    career: list  # [(year, ndarray [n x d])], ascending year

    @property
    def start_year(self):
        return self.career[0][0]

    @property
    def n_instances(self):
        return sum(len(f) for _, f in self.career)


@dataclass
class Manifest:
    entities: list
    feature_dim: int
    rankings: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def ids(self):
        return [e.entity_id for e in self.entities]

    def entity(self, entity_id):
        for e in self.entities:
            if e.entity_id == entity_id:
                return e
        raise KeyError(f"entity {entity_id!r} not in manifest")

    def ranking(self, name):
        if name not in self.rankings:
            raise KeyError(f"unknown ranking {name!r}; available: {sorted(self.rankings)}")
        return self.rankings[name]

    def sequences(self, ranking_name=None):
        """One :class:`SetSequence` per entity, targets scaled from the named ranking."""
        targets = {}
        if ranking_name is not None:
            targets = ranking_targets(self.ranking(ranking_name), self.ids)
        out = []
        for e in self.entities:
            steps = [Timestep(i, y, f) for i, (y, f) in enumerate(e.career)]
            out.append(SetSequence(e.entity_id, steps, float(targets.get(e.entity_id, 0.0))))
        return out


# --------------------------------------------------------------------------
# loading / saving
# --------------------------------------------------------------------------

def _features(work, dim, base, where):
    if "features" in work:
        vec = work["features"]
        if not isinstance(vec, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vec):
            raise ManifestError(f"{where}: 'features' must be a list of numbers")
        arr = np.array(vec, dtype=np.float64)
    elif "feature_file" in work:
        arr = np.asarray(np.load(os.path.join(base, work["feature_file"])), dtype=np.float64).reshape(-1)
    else:
        raise ManifestError(f"{where}: work needs 'features' or 'feature_file'")
    if arr.shape != (dim,):
        raise ManifestError(f"{where}: feature vector has length {arr.size}, manifest feature_dim is {dim}")
    return arr


def load_manifest(path, min_instances=10):
    """Parse and validate a JSONL manifest; years are sorted and works grouped per year."""
    base = os.path.dirname(os.path.abspath(path))
    header = None
    entities = []
    seen = set()
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{where}: invalid JSON ({exc.msg})") from None
            kind = rec.get("kind")
            if header is None:
                if kind != "header":
                    raise ManifestError(f"{where}: first record must be the header")
                dim = rec.get("feature_dim")
                if not isinstance(dim, int) or dim < 1:
                    raise ManifestError(f"{where}: feature_dim must be a positive integer")
                header = rec
                continue
            if kind != "entity":
                raise ManifestError(f"{where}: expected kind 'entity', got {kind!r}")
            eid = rec.get("entity_id")
            if not isinstance(eid, str) or not eid:
                raise ManifestError(f"{where}: entity_id must be a non-empty string")
            if eid in seen:
                raise ManifestError(f"{where}: duplicate entity_id {eid!r}")
            seen.add(eid)
            works = rec.get("works")
            if not isinstance(works, list) or not works:
                raise ManifestError(f"{where}: entity {eid!r} has no works")
            by_year = {}
            for j, w in enumerate(works):
                loc = f"{where} (entity {eid!r}, work {j})"
                year = w.get("year") if isinstance(w, dict) else None
                if not isinstance(year, int) or isinstance(year, bool):
                    raise ManifestError(f"{loc}: year must be an integer")
                by_year.setdefault(year, []).append(_features(w, header["feature_dim"], base, loc))
            total = sum(len(v) for v in by_year.values())
            if total < min_instances:
                raise ManifestError(f"{where}: entity {eid!r} has {total} instances, fewer than min_instances={min_instances}")
            career = [(y, np.stack(by_year[y])) for y in sorted(by_year)]
            entities.append(EntityRecord(eid, career))
    if header is None:
        raise ManifestError(f"{path}: empty manifest")
    rankings = {}
    for name, rel in (header.get("rankings") or {}).items():
        rankings[name] = read_ranking_csv(os.path.join(base, rel), name)
    return Manifest(entities, header["feature_dim"], rankings, header.get("metadata", {}))


def dumps_manifest(manifest, ranking_files=None):
    header = {
        "kind": "header",
        "feature_dim": manifest.feature_dim,
        "rankings": ranking_files or {},
        "metadata": manifest.metadata,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for e in manifest.entities:
        works = [{"year": int(y), "features": [float(v) for v in row]} for y, feats in e.career for row in feats]
        lines.append(json.dumps({"kind": "entity", "entity_id": e.entity_id, "works": works}, sort_keys=True))
    return "\n".join(lines) + "\n"


def save_manifest(manifest, path):
    """Write the manifest plus one ``<stem>.<ranking>.csv`` sidecar per ranking."""
    stem = os.path.splitext(os.path.basename(path))[0]
    files = {name: f"{stem}.{name}.csv" for name in manifest.rankings}
    base = os.path.dirname(os.path.abspath(path))
    for name, rel in files.items():
        write_ranking_csv(os.path.join(base, rel), manifest.rankings[name])
    with open(path, "w") as f:
        f.write(dumps_manifest(manifest, files))


# --------------------------------------------------------------------------
# synthetic corpora
# --------------------------------------------------------------------------

RULE_DOCS = {
    "static_mean": "raw = mean of feature 0 over every instance of the career (order-free)",
    "early_burst": "one timestep b per career gets +3 on feature 0 for all its instances; "
                   "raw = exp(-b/3) + 0.05 * mean of feature 1 over all instances",
    "epoch_drift": "raw = mean over timesteps of a hidden per-year offset (seeded random walk) "
                   "+ 0.25 * mean of feature 0 over all instances",
}


@dataclass
class SynthConfig:
    n_entities: int = 200
    year_range: tuple = (1850, 1990)
    career_len_range: tuple = (5, 10)
    instances_range: tuple = (1, 4)
    d_in: int = 8
    target_rule: str = "early_burst"
    seed: int = 0
    burst_amplitude: float = 3.0

    def validate(self):
        for name in ("year_range", "career_len_range", "instances_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range ({lo}, {hi})")
        if self.career_len_range[0] < 1 or self.instances_range[0] < 1:
            raise ValueError("careers and timesteps need at least one element")
        if self.n_entities < 1 or self.d_in < 2:
            raise ValueError("need n_entities >= 1 and d_in >= 2")
        if self.target_rule not in TARGET_RULES:
            raise ValueError(f"unknown target_rule {self.target_rule!r}; expected one of {TARGET_RULES}")
        span = self.year_range[1] - self.year_range[0] + 1
        if span < 2 * self.career_len_range[1]:
            raise ValueError(f"year_range spans {span} years; careers need up to {2 * self.career_len_range[1]}")
        return self


def year_offsets(cfg):
    """Hidden per-year offset used by ``epoch_drift``."""
    rng = np.random.default_rng([cfg.seed, 7919])
    lo, hi = cfg.year_range
    walk = np.cumsum(rng.normal(0.0, 0.3, size=hi - lo + 1))
    return {lo + i: float(w) for i, w in enumerate(walk - walk.mean())}


def rule_value(rule, career, burst=None, offsets=None):
    """Raw (pre-rank) target of a career ``[(year, features)]`` under ``rule``."""
    allx = np.concatenate([f for _, f in career])
    if rule == "static_mean":
        return float(allx[:, 0].mean())
    if rule == "early_burst":
        return float(np.exp(-burst / 3.0) + 0.05 * allx[:, 1].mean())
    if rule == "epoch_drift":
        return float(np.mean([offsets[y] for y, _ in career]) + 0.25 * allx[:, 0].mean())
    raise ValueError(f"unknown target_rule {rule!r}")


def synthesize(cfg):
    """Seeded synthetic corpus with one ranking named ``"target"``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.year_range
    offsets = year_offsets(cfg) if cfg.target_rule == "epoch_drift" else None
    entities, raw, bursts = [], {}, {}
    width = len(str(cfg.n_entities))
    for k in range(cfg.n_entities):
        eid = f"e{k:0{width}d}"
        n = int(rng.integers(cfg.career_len_range[0], cfg.career_len_range[1] + 1))
        gaps = rng.choice([1, 1, 1, 2], size=n - 1)
        span = int(gaps.sum())
        start = int(rng.integers(lo, hi - span + 1))
        years = [start] + [start + int(g) for g in np.cumsum(gaps)]
        career = []
        for y in years:
            m = int(rng.integers(cfg.instances_range[0], cfg.instances_range[1] + 1))
            career.append((y, rng.normal(0.0, 1.0, size=(m, cfg.d_in))))
        b = None
        if cfg.target_rule == "early_burst":
            b = int(rng.integers(0, n))
            career[b][1][:, 0] += cfg.burst_amplitude
            bursts[eid] = b
        entities.append(EntityRecord(eid, career))
        raw[eid] = rule_value(cfg.target_rule, career, b, offsets)
    meta = {
        "generator": "set2seq.synthesize",
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "target_rule": cfg.target_rule,
        "rule": RULE_DOCS[cfg.target_rule],
    }
    if bursts:
        meta["burst_positions"] = bursts
    return Manifest(entities, cfg.d_in, {"target": Ranking.from_scores(raw, "target")}, meta)


def toy_featurizer(image_stub, d_in):
    """Deterministic unit vector derived from a hash of ``image_stub``."""
    if not image_stub:
        raise ValueError("toy_featurizer needs non-empty bytes")
    seed = int.from_bytes(hashlib.blake2b(bytes(image_stub), digest_size=16).digest(), "little")
    v = np.random.default_rng(seed).normal(size=d_in)
    return v / np.linalg.norm(v)


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

@dataclass
class SplitAssignment:
    train: list
    val: list
    test: list
    strategy: str
    seed: object = None
    metadata: dict = field(default_factory=dict)

    def of(self, entity_id):
        for name in ("train", "val", "test"):
            if entity_id in getattr(self, name):
                return name
        raise KeyError(entity_id)

    def subset(self, name):
        if name == "all":
            return self.train + self.val + self.test
        if name not in ("train", "val", "test"):
            raise KeyError(f"unknown split {name!r}; expected train, val, test or all")
        return getattr(self, name)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_split(manifest, ranking, seed=0, n_strata=10, fractions=(0.7, 0.1, 0.2)):
    """Rank-quantile strata, each shuffled and cut 70/10/20."""
    ids = manifest.ids
    ext = ranking.extended(ids)
    order = sorted(ids, key=lambda e: (ext[e], e))
    if len(order) < n_strata:
        warnings.warn(f"{len(order)} entities cannot fill {n_strata} strata; using {max(len(order), 1)}")
        n_strata = max(len(order), 1)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for stratum in np.array_split(np.array(order, dtype=object), n_strata):
        members = list(stratum)
        rng.shuffle(members)
        n = len(members)
        n_train = _round_half_up(fractions[0] * n)
        n_val = min(_round_half_up(fractions[1] * n), n - n_train)
        train += members[:n_train]
        val += members[n_train:n_train + n_val]
        test += members[n_train + n_val:]
    return SplitAssignment(sorted(train), sorted(val), sorted(test), "stratified", seed,
                           {"n_strata": n_strata, "stratify_on": ranking.name or "ranking", "fractions": list(fractions)})


def time_series_split(manifest, train_before=TS_TRAIN_BEFORE, test_from=TS_TEST_FROM):
    """Career start < train_before -> train, < test_from -> val, else test."""
    train, val, test = [], [], []
    for e in manifest.entities:
        s = e.start_year
        (train if s < train_before else val if s < test_from else test).append(e.entity_id)
    for name, bucket in (("train", train), ("val", val), ("test", test)):
        if not bucket:
            warnings.warn(f"time-series split leaves the {name} set empty")
    return SplitAssignment(sorted(train), sorted(val), sorted(test), "time_series", None,
                           {"train_before": train_before, "test_from": test_from})


def make_split(manifest, strategy, ranking=None, seed=0):
    if strategy == "stratified":
        if ranking is None:
            raise ValueError("stratified split needs a ranking")
        return stratified_split(manifest, ranking, seed)
    if strategy == "time_series":
        return time_series_split(manifest)
    raise ValueError(f"unknown split strategy {strategy!r}")


def split_rows(manifest, split):
    lookup = {e: "train" for e in split.train}
    lookup.update({e: "val" for e in split.val})
    lookup.update({e: "test" for e in split.test})
    return [(eid, lookup[eid]) for eid in manifest.ids]


def write_split_csv(path, manifest, split):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["entity_id", "split"])
        w.writerows(split_rows(manifest, split))


def read_split_csv(path):
    buckets = {"train": [], "val": [], "test": []}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["entity_id", "split"]:
            raise ValueError(f"{path}:1: expected header 'entity_id,split'")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 or row[1] not in buckets:
                raise ValueError(f"{path}:{lineno}: malformed split row {row!r}")
            buckets[row[1]].append(row[0])
    return SplitAssignment(sorted(buckets["train"]), sorted(buckets["val"]), sorted(buckets["test"]), "file")
