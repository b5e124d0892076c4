"""Pointwise ranking loss, rank metrics, Borda aggregation and cosine analysis."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import tensor as T

TIE_POLICIES = ("skip_ties", "strict_eq9")


@dataclass
class Ranking:
    """entity id -> rank position (1 is best, ties allowed), kept dense."""

    entries: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        for eid, r in self.entries.items():
            if int(r) != r or r < 1:
                raise ValueError(f"rank of {eid!r} must be an integer >= 1, got {r!r}")
        self.entries = dense_ranks(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, eid):
        return self.entries[eid]

    def __contains__(self, eid):
        return eid in self.entries

    @property
    def n_positions(self):
        return max(self.entries.values(), default=0)

    def extended(self, universe):
        """Cover ``universe``; every unranked entity shares one last position."""
        missing = [e for e in universe if e not in self.entries]
        if not missing:
            return Ranking(dict(self.entries), self.name)
        last = self.n_positions + 1
        entries = dict(self.entries)
        entries.update({e: last for e in missing})
        return Ranking(entries, self.name)

    def ordered(self):
        """(entity_id, rank) sorted by rank then id."""
        return sorted(self.entries.items(), key=lambda kv: (kv[1], kv[0]))

    @classmethod
    def from_scores(cls, scores, name=""):
        """Higher score ranks better; equal scores tie."""
        distinct = sorted(set(scores.values()), reverse=True)
        pos = {s: i + 1 for i, s in enumerate(distinct)}
        return cls({e: pos[s] for e, s in scores.items()}, name)


def dense_ranks(entries):
    distinct = sorted(set(entries.values()))
    remap = {r: i + 1 for i, r in enumerate(distinct)}
    return {e: remap[r] for e, r in entries.items()}


# --------------------------------------------------------------------------
# targets
# --------------------------------------------------------------------------

def minmax_scale(values):
    """Scale to [0, 1]; a constant input maps to 0.5 everywhere."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("minmax_scale needs at least one value")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def ranking_targets(ranking, universe=None):
    """Regression targets in [0, 1]: best rank -> 1, worst -> 0."""
    r = ranking.extended(universe) if universe is not None else ranking
    ids = list(r.entries)
    ranks = np.array([r[e] for e in ids], dtype=np.float64)
    scores = ranks.max() - ranks
    return dict(zip(ids, minmax_scale(scores)))


# --------------------------------------------------------------------------
# loss and metrics
# --------------------------------------------------------------------------

def mse_loss(y, y_hat):
    """Mean squared error.  With a ``Tensor`` prediction the result is differentiable."""
    if isinstance(y_hat, T.Tensor):
        target = np.asarray(y, dtype=np.float64).reshape(y_hat.shape)
        diff = T.sub(y_hat, T.Tensor(target))
        return T.scale(T.sum_all(T.mul(diff, diff)), 1.0 / diff.size)
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.size == 0:
        raise ValueError("mse_loss needs at least one pair")
    if y.shape != y_hat.shape:
        raise ValueError(f"mse_loss: {y.size} targets vs {y_hat.size} predictions")
    return float(np.mean((y - y_hat) ** 2))


def mae(target, predicted):
    t = [float(x) for x in target]
    p = [float(x) for x in predicted]
    if not t:
        raise ValueError("mae needs at least one pair")
    if len(t) != len(p):
        raise ValueError(f"mae: {len(t)} targets vs {len(p)} predictions")
    return math.fsum(abs(a - b) for a, b in zip(t, p)) / len(t)


def kendall_tau(target, predicted, tie_policy="skip_ties"):
    """Kendall's tau as ``1 - 2 * inversions / pairs``.

    Pairs tied in exactly one list count as half an inversion.  Under
    ``skip_ties`` pairs tied in the target are dropped from the count and from
    the denominator; ``strict_eq9`` keeps all K(K-1)/2 pairs.
    """
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"unknown tie_policy {tie_policy!r}; expected one of {TIE_POLICIES}")
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"kendall_tau: {t.size} targets vs {p.size} predictions")
    if t.size < 2:
        raise ValueError("kendall_tau needs at least two items")
    pairs, target_ties, discordant, pred_only, target_only = K.kendall_counts(t, p)
    twice_inv = 2 * discordant + pred_only
    if tie_policy == "skip_ties":
        pairs -= target_ties
        if pairs == 0:
            return float("nan")
    else:
        twice_inv += target_only
    # integer numerator and denominator: one correctly rounded division
    return (pairs - twice_inv) / pairs


# --------------------------------------------------------------------------
# Borda aggregation
# --------------------------------------------------------------------------

def borda_scores(rankings, universe):
    universe = list(universe)
    if not universe:
        raise ValueError("borda_aggregate needs a non-empty universe")
    totals = {e: 0 for e in universe}
    for r in rankings:
        ext = r.extended(universe)
        n = ext.n_positions
        for e in universe:
            totals[e] += n - ext[e]
    return totals


def borda_aggregate(rankings, universe=None, name="borda"):
    """Sum per-ranking scores ``n_positions - rank`` and re-rank densely."""
    rankings = list(rankings)
    if not rankings:
        raise ValueError("borda_aggregate needs at least one ranking")
    if universe is None:
        universe = sorted(set().union(*(r.entries for r in rankings)))
    return Ranking.from_scores(borda_scores(rankings, universe), name)


# --------------------------------------------------------------------------
# cosine analysis
# --------------------------------------------------------------------------

def _check_norms(mat, ids):
    norms = np.sqrt(np.sum(mat * mat, axis=1))
    for i, nrm in enumerate(norms):
        if nrm == 0.0:
            raise ValueError(f"zero-norm vector: {ids[i]!r}")


def pairwise_cosine_matrix(a, b):
    """Cosine distances ``1 - cos`` between rows of ``a`` and rows of ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    _check_norms(a, [f"a[{i}]" for i in range(len(a))])
    _check_norms(b, [f"b[{j}]" for j in range(len(b))])
    d = K.cosine_distance_matrix(np.ascontiguousarray(a), np.ascontiguousarray(b))
    d = np.clip(d, 0.0, 2.0)
    same = np.all(a[:, None, :] == b[None, :, :], axis=2)
    d[same] = 0.0
    return d


def cosine_knn(query, corpus, k):
    """Ids of the ``k`` corpus vectors closest in cosine distance; ties by id."""
    corpus = list(corpus)
    if k > len(corpus):
        raise ValueError(f"k={k} exceeds corpus size {len(corpus)}")
    ids = [c[0] for c in corpus]
    mat = np.array([c[1] for c in corpus], dtype=np.float64)
    _check_norms(mat, ids)
    q = np.asarray(query, dtype=np.float64)
    _check_norms(q[None], ["query"])
    dist = pairwise_cosine_matrix(q[None], mat)[0]
    order = sorted(range(len(ids)), key=lambda i: (dist[i], ids[i]))
    return [ids[i] for i in order[:k]]


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

class CSVFormatError(ValueError):
    pass


def read_ranking_csv(path, name=None):
    entries = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["entity_id", "rank"]:
            raise CSVFormatError(f"{path}:1: expected header 'entity_id,rank'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise CSVFormatError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            eid, rank = row[0].strip(), row[1].strip()
            try:
                r = int(rank)
            except ValueError:
                raise CSVFormatError(f"{path}:{lineno}: rank {rank!r} is not an integer") from None
            if r < 1:
                raise CSVFormatError(f"{path}:{lineno}: rank must be >= 1")
            if eid in entries:
                raise CSVFormatError(f"{path}:{lineno}: duplicate entity {eid!r}")
            entries[eid] = r
    return Ranking(entries, name or "")


def write_ranking_csv(path, ranking):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["entity_id", "rank"])
        for eid, r in ranking.ordered():
            w.writerow([eid, r])
