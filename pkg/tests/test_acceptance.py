"""Acceptance criteria, one test each.

Every test ends in a single ``report`` call that prints ``PASS``/``FAIL`` with
the measured quantity; the lines are repeated at the end of the pytest run.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import itertools
import math
import time
import warnings

import numpy as np
import pytest
from conftest import SET2SEQ_VARIANTS, report, tiny_spec

from set2seq.cli import main
from set2seq.data import (EntityRecord, Manifest, SynthConfig, save_manifest, stratified_split, synthesize,
                          time_series_split)
from set2seq.gradcheck import check_gradients
from set2seq.ranking import Ranking, borda_aggregate, kendall_tau, mae, mse_loss
from set2seq.seq_encoder import ModelSpec, SetSequence, build_model
from set2seq.set_encoders import SetEncoderSpec, build_set_encoder
from set2seq.train import RunConfig, evaluate, train


# ---------------------------------------------------------------- 1

def test_criterion_1_permutation_invariance():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = {}
    for variant in SET2SEQ_VARIANTS:
        dev = 0.0
        for case in range(100):
            d_in = int(rng.integers(1, 17))
            n = int(rng.integers(1, 33))
            pooling = ("max", "mean")[case % 2]
            enc = build_set_encoder(SetEncoderSpec(variant=variant, pooling=pooling, d_in=d_in), rng)
            x = rng.normal(size=(n, d_in))
            dev = max(dev, float(np.max(np.abs(enc(x).data - enc(x[rng.permutation(n)]).data))))
        worst[variant] = dev
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-9 for v in worst.values()) and elapsed < 10
    report(1, ok, f"max deviation {max(worst.values()):.2e} over 4x100 cases (< 1e-9), {elapsed:.1f}s (< 10s)")


# ---------------------------------------------------------------- 2

def _career(rng, n_steps, d_in=4):
    years = 1900 + np.arange(n_steps) * 2
    return SetSequence.from_sets("c", years, [rng.normal(size=(int(rng.integers(1, 5)), d_in)) for _ in years], 0.5)


def _shuffle(rng, n):
    while True:
        p = rng.permutation(n)
        if np.any(p != np.arange(n)):
            return p


def test_criterion_2_ablation_invariance():
    rng = np.random.default_rng(202)
    blind = ModelSpec(use_positional=False, use_temporal=False)
    worst = 0.0
    for draw in range(100):
        seq = _career(rng, 6)
        m = build_model(blind, 4, seq.years, seed=draw)
        worst = max(worst, abs(m.predict(seq) - m.predict(seq.reordered(_shuffle(rng, 6)))))
    aware = ModelSpec(use_positional=True, use_temporal=False)
    changed = 0
    for draw in range(100):
        seq = _career(rng, 6)
        m = build_model(aware, 4, seq.years, seed=1000 + draw)
        if abs(m.predict(seq) - m.predict(seq.reordered(_shuffle(rng, 6)))) > 1e-6:
            changed += 1
    report(2, worst < 1e-9 and changed >= 95,
           f"blind deviation {worst:.2e} (< 1e-9); order-aware draws changed {changed}/100 (>= 95)")


# ---------------------------------------------------------------- 3

GRAD_CASES = [("set2seq", v) for v in SET2SEQ_VARIANTS] + [
    ("temporal_deepsets", "deepsets"),
    ("flattened_transformer", "deepsets"),
    ("static_deepsets", "deepsets"),
    ("static_set_transformer", "st_sab_pma"),
    ("static_set_transformer", "st_isab_pma"),
    ("static_set_transformer", "st_isab_pma_sab"),
    ("vanilla", "deepsets"),
]


def test_criterion_3_gradient_oracle(toy_sample):
    # Biases start at zero, so a fully inactive hidden row sits exactly on a
    # ReLU kink where a central difference sees slope 1/2. Checking at a
    # jittered (generic) parameter point keeps finite differences meaningful.
    jitter = np.random.default_rng(303)
    t0 = time.perf_counter()
    worst, where = 0.0, ""
    for kind, variant in GRAD_CASES:
        for pooling in (("max", "mean") if variant == "deepsets" else ("max",)):
            spec = tiny_spec(kind, variant, pooling)
            model = build_model(spec, toy_sample.feature_dim, toy_sample.years, seed=3)
            for p in model.parameters():
                p.data += jitter.normal(0.0, 0.1, p.data.shape)
            errs = check_gradients(lambda: mse_loss([toy_sample.target], model(toy_sample)),
                                   model.named_parameters(), h=1e-5)
            name, err = max(errs.items(), key=lambda kv: kv[1])
            if err > worst:
                worst, where = err, f"{kind}/{variant}/{pooling}:{name}"
    elapsed = time.perf_counter() - t0
    report(3, worst < 1e-4 and elapsed < 60,
           f"max relative error {worst:.2e} at {where} (< 1e-4), {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------- 4

def _tau_oracle(t, p, policy):
    pairs = inv2 = 0
    for i, j in itertools.combinations(range(len(t)), 2):
        dt, dp = np.sign(t[i] - t[j]), np.sign(p[i] - p[j])
        if dt == 0 and policy == "skip_ties":
            continue
        pairs += 1
        if dt == 0 and dp == 0:
            continue
        if dt == 0 or dp == 0:
            inv2 += 1
        elif dt != dp:
            inv2 += 2
    return float("nan") if pairs == 0 else (pairs - inv2) / pairs


def test_criterion_4_metric_oracles():
    checked = mismatches = 0
    for k in range(2, 7):
        bases = [np.arange(k) / 8.0, np.array([(i // 2) / 8.0 for i in range(k)])]
        for target in bases:
            for base in bases:
                for perm in itertools.permutations(range(k)):
                    pred = base[list(perm)]
                    for policy in ("skip_ties", "strict_eq9"):
                        a, b = kendall_tau(target, pred, policy), _tau_oracle(target, pred, policy)
                        mismatches += not (a == b or (math.isnan(a) and math.isnan(b)))
                    mismatches += mae(target, pred) != sum(abs(x - y) for x, y in zip(target, pred)) / k
                    checked += 1
        x = np.arange(k, dtype=float)
        mismatches += kendall_tau(x, x) != 1.0
        mismatches += kendall_tau(x, x[::-1]) != -1.0
    report(4, mismatches == 0, f"{checked} orderings for K <= 6, {mismatches} mismatches against brute force")


# ---------------------------------------------------------------- 5

BORDA_CASES = [
    ([{"a": 1, "b": 2, "c": 3}], {"a": 1, "b": 2, "c": 3}),
    # full reversal: every entity ties
    ([{"a": 1, "b": 2, "c": 3}, {"a": 3, "b": 2, "c": 1}], {"a": 1, "b": 1, "c": 1}),
    ([{"a": 1, "b": 2, "c": 3}, {"b": 1, "a": 2, "c": 3}], {"a": 1, "b": 1, "c": 2}),
    # scores a 2+0, b 1+1, c 0+2, d 0+3 (unranked c, d tie last in the first list)
    ([{"a": 1, "b": 2}, {"d": 1, "c": 2, "b": 3, "a": 4}], {"d": 1, "a": 2, "b": 2, "c": 2}),
    # a 1+1, b 1+0, c 0+2
    ([{"a": 1, "b": 1, "c": 2}, {"c": 1, "a": 2, "b": 3}], {"a": 1, "c": 1, "b": 2}),
    # a 2+2+0, b 1+0+2, c 0+1+1
    ([{"a": 1, "b": 2, "c": 3}, {"a": 1, "c": 2, "b": 3}, {"b": 1, "c": 2, "a": 3}], {"a": 1, "b": 2, "c": 3}),
]


def test_criterion_5_borda_oracle():
    fixtures_ok = sum(borda_aggregate([Ranking(r) for r in rs]).entries == want for rs, want in BORDA_CASES)
    rng = np.random.default_rng(505)
    ids = [f"e{i}" for i in range(10)]
    invariant = 0
    for _ in range(100):
        rs = [Ranking({e: int(rng.integers(1, 6)) for e in ids if rng.random() < 0.8} or {ids[0]: 1})
              for _ in range(int(rng.integers(2, 6)))]
        base = borda_aggregate(rs, ids).entries
        perm = rng.permutation(len(rs))
        invariant += borda_aggregate([rs[i] for i in perm], ids).entries == base
    report(5, fixtures_ok == len(BORDA_CASES) and invariant == 100,
           f"{fixtures_ok}/{len(BORDA_CASES)} fixtures, {invariant}/100 order-invariant collections")


# ---------------------------------------------------------------- 6

def test_criterion_6_split_protocol():
    m = synthesize(SynthConfig(n_entities=849, seed=6, career_len_range=(1, 2), instances_range=(1, 1), d_in=2))
    r = m.rankings["target"]
    worst = 0.0
    for seed in range(5):
        s = stratified_split(m, r, seed)
        order = sorted(m.ids, key=lambda e: (r[e], e))
        for stratum in np.array_split(np.array(order, dtype=object), 10):
            members = set(stratum)
            for part, frac in (("train", 0.7), ("val", 0.1), ("test", 0.2)):
                got = len(members & set(getattr(s, part)))
                worst = max(worst, abs(got - frac * len(stratum)))
    starts = [1929, 1930, 1950, 1951]
    ts = time_series_split(Manifest([EntityRecord(str(y), [(y, np.ones((1, 1)))]) for y in starts], 1))
    exact = (ts.train, ts.val, ts.test) == (["1929"], ["1930", "1950"], ["1951"])
    report(6, worst <= 1 and exact,
           f"stratified max per-stratum deviation {worst:.2f} entities (<= 1); time-series boundaries exact={exact}")


# ---------------------------------------------------------------- 7 and 8

def _fit(manifest, kind, pooling, seed):
    cfg = RunConfig.from_dict({
        "seed": seed,
        "model": {"kind": kind, "hidden": 64, "n_layers": 2, "use_positional": True, "use_temporal": True,
                  "set_encoder": {"variant": "deepsets", "pooling": pooling, "d_hidden": 32}},
        "data": {"min_instances": 1},
        "optimizer": {"lr": 1e-3, "batch_size": 8},
        "early_stopping": {"patience": 15, "max_epochs": 150},
    })
    t0 = time.perf_counter()
    res = train(cfg, manifest, write=False)
    seqs = {s.entity_id: s for s in manifest.sequences("target")}
    metrics, _ = evaluate(res.model, [seqs[e] for e in res.split.test])
    return metrics["tau"], time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_7_order_sensitivity():
    rows, wins, slowest = [], 0, 0.0
    for seed in range(5):
        m = synthesize(SynthConfig(n_entities=200, d_in=8, career_len_range=(5, 10),
                                   target_rule="early_burst", seed=seed))
        tau_s2s, sec = _fit(m, "set2seq", "max", seed)
        tau_static, sec_b = _fit(m, "static_deepsets", "max", seed)
        tau_tds, sec_c = _fit(m, "temporal_deepsets", "max", seed)
        slowest = max(slowest, sec, sec_b, sec_c)
        wins += tau_s2s >= 0.6 and tau_s2s > tau_static and tau_s2s > tau_tds
        rows.append(f"{tau_s2s:.3f}/{tau_static:.3f}/{tau_tds:.3f}")
    report(7, wins >= 4 and slowest < 600,
           f"{wins}/5 seeds with set2seq tau >= 0.6 above both baselines (>= 4); "
           f"tau set2seq/static/temporal per seed: {', '.join(rows)}; slowest run {slowest:.0f}s (< 600s)")


@pytest.mark.slow
def test_criterion_8_order_free_control():
    gaps = []
    for seed in range(3):
        m = synthesize(SynthConfig(n_entities=200, d_in=8, career_len_range=(5, 10),
                                   target_rule="static_mean", seed=seed))
        tau_static, _ = _fit(m, "static_deepsets", "mean", seed)
        tau_s2s, _ = _fit(m, "set2seq", "mean", seed)
        gaps.append(tau_s2s - tau_static)
    report(8, max(gaps) <= 0.05,
           f"set2seq minus static DeepSets tau per seed {[round(g, 3) for g in gaps]} (each <= 0.05)")


# ---------------------------------------------------------------- 9

def _oracle_components(model, years, seq, first_n):
    H = model.spec.hidden
    table = {y: model.temporal.weights.data[i] for i, y in enumerate(years)}
    out = []
    for i, ts in enumerate(seq.timesteps[:first_n]):
        s = model.set_encoder(ts.features).data
        j = np.arange(H // 2)
        u = np.empty(H)
        u[0::2] = [math.sin(i / model.spec.pe_base ** (2 * jj / H)) for jj in j]
        u[1::2] = [math.cos(i / model.spec.pe_base ** (2 * jj / H)) for jj in j]
        v = table.get(ts.year, np.zeros(H))
        out.append(s + u + v)
    return np.array(out)


def _cosine_oracle(a, b):
    d = np.empty((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            d[i, j] = 1.0 - float(a[i] @ b[j]) / (np.linalg.norm(a[i]) * np.linalg.norm(b[j]))
    return d


def _read_panel(path):
    rows = path.read_text().splitlines()[1:]
    return np.array([[float(v) for v in r.split(",")[1:]] for r in rows])


def test_criterion_9_analysis_pipeline(tmp_path, capsys):
    m = synthesize(SynthConfig(n_entities=20, d_in=4, career_len_range=(8, 10), seed=9))
    save_manifest(m, tmp_path / "m.jsonl")
    (tmp_path / "c.toml").write_text(
        f'seed = 0\noutput_dir = "{tmp_path / "run"}"\n[model]\nhidden = 16\nn_heads = 2\nn_layers = 1\n'
        f'[model.set_encoder]\nd_hidden = 8\n[data]\nmanifest = "{tmp_path / "m.jsonl"}"\nmin_instances = 1\n'
        f'[early_stopping]\nmax_epochs = 2\n')
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(["train", "--config", str(tmp_path / "c.toml")]) == 0
    ckpt = str(tmp_path / "run" / "checkpoint.bin")
    a, b, c = m.ids[:3]
    codes = []
    for x, y, out in ((a, b, "ab"), (c, b, "cb"), (a, a, "aa")):
        codes.append(main(["analyze", "--checkpoint", ckpt, "--manifest", str(tmp_path / "m.jsonl"),
                           "--entity-a", x, "--entity-b", y, "--first-n", "8", "--out", str(tmp_path / out)]))
    capsys.readouterr()
    names = ("set", "positional", "temporal", "composed", "encoded")
    emitted = all((tmp_path / d / f"{n}.csv").exists() for d in ("ab", "cb", "aa") for n in names)
    pe_same = np.array_equal(_read_panel(tmp_path / "ab" / "positional.csv"),
                             _read_panel(tmp_path / "cb" / "positional.csv"))
    diag_zero = all(np.all(np.diag(_read_panel(tmp_path / "aa" / f"{n}.csv")) == 0.0) for n in names)

    from set2seq.train import load_model
    model, meta = load_model(ckpt)
    seqs = {s.entity_id: s for s in m.sequences()}
    oracle = _cosine_oracle(_oracle_components(model, meta["years"], seqs[a], 8),
                            _oracle_components(model, meta["years"], seqs[b], 8))
    err = float(np.max(np.abs(_read_panel(tmp_path / "ab" / "composed.csv") - oracle)))
    ok = codes == [0, 0, 0] and emitted and pe_same and diag_zero and err < 1e-12
    report(9, ok, f"five panels emitted={emitted}, PE panel entity-independent={pe_same}, "
                  f"self-comparison diagonals zero={diag_zero}, composed vs oracle {err:.1e} (< 1e-12)")


# ---------------------------------------------------------------- 10

def test_criterion_10_reproducibility(tmp_path, capsys):
    m = synthesize(SynthConfig(n_entities=40, d_in=4, seed=10))
    save_manifest(m, tmp_path / "m.jsonl")
    (tmp_path / "c.toml").write_text(
        f'seed = 3\n[model]\nhidden = 16\nn_heads = 2\n[model.set_encoder]\nd_hidden = 8\n'
        f'[data]\nmanifest = "{tmp_path / "m.jsonl"}"\nmin_instances = 1\n[early_stopping]\nmax_epochs = 3\n')
    for run in ("r1", "r2"):
        assert main(["train", "--config", str(tmp_path / "c.toml"), "--out", str(tmp_path / run)]) == 0
    capsys.readouterr()
    same = {f: (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
            for f in ("checkpoint.bin", "metrics.jsonl")}
    report(10, all(same.values()), f"byte-identical across two runs: {same}")
