"""Command-line entry point: ``set2seq {train,eval,split,aggregate,synth,analyze}``.

Exit codes: 0 success, 1 configuration or usage error, 2 numeric failure.
"""
import argparse
import csv
import json
import os
import sys

import numpy as np

from . import analysis
from .checkpoint import CheckpointError
from .data import (ManifestError, SynthConfig, load_manifest, make_split, read_split_csv,
                   save_manifest, synthesize, write_split_csv)
from .ranking import (TIE_POLICIES, CSVFormatError, borda_aggregate, ranking_targets,
                      read_ranking_csv, write_ranking_csv)
from .set_encoders import ConfigError
from .train import NumericError, RunConfig, load_model, metrics_for, predict, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _pair(text, kind=int):
    parts = [kind(p) for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(parts)


def cmd_train(args):
    cfg = RunConfig.from_toml(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    res = train(cfg)
    best = res.history[res.best_epoch]
    print(json.dumps({"out_dir": res.out_dir, "best_epoch": res.best_epoch, **best}, sort_keys=True))


def _split_for(args, manifest, meta):
    if args.split_file:
        return read_split_csv(args.split_file)
    info = meta["split"]
    ranking = manifest.rankings.get(info["ranking"])
    return make_split(manifest, info["strategy"], ranking, info["seed"])


def cmd_eval(args):
    model, meta = load_model(args.checkpoint)
    min_inst = args.min_instances if args.min_instances is not None else meta["config"]["data"]["min_instances"]
    manifest = load_manifest(args.manifest, min_inst)
    if manifest.feature_dim != meta["feature_dim"]:
        raise UsageError(f"checkpoint expects feature_dim {meta['feature_dim']}, manifest has {manifest.feature_dim}")
    names = args.rankings.split(",") if args.rankings else [meta["split"]["ranking"]]
    for n in names:
        if n not in manifest.rankings:
            raise UsageError(f"unknown ranking {n!r}; available: {sorted(manifest.rankings)}")
    tie_policy = args.tie_policy or meta["config"]["tie_policy"]
    split = _split_for(args, manifest, meta)
    ids = split.subset(args.split)
    if not ids:
        raise UsageError(f"split {args.split!r} is empty")
    seqs = {s.entity_id: s for s in manifest.sequences()}
    preds = predict(model, [seqs[e] for e in ids])
    records = []
    for n in names:
        targets = ranking_targets(manifest.rankings[n], manifest.ids)
        m = metrics_for([targets[e] for e in ids], preds, tie_policy)
        records.append({"ranking_name": n, "split": args.split, "tau": m["tau"], "mae": m["mae"],
                        "K": m["K"], "tie_policy": tie_policy})
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, f"eval_{args.split}.jsonl"), "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    with open(os.path.join(out, f"predictions_{args.split}.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["entity_id", "prediction"])
        for e, p in zip(ids, preds):
            w.writerow([e, repr(float(p))])
    for r in records:
        print(json.dumps(r, sort_keys=True))


def cmd_split(args):
    manifest = load_manifest(args.manifest, args.min_instances)
    ranking = None
    if args.strategy == "stratified":
        ranking = manifest.ranking(args.ranking)
    split = make_split(manifest, args.strategy, ranking, args.seed)
    write_split_csv(args.out, manifest, split)
    print(json.dumps({"out": args.out, "train": len(split.train), "val": len(split.val), "test": len(split.test)}))


def cmd_aggregate(args):
    rankings = [read_ranking_csv(p, os.path.basename(p)) for p in args.rankings]
    agg = borda_aggregate(rankings)
    write_ranking_csv(args.out, agg)
    print(json.dumps({"out": args.out, "entities": len(agg), "positions": agg.n_positions}))


def cmd_synth(args):
    cfg = SynthConfig(n_entities=args.n_entities, year_range=args.years, career_len_range=args.careers,
                      instances_range=args.instances, d_in=args.d_in, target_rule=args.rule, seed=args.seed)
    manifest = synthesize(cfg)
    save_manifest(manifest, args.out)
    print(json.dumps({"out": args.out, "entities": len(manifest.entities), "rule": args.rule}))


def cmd_analyze(args):
    model, meta = load_model(args.checkpoint)
    manifest = load_manifest(args.manifest, meta["config"]["data"]["min_instances"])
    seqs = {s.entity_id: s for s in manifest.sequences()}
    for e in (args.entity_a, args.entity_b):
        if e not in seqs:
            raise UsageError(f"entity {e!r} not in manifest")
    try:
        panels, ca, cb = analysis.analyze(model, seqs[args.entity_a], seqs[args.entity_b], args.first_n)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    ya = seqs[args.entity_a].years[:args.first_n]
    yb = seqs[args.entity_b].years[:args.first_n]
    for name, mat in panels.items():
        analysis.write_matrix_csv(os.path.join(args.out, f"{name}.csv"), mat,
                                  [f"{args.entity_a}@{y}" for y in ya], [f"{args.entity_b}@{y}" for y in yb])
    print(json.dumps({"out": args.out, "panels": list(panels)}))


def build_parser():
    p = _Parser(prog="set2seq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a TOML run config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    e.add_argument("--split-file", help="entity_id,split CSV; default recomputes the training split")
    e.add_argument("--rankings", help="comma-separated ranking names (default: the training ranking)")
    e.add_argument("--tie-policy", choices=TIE_POLICIES)
    e.add_argument("--min-instances", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("split", help="write an entity_id,split CSV")
    s.add_argument("--manifest", required=True)
    s.add_argument("--strategy", default="stratified", choices=["stratified", "time_series"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ranking", default="target")
    s.add_argument("--min-instances", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    a = sub.add_parser("aggregate", help="Borda-aggregate entity_id,rank CSVs")
    a.add_argument("rankings", nargs="+")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_aggregate)

    y = sub.add_parser("synth", help="generate a synthetic manifest")
    y.add_argument("--out", required=True)
    y.add_argument("--rule", default="early_burst", choices=["static_mean", "early_burst", "epoch_drift"])
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--n-entities", type=int, default=200)
    y.add_argument("--d-in", type=int, default=8)
    y.add_argument("--years", type=_pair, default=(1850, 1990))
    y.add_argument("--careers", type=_pair, default=(5, 10))
    y.add_argument("--instances", type=_pair, default=(1, 4))
    y.set_defaults(func=cmd_synth)

    z = sub.add_parser("analyze", help="cosine-distance panels for two entities")
    z.add_argument("--checkpoint", required=True)
    z.add_argument("--manifest", required=True)
    z.add_argument("--entity-a", required=True)
    z.add_argument("--entity-b", required=True)
    z.add_argument("--first-n", type=int, default=10)
    z.add_argument("--out", required=True)
    z.set_defaults(func=cmd_analyze)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ManifestError, CSVFormatError, CheckpointError,
            KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
