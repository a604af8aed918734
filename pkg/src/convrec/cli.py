"""Operator entry point: ingest -> train -> train-blender -> eval ->
simulate -> bench -> serve.

Hyperparameters live in key=value config files; flags carry paths, seeds and
workload sizes. Every artifact-producing command writes its outputs plus a
manifest.json into --out, and commands verify their inputs against the
manifests that produced them.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

from .errors import ConvrecError

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _set_threads(n: int) -> None:
    # must happen before numpy is imported anywhere in this process
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args) -> int:
    from . import data, manifest

    t0 = time.time()
    ratios = tuple(float(x) for x in args.ratios.split(","))
    table = data.read_tables(args.ratings, args.reviews, args.vocab)
    dataset = data.build_dataset(table, threshold=args.threshold,
                                 ratios=ratios, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds_path = out / "dataset.bin"
    dataset.save(ds_path)
    summary = dataset.split_manifest()
    man = manifest.RunManifest(
        command="ingest",
        config={"threshold": args.threshold, "ratios": list(ratios)},
        seeds={"seed": args.seed},
        inputs={"ratings": manifest.hash_entry(args.ratings),
                "reviews": manifest.hash_entry(args.reviews),
                "vocab": manifest.hash_entry(args.vocab)},
        outputs={"dataset": manifest.hash_entry(ds_path)},
        wall_clock_seconds=time.time() - t0)
    manifest.write_manifest(out, man)
    print(f"ingested {summary['n_users']} users x {summary['n_items']} items "
          f"x {summary['n_keyphrases']} keyphrases")
    nnz = summary["interactions"]
    print(f"split nnz train/val/test: {nnz['train']}/{nnz['val']}/{nnz['test']} "
          f"(forced-train users: {summary['forced_train_users']})")
    print(f"wrote {ds_path}")
    return 0


def cmd_train(args) -> int:
    from dataclasses import asdict

    from . import manifest
    from .data import Dataset
    from .model import MmsVae

    t0 = time.time()
    manifest.verify_artifact(args.dataset)
    dataset = Dataset.load(args.dataset)
    cfg = manifest.train_config_from_file(args.config, seed=args.seed)
    model = MmsVae(dataset.n_items, dataset.n_keyphrases, cfg)

    def progress(record):
        if record["val_ndcg"] is not None:
            print(f"epoch {record['epoch'] + 1}/{cfg.epochs} "
                  f"loss {record['loss']:.4f} val-ndcg {record['val_ndcg']:.4f}")

    history = model.fit(dataset, progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.bin"
    model.save(model_path)
    hist_path = out / "history.csv"
    _write_csv(hist_path, ["epoch", "loss", "beta", "val_ndcg"],
               [[r["epoch"], _fmt(r["loss"]), _fmt(r["beta"]),
                 _fmt(r["val_ndcg"])] for r in history.records])
    man = manifest.RunManifest(
        command="train", config=asdict(cfg), seeds={"seed": cfg.seed},
        inputs={"dataset": manifest.hash_entry(args.dataset),
                "config": manifest.hash_entry(args.config)},
        outputs={"model": manifest.hash_entry(model_path),
                 "history": manifest.hash_entry(hist_path)},
        wall_clock_seconds=time.time() - t0)
    manifest.write_manifest(out, man)
    print(f"best epoch {history.best_epoch + 1} "
          f"val-ndcg {history.best_val_ndcg:.4f}")
    print(f"wrote {model_path}")
    return 0


def cmd_train_blender(args) -> int:
    from dataclasses import asdict

    from . import manifest
    from .critiquing import (dump_synthetic_tuples, generate_synthetic_tuples,
                             save_blender, train_blender)
    from .data import Dataset
    from .errors import ConfigError
    from .model import MmsVae

    t0 = time.time()
    manifest.verify_artifact(args.dataset)
    manifest.verify_artifact(args.model)
    dataset = Dataset.load(args.dataset)
    model = MmsVae.load(args.model)
    if model.n_items != dataset.n_items or \
            model.n_keyphrases != dataset.n_keyphrases:
        raise ConfigError("model and dataset disagree on catalog sizes")
    cfg = manifest.blender_config_from_file(args.config, seed=args.seed)
    params, history = train_blender(model, dataset, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    blender_path = out / "blender.bin"
    save_blender(blender_path, params, cfg, model.cfg.latent_dim)
    tuples, _ = generate_synthetic_tuples(dataset, cfg.seed)
    tuples_path = out / "tuples.csv"
    dump_synthetic_tuples(tuples_path, tuples, dataset.ki_binary)
    hist_path = out / "history.csv"
    _write_csv(hist_path, ["step", "loss", "val_falling_map"],
               [[r["step"], _fmt(r["loss"]), _fmt(r["val_fm"])]
                for r in history.records])
    man = manifest.RunManifest(
        command="train-blender", config=asdict(cfg), seeds={"seed": cfg.seed},
        inputs={"dataset": manifest.hash_entry(args.dataset),
                "model": manifest.hash_entry(args.model),
                "config": manifest.hash_entry(args.config)},
        outputs={"blender": manifest.hash_entry(blender_path),
                 "tuples": manifest.hash_entry(tuples_path),
                 "history": manifest.hash_entry(hist_path)},
        wall_clock_seconds=time.time() - t0)
    manifest.write_manifest(out, man)
    print(f"best step {history.best_step} falling-map "
          f"{history.best_falling_map:.4f} "
          f"({history.n_train_tuples} train / {history.n_val_tuples} "
          f"held-out tuples, {history.n_skipped} skipped)")
    print(f"wrote {blender_path}")
    return 0


def _metric_rows(name: str, stats: dict) -> list[list]:
    return [[name, metric, _fmt(stat.mean), _fmt(stat.ci95),
             stat.n_evaluated, stat.n_skipped]
            for metric, stat in sorted(stats.items())]


def cmd_eval(args) -> int:
    import numpy as np

    from . import manifest
    from .data import Dataset
    from .errors import ConfigError
    from .metrics import (evaluate_explanations, evaluate_rankings,
                          popularity_scores)
    from .model import MmsVae

    t0 = time.time()
    manifest.verify_artifact(args.dataset)
    manifest.verify_artifact(args.model)
    dataset = Dataset.load(args.dataset)
    model = MmsVae.load(args.model)
    if model.n_items != dataset.n_items:
        raise ConfigError("model and dataset disagree on catalog sizes")
    ns = tuple(int(x) for x in args.ns.split(","))
    if args.split == "test":
        r_eval, k_eval = dataset.r_test, dataset.k_test
    elif args.split == "val":
        r_eval, k_eval = dataset.r_val, dataset.k_val
    else:
        raise ConfigError(f"unknown split {args.split!r}")

    def scores_r(rows):
        z = np.asarray(model.encode_r(dataset.r_train[rows].toarray()).mu)
        return np.asarray(model.decode_r(z))

    def scores_k(rows):
        z = np.asarray(model.encode_k(dataset.k_binary[rows]).mu)
        return np.asarray(model.decode_r(z))

    pop = popularity_scores(dataset.r_train)

    def scores_pop(rows):
        return np.tile(pop, (len(rows), 1))

    rec_rows = []
    for name, fn in (("mms-vae-r", scores_r), ("mms-vae-k", scores_k),
                     ("pop", scores_pop)):
        stats = evaluate_rankings(fn, r_eval, mask_matrix=dataset.r_train,
                                  ns=ns)
        rec_rows.extend(_metric_rows(name, stats))

    def expl_model(rows):
        z = np.asarray(model.encode_r(dataset.r_train[rows].toarray()).mu)
        return np.asarray(model.decode_k(z))

    def expl_user_pop(rows):
        return dataset.k_counts[rows].astype(float)

    kp_pop = dataset.ki_counts.sum(axis=0).astype(float)

    def expl_item_pop(rows):
        return np.tile(kp_pop, (len(rows), 1))

    expl_ns = tuple(n for n in ns if n <= dataset.n_keyphrases) or \
        (dataset.n_keyphrases,)
    expl_rows = []
    for name, fn in (("mms-vae", expl_model), ("user-pop", expl_user_pop),
                     ("item-pop", expl_item_pop)):
        stats = evaluate_explanations(fn, k_eval, ns=expl_ns)
        expl_rows.extend(_metric_rows(name, stats))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["scorer", "metric", "mean", "ci95", "n_evaluated", "n_skipped"]
    rec_path = out / "recommendations.csv"
    expl_path = out / "explanations.csv"
    _write_csv(rec_path, header, rec_rows)
    _write_csv(expl_path, header, expl_rows)
    man = manifest.RunManifest(
        command="eval",
        config={"split": args.split, "ns": list(ns)},
        inputs={"dataset": manifest.hash_entry(args.dataset),
                "model": manifest.hash_entry(args.model)},
        outputs={"recommendations": manifest.hash_entry(rec_path),
                 "explanations": manifest.hash_entry(expl_path)},
        wall_clock_seconds=time.time() - t0)
    manifest.write_manifest(out, man)
    for row in rec_rows:
        if row[1] == "ndcg":
            print(f"{row[0]:>10} ndcg {row[2]} ± {row[3]}")
    print(f"wrote {rec_path} and {expl_path}")
    return 0


def cmd_simulate(args) -> int:
    from dataclasses import asdict

    from . import manifest
    from .critiquing import GRU, load_blender
    from .data import Dataset
    from .errors import ConfigError
    from .model import MmsVae
    from .simulate import simulate

    t0 = time.time()
    manifest.verify_artifact(args.dataset)
    manifest.verify_artifact(args.model)
    dataset = Dataset.load(args.dataset)
    model = MmsVae.load(args.model)
    cfg = manifest.sim_config_from_file(args.config, seed=args.seed)
    blender_params = None
    inputs = {"dataset": manifest.hash_entry(args.dataset),
              "model": manifest.hash_entry(args.model),
              "config": manifest.hash_entry(args.config)}
    if cfg.blender == GRU:
        if not args.blender:
            raise ConfigError("config asks for the gru blender; "
                              "pass --blender with its checkpoint")
        manifest.verify_artifact(args.blender)
        blender_params, _, latent = load_blender(args.blender)
        if latent != model.cfg.latent_dim:
            raise ConfigError("blender latent dimension does not match model")
        inputs["blender"] = manifest.hash_entry(args.blender)
    result = simulate(model, dataset, cfg, blender_params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary_path = out / "summary.csv"
    _write_csv(summary_path,
               ["blender", "selector", "top_n", "n_candidates", "max_turns",
                "seed", "success_rate", "success_ci", "session_length",
                "session_length_ci", "n_users", "n_sessions", "n_aborted"],
               [[cfg.blender, cfg.selector, cfg.top_n, cfg.n_candidates,
                 cfg.max_turns, cfg.seed, _fmt(result.success_rate),
                 _fmt(result.success_ci), _fmt(result.session_length),
                 _fmt(result.session_length_ci), result.n_users,
                 result.n_sessions, result.n_aborted]])
    sessions_path = out / "sessions.csv"
    _write_csv(sessions_path,
               ["user", "target", "success", "turns", "aborted"],
               [[r.user, r.target, int(r.success), r.turns, int(r.aborted)]
                for r in result.records])
    man = manifest.RunManifest(
        command="simulate", config=asdict(cfg), seeds={"seed": cfg.seed},
        inputs=inputs,
        outputs={"summary": manifest.hash_entry(summary_path),
                 "sessions": manifest.hash_entry(sessions_path)},
        wall_clock_seconds=time.time() - t0)
    manifest.write_manifest(out, man)
    print(f"{cfg.blender}/{cfg.selector}: success "
          f"{result.success_rate:.3f} ± {result.success_ci:.3f}, "
          f"length {result.session_length:.2f} "
          f"({result.n_sessions} sessions, {result.n_aborted} aborted)")
    print(f"wrote {summary_path}")
    return 0


def cmd_bench(args) -> int:
    from . import manifest
    from .critiquing import load_blender
    from .data import Dataset
    from .errors import ConfigError
    from .model import MmsVae
    from .simulate import measure_latency

    t0 = time.time()
    manifest.verify_artifact(args.dataset)
    manifest.verify_artifact(args.model)
    manifest.verify_artifact(args.blender)
    dataset = Dataset.load(args.dataset)
    model = MmsVae.load(args.model)
    blender_params, _, latent = load_blender(args.blender)
    if latent != model.cfg.latent_dim:
        raise ConfigError("blender latent dimension does not match model")
    report = measure_latency(model, dataset, blender_params,
                             n_sessions=args.sessions, max_turns=args.turns,
                             runs=args.runs, n_throughput=args.throughput,
                             seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    per_turn_path = out / "per_turn.csv"
    _write_csv(per_turn_path, ["turn", "median_ms"],
               [[i + 1, _fmt(ms)] for i, ms in enumerate(report.per_turn_ms)])
    summary_path = out / "summary.csv"
    _write_csv(summary_path,
               ["per_critique_ms", "per_critique_ms_ci", "throughput_critiques",
                "throughput_seconds", "optimizer_steps", "runs", "n_sessions"],
               [[_fmt(report.per_critique_ms), _fmt(report.per_critique_ms_ci),
                 report.throughput_critiques, _fmt(report.throughput_seconds),
                 report.optimizer_steps, report.runs, report.n_sessions]])
    man = manifest.RunManifest(
        command="bench",
        config={"sessions": args.sessions, "runs": args.runs,
                "turns": args.turns, "throughput": args.throughput},
        seeds={"seed": args.seed},
        inputs={"dataset": manifest.hash_entry(args.dataset),
                "model": manifest.hash_entry(args.model),
                "blender": manifest.hash_entry(args.blender)},
        outputs={"per_turn": manifest.hash_entry(per_turn_path),
                 "summary": manifest.hash_entry(summary_path)},
        wall_clock_seconds=time.time() - t0)
    manifest.write_manifest(out, man)
    print(f"per-critique {report.per_critique_ms:.3f} ms "
          f"± {report.per_critique_ms_ci:.3f}; "
          f"{report.throughput_critiques} critiques in "
          f"{report.throughput_seconds:.2f} s; "
          f"optimizer steps {report.optimizer_steps}")
    return 0


def cmd_serve(args) -> int:
    from . import manifest
    from .errors import ConfigError
    from .service import ServiceConfig, run_service

    manifest.verify_artifact(args.dataset)
    manifest.verify_artifact(args.model)
    raw = manifest.read_config(args.config) if args.config else {}
    allowed = {"host", "port", "top_n", "max_turns", "session_ttl", "blender"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown service config keys: {sorted(unknown)}; "
                          f"valid keys: {sorted(allowed)}")
    kwargs = {}
    for key, value in raw.items():
        if key in ("port", "top_n", "max_turns"):
            kwargs[key] = int(value)
        elif key == "session_ttl":
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    if args.blender:
        manifest.verify_artifact(args.blender)
    cfg = ServiceConfig(dataset_path=args.dataset, model_path=args.model,
                        blender_path=args.blender, **kwargs)
    run_service(cfg)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convrec",
        description="conversational recommender: train, critique, serve")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (1 = bit-reproducible runs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a dataset bundle from CSVs")
    p.add_argument("--ratings", required=True)
    p.add_argument("--reviews", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=3.5)
    p.add_argument("--ratios", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the recommender")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-blender", help="fit the critique blender")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_blender)

    p = sub.add_parser("eval", help="recommendation and explanation metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("test", "val"))
    p.add_argument("--ns", default="5,10,20")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="multi-step critiquing simulation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--blender", default=None,
                   help="blender checkpoint (required for the gru blender)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="serving latency probe")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--blender", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sessions", type=int, default=20)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--turns", type=int, default=10)
    p.add_argument("--throughput", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the session service")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--blender", default=None)
    p.add_argument("--config", default=None,
                   help="service config (host, port, top_n, max_turns, "
                        "session_ttl, blender)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        _set_threads(args.threads)
    try:
        return args.func(args)
    except ConvrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
