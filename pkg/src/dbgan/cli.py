"""Command-line interface: ``dbgan {train,eval,sweep-dim,export,prototypes}``.

Run directory layout::

    manifest.json         resolved config, data paths, seeds, version, timestamps
    config.cfg            resolved config in key = value form
    history.csv           one row per (seed, epoch)
    checkpoints/          seed_<s>.ckpt (+ seed_<s>_epoch_<e>.ckpt when periodic)
    prototypes/           seed_<s>_indices.csv, seed_<s>_centers.csv (pde prior)
    metrics.json          written by ``eval``
    embeddings.csv        written by ``export``

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 training divergence.
stdout carries only machine-readable output; logs go to stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .graph import GraphFormatError, load_graph, normalize_adjacency, split_edges
from .metrics import evaluate, summarize
from .nn import CheckpointError, encoder_forward, load_checkpoint, save_checkpoint
from .autodiff import no_grad
from .prior import PriorError, estimate_prior, write_prototypes
from .training import (
    HISTORY_COLUMNS,
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    build_context,
    prepare_features,
    read_config,
    train,
    write_config,
)

log = logging.getLogger("dbgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
DEFAULT_SWEEP = "8,16,32,64,128,256,512,1024"


class DataError(Exception):
    pass


def _version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------- arguments


def _add_data_args(p):
    p.add_argument("--edges", help="edge list file")
    p.add_argument("--features", help="feature matrix file")
    p.add_argument("--labels", help="label file (needed for clustering)")


def _add_config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="first seed (default 0)")
    p.add_argument("--runs", type=int, help="number of consecutive seeds")
    p.add_argument("--q", type=int, help="latent dimension")
    p.add_argument("--m", type=int, help="number of DPP prototypes")
    p.add_argument("--alpha", type=float, help="reconstruction weight")
    p.add_argument("--lambda", dest="lambda_gp", type=float, help="gradient-penalty weight")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-pde", action="store_true", help="N(0, I) prior instead of the DPP/KDE prior")
    p.add_argument("--no-bal", action="store_true", help="reconstruction-only training (keeps G)")
    p.add_argument(
        "--no-bal-strict-gae",
        action="store_true",
        help="reconstruction-only training on the adjacency alone (graph autoencoder)",
    )
    p.add_argument("--feature-loss", choices=["bce", "mse"])


def _add_common(p):
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--threads", type=int, help="BLAS threads (env DBGAN_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbgan", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per seed")
    _add_common(p)
    _add_data_args(p)
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate the checkpoints of a run directory")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--task", choices=["lp", "cluster", "both"], default="lp")
    p.add_argument("--runs", type=int, help="evaluate only the first RUNS seeds")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-dim", help="train and evaluate over several latent dimensions")
    _add_common(p)
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--q-values", default=DEFAULT_SWEEP, help=f"comma-separated (default {DEFAULT_SWEEP})")
    p.set_defaults(func=cmd_sweep_dim)

    p = sub.add_parser("export", help="write node embeddings as CSV")
    _add_common(p)
    p.add_argument("--edges", help="edge list file (default: from the manifest)")
    p.add_argument("--features", help="feature matrix file (default: from the manifest)")
    p.add_argument(
        "--labels", nargs="?", const=True, default=None,
        help="append a label column; an optional PATH overrides the manifest's label file",
    )
    p.add_argument("--seed", type=int, help="which trained seed (default: first)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("prototypes", help="select DPP prototypes and write them with KDE centers")
    _add_common(p)
    _add_data_args(p)
    _add_config_args(p)
    p.set_defaults(func=cmd_prototypes)
    return parser


def resolve_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(read_config(args.config))
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
    for key in ("seed", "q", "m", "alpha", "lambda_gp", "lr", "epochs"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "feature_loss", None):
        values["feature_loss"] = args.feature_loss
    if getattr(args, "no_pde", False):
        values["use_pde"] = False
    if getattr(args, "no_bal", False) or getattr(args, "no_bal_strict_gae", False):
        values["use_bal"] = False
    if getattr(args, "no_bal_strict_gae", False):
        values["strict_gae"] = True
    return TrainConfig.from_dict(values)


def _data_paths(args, manifest=None):
    paths = dict((manifest or {}).get("data", {}))
    for key in ("edges", "features", "labels"):
        v = getattr(args, key, None)
        if isinstance(v, str) and v:
            paths[key] = str(Path(v).resolve())
    if not paths.get("edges") or not paths.get("features"):
        raise ConfigError("--edges and --features are required")
    return paths


def _load(paths):
    try:
        return load_graph(paths["edges"], paths["features"], paths.get("labels"))
    except FileNotFoundError as exc:
        raise DataError(f"missing data file: {exc.filename}") from None
    except GraphFormatError as exc:
        raise DataError(str(exc)) from None


def _seeds(config: TrainConfig, runs: Optional[int]) -> List[int]:
    runs = 1 if runs is None else runs
    if runs < 1:
        raise ConfigError("--runs must be >= 1")
    return [config.seed + r for r in range(runs)]


def _read_manifest(out: Path) -> dict:
    path = out / "manifest.json"
    if not path.exists():
        raise DataError(f"{path} not found; train first")
    return json.loads(path.read_text(encoding="utf-8"))


def _checkpoint(out: Path, seed: int):
    path = out / "checkpoints" / f"seed_{seed}.ckpt"
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    try:
        return load_checkpoint(path)[0]
    except CheckpointError as exc:
        raise DataError(str(exc)) from None


# ---------------------------------------------------------------- commands


def _train_seeds(g, config: TrainConfig, seeds, out: Path, history_rows, tag=""):
    """Train one model per seed, writing checkpoints and prototype files."""
    ckdir = out / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    results = []
    for seed in seeds:
        cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
        split = split_edges(g, seed=seed)
        log.info("training %sseed %d (%s)", tag, seed, _mode_name(cfg))

        def on_epoch(epoch, params, history, seed=seed, cfg=cfg):
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(ckdir / f"{tag}seed_{seed}_epoch_{epoch}.ckpt", params, {"seed": seed, "epoch": epoch})

        prepared = prepare_features(g, cfg.feature_loss)
        init_ss, prior_ss, _ = np.random.SeedSequence(cfg.seed).spawn(3)
        ctx = build_context(prepared, split, cfg, np.random.default_rng(prior_ss))
        if ctx.prototypes is not None:
            pdir = out / "prototypes"
            pdir.mkdir(exist_ok=True)
            write_prototypes(pdir / f"{tag}seed_{seed}_indices.csv", pdir / f"{tag}seed_{seed}_centers.csv",
                             ctx.prior, ctx.prototypes)
        try:
            params, history = train(g, split, cfg, callback=on_epoch, context=ctx)
        except TrainingDiverged as exc:
            history_rows.extend((seed, r) for r in exc.history.records)
            raise
        history_rows.extend((seed, r) for r in history.records)
        save_checkpoint(ckdir / f"{tag}seed_{seed}.ckpt", params, {"seed": seed, "config": cfg.to_dict()})
        results.append((seed, split, params))
    return results


def _mode_name(cfg: TrainConfig) -> str:
    if not cfg.use_bal:
        base = "gae" if cfg.strict_gae else "no-bal"
        return base + ("" if cfg.use_pde else "+no-pde")
    return "dbgan" if cfg.use_pde else "no-pde"


def _write_history(path: Path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", *HISTORY_COLUMNS])
        for seed, r in rows:
            row = [seed]
            for c in HISTORY_COLUMNS:
                v = r.get(c)
                if c == "epoch":
                    row.append(int(v))
                elif v is None or v != v:
                    row.append("")
                else:
                    row.append(repr(float(v)))
            w.writerow(row)


def _manifest(config, paths, seeds, command):
    return {
        "command": command,
        "config": config.to_dict(),
        "data": paths,
        "seeds": seeds,
        "version": _version(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "threads": os.environ.get("DBGAN_THREADS"),
    }


def cmd_train(args) -> int:
    config = resolve_config(args)
    paths = _data_paths(args)
    seeds = _seeds(config, args.runs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = _load(paths)
    manifest = _manifest(config, paths, seeds, "train")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_config(out / "config.cfg", config)
    rows = []
    try:
        _train_seeds(g, config, seeds, out, rows)
    finally:
        _write_history(out / "history.csv", rows)
    print(json.dumps({"out": str(out), "seeds": seeds}))
    return EXIT_OK


def _evaluate_run(g, out: Path, seeds, task: str, tag="") -> dict:
    lp_auc, lp_ap, accs, nmis, aris = [], [], [], [], []
    want_cluster = task in ("cluster", "both")
    if want_cluster and g.labels is None:
        raise DataError("clustering needs --labels")
    manifest_cfg = _read_manifest(out)["config"] if (out / "manifest.json").exists() else {}
    feature_loss = manifest_cfg.get("feature_loss", "bce")
    prepared = prepare_features(g, feature_loss)
    for seed in seeds:
        params = _checkpoint_tagged(out, seed, tag)
        split = split_edges(g, seed=seed)
        lp, cl = evaluate(params, prepared, split, seed=seed, cluster_task=want_cluster)
        lp_auc.append(lp.auc)
        lp_ap.append(lp.ap)
        if cl is not None:
            accs.append(cl.acc)
            nmis.append(cl.nmi)
            aris.append(cl.ari)
    result = {}
    if task in ("lp", "both"):
        for name, vals in (("auc", lp_auc), ("ap", lp_ap)):
            mean, std, se = summarize(vals)
            result.update({name: mean, f"{name}_std": std, f"{name}_se": se})
    if want_cluster:
        for name, vals in (("acc", accs), ("nmi", nmis), ("ari", aris)):
            mean, std, se = summarize(vals)
            result.update({name: mean, f"{name}_std": std, f"{name}_se": se})
    result["seed_count"] = len(seeds)
    return result


def _checkpoint_tagged(out: Path, seed: int, tag: str):
    if not tag:
        return _checkpoint(out, seed)
    path = out / "checkpoints" / f"{tag}seed_{seed}.ckpt"
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    return load_checkpoint(path)[0]


def cmd_eval(args) -> int:
    out = Path(args.out)
    manifest = _read_manifest(out)
    paths = _data_paths(args, manifest)
    seeds = manifest["seeds"]
    if args.runs is not None:
        if args.runs < 1 or args.runs > len(seeds):
            raise ConfigError(f"--runs must lie in [1, {len(seeds)}]")
        seeds = seeds[: args.runs]
    g = _load(paths)
    result = _evaluate_run(g, out, seeds, args.task)
    text = json.dumps(result, sort_keys=True)
    (out / "metrics.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _parse_q_values(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --q-values {text!r}") from None
    if not values:
        raise ConfigError("--q-values is empty")
    if len(set(values)) != len(values):
        raise ConfigError(f"duplicate values in --q-values {text!r}")
    if min(values) < 1:
        raise ConfigError("latent dimensions must be positive")
    return values


def cmd_sweep_dim(args) -> int:
    config = resolve_config(args)
    q_values = _parse_q_values(args.q_values)
    paths = _data_paths(args)
    seeds = _seeds(config, args.runs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = _load(paths)
    manifest = _manifest(config, paths, seeds, "sweep-dim")
    manifest["q_values"] = q_values
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rows = []
    history_rows = []
    try:
        for q in q_values:
            cfg = TrainConfig.from_dict({**config.to_dict(), "q": q})
            tag = f"q{q}_"
            _train_seeds(g, cfg, seeds, out, history_rows, tag=tag)
            res = _evaluate_run(g, out, seeds, "lp", tag=tag)
            rows.append([q, res["auc"], res["ap"], res["auc_std"], res["ap_std"], len(seeds)])
    finally:
        _write_history(out / "history.csv", history_rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["q", "auc", "ap", "auc_std", "ap_std", "runs"])
    for r in rows:
        w.writerow([r[0], *(repr(float(v)) for v in r[1:5]), r[5]])
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_export(args) -> int:
    out = Path(args.out)
    manifest = _read_manifest(out)
    paths = _data_paths(args, manifest)
    seed = manifest["seeds"][0] if args.seed is None else args.seed
    with_labels = args.labels is not None
    g = _load(paths)
    if with_labels and g.labels is None:
        raise DataError("--labels requested but the graph has no labels")
    params = _checkpoint(out, seed)
    g = prepare_features(g, manifest["config"].get("feature_loss", "bce"))
    split = split_edges(g, seed=seed)
    adj = normalize_adjacency(g.with_edges(split.train_pos), self_loops=True)
    with no_grad():
        h = encoder_forward(g.features, adj, params).data
    buf = io.StringIO()
    for i, row in enumerate(h):
        cells = [repr(float(v)) for v in row]
        if with_labels:
            cells.append(str(int(g.labels[i])))
        buf.write(",".join(cells) + "\n")
    path = out / "embeddings.csv"
    path.write_text(buf.getvalue(), encoding="utf-8")
    print(json.dumps({"embeddings": str(path), "rows": int(h.shape[0]), "cols": int(h.shape[1])}))
    return EXIT_OK


def cmd_prototypes(args) -> int:
    config = resolve_config(args)
    paths = _data_paths(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = prepare_features(_load(paths), config.feature_loss)
    adj = normalize_adjacency(g, self_loops=False)
    prior, protos = estimate_prior(
        g, adj, q=config.q, m=max(config.m, config.q), seed=config.seed, mode="pde",
        bandwidth=config.bandwidth, exact_threshold=config.exact_threshold,
    )
    write_prototypes(out / "prototypes.csv", out / "prototype_centers.csv", prior, protos)
    print(json.dumps({"m": len(protos), "method": protos.method, "bandwidth": prior.bandwidth}))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def _thread_limit(args):
    threads = getattr(args, "threads", None)
    if threads is None and os.environ.get("DBGAN_THREADS"):
        try:
            threads = int(os.environ["DBGAN_THREADS"])
        except ValueError:
            raise ConfigError("DBGAN_THREADS must be an integer") from None
    if threads is None:
        return contextlib.nullcontext()
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        with _thread_limit(args):
            return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PriorError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
