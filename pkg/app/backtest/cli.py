"""CLI: `python -m app.backtest.cli <verb>`.

Verbs: prepare, train, eval, cross-eval, synth, inspect. Every run writes its
outputs plus a manifest.json (inputs, seed, versions, outputs) into --out,
which defaults to $SRNN_OUTPUT_DIR/<verb> (or data/runs/<verb>).

Exit codes: 0 success, 2 usage/config, 3 data or file problems, 4 training
or model failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .. import __version__
from ..errors import ConfigError, SrnnError
from ..models.hyperparams import Hyperparams, TrainConfig
from ..services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..services.dataset import save_speeds
from ..services.graph import RoadGraph, load_adjacency, save_adjacency
from ..services.srnn import StructuralRNN, param_count
from ..services.synth import SynthConfig, generate, ring_graph
from ..utils.config import OUTPUT_DIR_ENV, get_settings
from . import HARNESS_VERSION
from .data import PreparedDataset, load_any, save_prepared
from .harness import BaselineKind, HistoricalAverage, cross_matrix, dropout_check, evaluate, evaluate_baseline
from .train import train

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.srnn"


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out) if args.out else get_settings().output_dir / args.verb
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(
    out: Path,
    args: argparse.Namespace,
    outputs: Dict[str, Path],
    data: Optional[Dict] = None,
) -> Path:
    settings = get_settings()
    options = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verb")}
    manifest = {
        "verb": args.verb,
        "options": options,
        "seed": getattr(args, "seed", None),
        "versions": {
            "app": __version__,
            "harness": HARNESS_VERSION,
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "python": sys.version.split()[0],
        },
        "outputs": {k: str(v) for k, v in sorted(outputs.items())},
        "env": {OUTPUT_DIR_ENV: settings.output_dir_env},
        "run_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if data is not None:
        manifest["data"] = data
    path = out / "manifest.json"
    with path.open("w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    logger.info("wrote manifest %s", path)
    return path


def _load_target(speeds: str, adj: str, split: float, seq_len: int) -> Tuple[RoadGraph, PreparedDataset]:
    g = load_adjacency(Path(adj))
    return g, load_any(Path(speeds), g.segment_ids, split, seq_len)


def _data_summary(prep: PreparedDataset) -> Dict:
    return {
        "rows": prep.dataset.num_steps,
        "imputed": int(prep.dataset.missing_mask.sum()),
        "imputation_fallbacks": dict(sorted(prep.imputation_fallbacks.items())),
        "split_index": prep.split_index,
        "scaler": prep.scaler.to_dict(),
    }


def _hyperparams(args: argparse.Namespace) -> Hyperparams:
    return Hyperparams(
        hidden=args.hidden,
        spatial_hidden=args.hidden,
        temporal_hidden=args.hidden,
        embed=args.embed,
        dropout=args.dropout,
    ).validate()


# -- verbs ---------------------------------------------------------------------

def cmd_prepare(args: argparse.Namespace) -> int:
    g, prep = _load_target(args.speeds, args.adj, args.split, args.seq_len)
    out = _out_dir(args)
    path = save_prepared(prep, out / "prepared.csv")
    print(
        f"[prepare] {g.n} segments, {prep.dataset.num_steps} rows, "
        f"{int(prep.dataset.missing_mask.sum())} imputed, split at {prep.split_index}, "
        f"scaler [{prep.scaler.min:.3f}, {prep.scaler.max:.3f}] km/h"
    )
    _write_manifest(out, args, {"prepared": path}, _data_summary(prep))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    g, prep = _load_target(args.speeds, args.adj, args.split, args.seq_len)
    hp = _hyperparams(args)
    config = TrainConfig(
        epochs=args.epochs,
        lr0=args.lr,
        decay=args.decay,
        grad_clip=args.grad_clip if args.grad_clip and args.grad_clip > 0 else None,
        seed=args.seed,
        shuffle=not args.no_shuffle,
        seq_len=args.seq_len,
    ).validate()
    name = args.name or Path(args.speeds).stem
    print(f"[train] source={name} nodes={g.n} spatial_edges={g.num_spatial_edges} params={param_count(hp):,}")

    def report(rec) -> None:
        print(f"[train] epoch={rec.epoch} lr={rec.lr:.6g} loss={rec.train_loss:.6g} eval_rmse={rec.eval_rmse:.4f}")

    result = train(g, prep, hp, config, source=name, on_epoch=report)
    out = _out_dir(args)
    ckpt_path = save_checkpoint(out / CHECKPOINT_NAME, result.checkpoint)
    history_csv = result.history.write_csv(out / "history.csv")
    history_json = out / "history.json"
    with history_json.open("w") as f:
        json.dump(result.history.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    if result.history.mean_eval_rmse is not None:
        print(f"[train] mean eval_rmse over {len(result.history.epochs)} epochs = {result.history.mean_eval_rmse:.4f} km/h")
    print(f"[train] OK -> {ckpt_path}")
    outputs = {"checkpoint": ckpt_path, "history_csv": history_csv, "history_json": history_json}
    _write_manifest(out, args, outputs, _data_summary(prep))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(Path(args.checkpoint))
    seq_len = args.seq_len or int(ckpt.meta.get("seq_len", 10))
    g, prep = _load_target(args.speeds, args.adj, args.split, seq_len)
    result = evaluate(ckpt, g, prep.eval, seq_len)
    history = HistoricalAverage.fit(prep.train)
    baselines = {
        kind.value: evaluate_baseline(kind, prep.eval, seq_len, history).to_dict() for kind in BaselineKind
    }
    report = {
        "checkpoint": {"source": ckpt.meta.get("source"), "param_count": param_count(ckpt.hyperparams)},
        "dataset": {"segments": list(g.segment_ids), "eval_rows": prep.eval.num_steps},
        "model": result.to_dict(),
        "baselines": baselines,
        "scaling": "checkpoint",
        "seq_len": seq_len,
    }
    if args.mc_samples:
        check = dropout_check(
            StructuralRNN(ckpt.params), g, prep.eval, ckpt.scaler, seq_len, args.mc_samples, args.seed
        )
        report["dropout_check"] = check.to_dict()
        logger.info(
            "dropout check: eval rmse %.4f, %d-sample mean rmse %.4f", check.eval_rmse, check.samples, check.mc_rmse
        )
    out = _out_dir(args)
    path = out / "report.json"
    with path.open("w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(
        f"[eval] rmse={result.rmse:.4f} mae={result.mae:.4f} km/h over {result.windows} windows "
        f"(persistence {baselines['persistence']['rmse']:.4f})"
    )
    _write_manifest(out, args, {"report": path})
    return 0


def _parse_target(text: str) -> Tuple[str, str, str]:
    name, sep, rest = text.partition("=")
    if not sep:
        name, rest = "", text
    parts = rest.split(",")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"--targets expects [NAME=]SPEEDS,ADJ, got {text!r}")
    speeds, adj = parts
    return name or Path(speeds).stem, speeds, adj


def cmd_cross_eval(args: argparse.Namespace) -> int:
    sources: Dict[str, Checkpoint] = {}
    for path in args.checkpoint:
        ckpt = load_checkpoint(Path(path))
        name = ckpt.meta.get("source") or Path(path).parent.name or Path(path).stem
        if name in sources:
            raise ConfigError(f"two checkpoints share the source name {name!r}")
        sources[name] = ckpt
    seq_len = args.seq_len or int(next(iter(sources.values())).meta.get("seq_len", 10))
    targets: Dict[str, Tuple[RoadGraph, PreparedDataset]] = {}
    for target in args.targets:
        name, speeds, adj = _parse_target(target)
        if name in targets:
            raise ConfigError(f"duplicate target name {name!r}")
        targets[name] = _load_target(speeds, adj, args.split, seq_len)

    report = cross_matrix(sources, targets, seq_len, seed=args.seed)
    out = _out_dir(args)
    json_path = report.write_json(out / "cross_report.json")
    csv_path = report.write_csv(out / "cross_report.csv")
    for s in report.sources:
        cells = "  ".join(f"{t}={report.rmse[s][t]:.4f}" for t in report.targets)
        print(f"[cross-eval] {s}: {cells}")
    if report.off_to_diagonal_ratio is not None:
        print(f"[cross-eval] off-diagonal / diagonal mean RMSE = {report.off_to_diagonal_ratio:.4f}")
    _write_manifest(out, args, {"report_json": json_path, "report_csv": csv_path})
    return 0


def _parse_chord(text: str) -> Tuple[int, int]:
    try:
        u, v = (int(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"--chord expects U:V, got {text!r}") from None
    return u, v


def cmd_synth(args: argparse.Namespace) -> int:
    if args.adj:
        g = load_adjacency(Path(args.adj))
    else:
        g = ring_graph(args.nodes, [_parse_chord(c) for c in args.chord], prefix=args.prefix)
    cfg = SynthConfig(
        graph=g,
        days=args.days,
        base=args.base,
        amplitude=args.amplitude,
        rho=args.rho,
        kappa=args.kappa,
        sigma=args.sigma,
        seed=args.seed,
    ).validate()
    ds = generate(cfg)
    out = _out_dir(args)
    speeds_path, adj_path = out / "speeds.csv", out / "adjacency.csv"
    save_speeds(ds, speeds_path)
    save_adjacency(g, adj_path)
    print(f"[synth] {g.n} segments x {ds.num_steps} rows -> {speeds_path}, {adj_path}")
    _write_manifest(out, args, {"speeds": speeds_path, "adjacency": adj_path})
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(Path(args.checkpoint))
    hp = ckpt.hyperparams
    print(f"[inspect] hyperparams {json.dumps(hp.to_dict(), sort_keys=True)}")
    print(f"[inspect] parameters {param_count(hp):,} (stored scalars {ckpt.params.num_scalars():,})")
    if ckpt.scaler is not None:
        print(f"[inspect] scaler [{ckpt.scaler.min:.6g}, {ckpt.scaler.max:.6g}] km/h")
    print(f"[inspect] meta {json.dumps(ckpt.meta, sort_keys=True)}")
    _write_manifest(_out_dir(args), args, {})
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    s = get_settings()
    parser = argparse.ArgumentParser(description="Structural RNN traffic speed forecasting.")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", help=f"Output directory (default: ${OUTPUT_DIR_ENV}/<verb> or data/runs/<verb>).")
        p.add_argument("--seed", type=int, default=s.seed)

    def data_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
        p.add_argument("--speeds", required=required, help="Speeds CSV or prepared cache.")
        p.add_argument("--adj", required=required, help="Adjacency CSV.")
        p.add_argument("--split", type=float, default=s.split, help="Training row fraction (default: 0.75).")

    p = sub.add_parser("prepare", help="Impute, split and scale a speeds CSV.")
    common(p)
    data_flags(p)
    p.add_argument("--seq-len", type=int, default=s.seq_len)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="Train a checkpoint.")
    common(p)
    data_flags(p)
    p.add_argument("--name", help="Source label stored in the checkpoint (default: speeds file stem).")
    p.add_argument("--epochs", type=int, default=s.epochs)
    p.add_argument("--seq-len", type=int, default=s.seq_len)
    p.add_argument("--hidden", type=int, default=s.hidden, help="Hidden size of all three LSTMs.")
    p.add_argument("--embed", type=int, default=s.embed)
    p.add_argument("--lr", type=float, default=s.lr)
    p.add_argument("--decay", type=float, default=s.decay)
    p.add_argument("--dropout", type=float, default=s.dropout)
    p.add_argument("--grad-clip", type=float, default=s.grad_clip, help="Max gradient L2 norm; 0 disables.")
    p.add_argument("--no-shuffle", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Score a checkpoint on a dataset's evaluation rows.")
    common(p)
    data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument(
        "--mc-samples", type=int, default=0,
        help="Also score the mean of N dropout-on passes next to eval mode (default: off).",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cross-eval", help="Checkpoints x datasets RMSE matrix.")
    common(p)
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--targets", action="append", required=True, help="[NAME=]SPEEDS,ADJ (repeatable).")
    p.add_argument("--split", type=float, default=s.split)
    p.add_argument("--seq-len", type=int, default=None)
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("synth", help="Generate a synthetic speeds/adjacency pair.")
    common(p)
    p.add_argument("--adj", help="Adjacency CSV (default: a ring of --nodes).")
    p.add_argument("--nodes", type=int, default=6)
    p.add_argument("--chord", action="append", default=[], help="Extra ring edge U:V (repeatable).")
    p.add_argument("--prefix", default="s")
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--base", type=float, default=50.0)
    p.add_argument("--amplitude", type=float, default=20.0)
    p.add_argument("--rho", type=float, default=0.6)
    p.add_argument("--kappa", type=float, default=0.3)
    p.add_argument("--sigma", type=float, default=3.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="Print a checkpoint's hyperparameters and size.")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s :: %(message)s",
    )

    try:
        return args.func(args)
    except SrnnError as e:
        print(f"[{args.verb}] FAIL: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"[{args.verb}] FAIL: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
