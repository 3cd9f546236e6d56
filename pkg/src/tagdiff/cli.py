"""Command-line interface: ``tagdiff <command> [flags]``."""
import argparse
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .diffusion import SignConfig, build_sign_features
from .ensemble import (
    accuracy,
    check_probabilities,
    format_table,
    write_records,
)
from .errors import LoadError, StageError
from .nn import save_model, standardize_features
from .pipeline import (
    HEADS,
    RunConfig,
    Prepared,
    fit_head,
    generate_synthetic,
    load_dataset,
    report_records,
    run_ablation,
    run_cascade,
    save_dataset,
    select_model,
)
from .sparse import SparseMatrix

log = logging.getLogger("tagdiff")


def _add_data_flags(p, splits=True, labels=True):
    p.add_argument("--edges", required=True, help="edge list, one 'u v' per line")
    p.add_argument("--features", required=True, help="STGF feature file")
    if labels:
        p.add_argument("--labels", required=True, help="one class id (or -1) per line")
    if splits:
        p.add_argument("--splits", nargs=3, required=True, metavar=("TRAIN", "VAL", "TEST"))


def _add_run_flags(p):
    p.add_argument("--config", help="JSON file mirroring RunConfig")
    p.add_argument("--seed", type=int, action="append", help="repeat to train several seeds")
    p.add_argument("--symmetrize", action=argparse.BooleanOptionalAction, default=None,
                   help="symmetrize the graph before GCN normalization (default on)")
    p.add_argument("--heads", nargs="+", choices=HEADS)
    p.add_argument("--epochs", type=int, help="override train.max_epochs")
    p.add_argument("--threads", type=int, help="worker threads for diffusion")


def build_parser():
    parser = argparse.ArgumentParser(prog="tagdiff", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-partition benchmark")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--p-intra", type=float, default=0.02)
    p.add_argument("--p-inter", type=float, default=0.002)
    p.add_argument("--noise", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("diffuse", help="write SIGN feature blocks as STGF files")
    _add_data_flags(p, splits=False, labels=False)
    p.add_argument("--splits", nargs=3, metavar=("TRAIN", "VAL", "TEST"),
                   help="standardize on the train split before diffusing")
    p.add_argument("--spt", nargs=3, type=int, default=[3, 0, 0], metavar=("S", "P", "T"))
    p.add_argument("--config", help="JSON file mirroring RunConfig (ppr settings)")
    p.add_argument("--symmetrize", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train one head")
    _add_data_flags(p)
    _add_run_flags(p)
    p.add_argument("--head", required=True, choices=HEADS)
    p.add_argument("--k", type=int, help="Simple-GCN power (default: first grid entry)")
    p.add_argument("--spt", nargs=3, type=int, metavar=("S", "P", "T"),
                   help="SIGN powers (default: first grid entry)")
    p.add_argument("--out", required=True, help="output directory")

    for name, text in (("select", "model selection over the diffusion grids"),
                       ("run", "full cascade with ensemble"),
                       ("ablate", "leave-one-out ensemble ablation")):
        p = sub.add_parser(name, help=text)
        _add_data_flags(p)
        _add_run_flags(p)
        p.add_argument("--out", help="results file (JSON lines)")

    p = sub.add_parser("eval", help="score a saved prediction matrix (.npy)")
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--splits", nargs=3, required=True, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    return parser


def _load_config(args):
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError("config", exc) from exc
    over = {}
    if getattr(args, "seed", None):
        over["seeds"] = tuple(args.seed)
    if getattr(args, "symmetrize", None) is not None:
        over["symmetrize"] = args.symmetrize
    if getattr(args, "heads", None):
        over["heads"] = tuple(args.heads)
    if getattr(args, "threads", None):
        over["n_threads"] = args.threads
    if getattr(args, "epochs", None):
        over["train"] = {**base.get("train", {}), "max_epochs": args.epochs,
                         "patience": min(base.get("train", {}).get("patience", 50), args.epochs)}
    try:
        return RunConfig.from_dict({**base, **over})
    except (TypeError, ValueError) as exc:
        raise StageError("config", exc) from exc


def _dataset(args):
    return load_dataset(args.edges, args.features, args.labels, args.splits)


def _emit(rows, title, out):
    print(format_table(rows, title))
    if out:
        write_records(out, rows)


def cmd_synth(args):
    ds = generate_synthetic(args.n, args.classes, args.dim, args.p_intra, args.p_inter,
                            args.noise, args.seed)
    paths = save_dataset(ds, args.out)
    print(json.dumps({**ds.summary(), "written": str(Path(args.out))}))
    return paths


def cmd_diffuse(args):
    cfg = _load_config(args)
    x = io.read_features(args.features)
    src, dst = io.read_edges(args.edges, x.shape[0])
    graph = SparseMatrix.from_edges(src, dst, x.shape[0])
    if args.splits:
        train_idx = io.read_index_file(args.splits[0], x.shape[0])
        x = standardize_features(x, train_idx)[0]
    feats = build_sign_features(graph, x, SignConfig(*args.spt, ppr=cfg.ppr), cfg.symmetrize,
                                cfg.n_threads, require_convergence=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for label, block in feats.blocks:
        io.write_features(out / (re.sub(r"\W", "_", label) + ".stgf"), block)
    print(json.dumps({"blocks": feats.labels, "out": str(out)}))


def cmd_train(args):
    cfg = _load_config(args)
    ds = _dataset(args)
    choice = None
    if args.head == "simple_gcn":
        choice = args.k if args.k is not None else cfg.simple_gcn_k[0]
    elif args.head == "sign":
        choice = tuple(args.spt) if args.spt else cfg.sign_grid[0]
    cfg = replace(cfg, heads=(args.head,))
    seed = cfg.seeds[0]
    model, probs, history = fit_head(Prepared(ds, cfg), args.head, seed, choice)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.stgm", model)
    np.save(out / "predictions.npy", probs)
    write_records(out / "history.jsonl", history)
    print(json.dumps({"head": args.head, "seed": seed, "epochs": len(history),
                      "val_acc": accuracy(probs, ds.labels, ds.val_idx),
                      "test_acc": accuracy(probs, ds.labels, ds.test_idx)}))


def cmd_select(args):
    cfg = _load_config(args)
    ds = _dataset(args)
    sel = select_model(ds, cfg, heads=[h for h in ("simple_gcn", "sign") if h in cfg.heads])
    records = []
    for head, s in sel.items():
        for sc in s["scores"] or [{"choice": s["choice"], "val_acc": None}]:
            records.append({"head": head, "choice": _jsonable(sc["choice"]),
                            "val_acc": sc["val_acc"], "chosen": sc["choice"] == s["choice"]})
    for r in records:
        acc = "n/a" if r["val_acc"] is None else f"{r['val_acc']:.4f}"
        mark = "  <- chosen" if r["chosen"] else ""
        print(f"{r['head']:<10} {str(r['choice']):<12} val_acc={acc}{mark}")
    if args.out:
        write_records(args.out, records)


def _jsonable(choice):
    return list(choice) if isinstance(choice, tuple) else choice


def cmd_run(args):
    cfg = _load_config(args)
    report = run_cascade(_dataset(args), cfg)
    title = f"Test accuracy over seeds {list(cfg.seeds)}"
    _emit(report_records(report), title, args.out)


def cmd_ablate(args):
    cfg = _load_config(args)
    rows = run_ablation(_dataset(args), cfg)
    _emit(rows, f"Ablation over seeds {list(cfg.seeds)}", args.out)


def cmd_eval(args):
    probs = check_probabilities(np.load(args.predictions))
    labels = io.read_labels(args.labels)
    n = labels.shape[0]
    if probs.shape[0] != n:
        raise LoadError(args.predictions, f"{probs.shape[0]} rows for {n} labels")
    which = ("train", "val", "test").index(args.split)
    idx = io.read_index_file(args.splits[which], n)
    print(json.dumps({"split": args.split, "accuracy": accuracy(probs, labels, idx)}))


COMMANDS = {"synth": cmd_synth, "diffuse": cmd_diffuse, "train": cmd_train,
            "select": cmd_select, "run": cmd_run, "ablate": cmd_ablate, "eval": cmd_eval}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LoadError as exc:
        print(f"error: [load] {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
