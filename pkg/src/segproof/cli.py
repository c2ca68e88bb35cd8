"""Command-line driver: synthesize, build training sets, train, rank,
correct, evaluate, and serve the interactive session API.

Every command that involves randomness takes a mandatory --seed, so a run is
reproducible from its flag set alone.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, cnn, correct, detect, metrics, patches, synthdata
from .core import EngineConfig, load_dataset, save_labels
from .errors import EngineError

log = logging.getLogger("segproof")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        doc = {"level": record.levelname.lower(), "msg": record.getMessage()}
        return json.dumps(doc)


def _setup_logging(json_logs: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs
                         else logging.Formatter("%(levelname)s %(message)s"))
    logging.basicConfig(level=logging.INFO, handlers=[handler], force=True)


def _config(args, patch_size: int | None = None) -> EngineConfig:
    kwargs = {}
    if patch_size is not None:
        kwargs["patch_size"] = patch_size
    if getattr(args, "pt", None) is not None:
        kwargs["p_t"] = args.pt
    if getattr(args, "seed", None) is not None:
        kwargs["rng_seed"] = args.seed
    return EngineConfig(**kwargs)


# --- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = synthdata.SynthSpec(width=args.width, height=args.height,
                               n_cells=args.cells, seed=args.seed)
    dataset = synthdata.generate_dataset(spec, args.sections, name=args.name)
    if args.splits or args.merges:
        manifests = synthdata.corrupt_dataset(dataset, args.splits, args.merges,
                                              seed=args.seed)
    manifest = save_labels(dataset, args.out)
    if args.splits or args.merges:
        synthdata.save_error_manifests(manifests,
                                       Path(args.out) / "planted_errors.json")
    log.info("wrote %d sections to %s", len(dataset.sections), manifest)
    return 0


def cmd_build_train(args) -> int:
    dataset = load_dataset(args.dataset)
    cfg = _config(args, patch_size=args.patch_size)
    ts = patches.build_training_set(dataset, cfg, rng_seed=args.seed)
    patches.export_training_set(ts, args.out)
    log.info("exported %d correct + %d error patches to %s",
             len(ts.correct), len(ts.errors), args.out)
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    cfg = _config(args, patch_size=args.patch_size)
    ts = patches.build_training_set(dataset, cfg, rng_seed=args.seed)
    schedule = cnn.TrainSchedule(max_epochs=args.max_epochs,
                                 patience=args.patience,
                                 batch_size=args.batch_size)
    arch = cnn.CnnArch(input_hw=cfg.patch_size,
                       conv_filters=tuple(args.filters),
                       dense_units=args.dense_units)
    result = cnn.train(ts, schedule, rng_seed=args.seed, arch=arch,
                       log=lambda row: log.info(
                           "epoch %d train %.4f val %.4f",
                           row["epoch"], row["train_loss"], row["val_loss"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cnn.save_checkpoint(result.weights, out / "checkpoint.bin")
    (out / "curve.json").write_text(json.dumps(result.curve, indent=2) + "\n")
    log.info("best epoch %d (val loss %.4f), checkpoint at %s",
             result.best_epoch, result.weights.val_loss or float("nan"),
             out / "checkpoint.bin")
    return 0


def cmd_rank(args) -> int:
    dataset = load_dataset(args.dataset)
    weights = cnn.load_checkpoint(args.checkpoint)
    cfg = _config(args, patch_size=weights.arch.input_hw)
    rankings = correct.build_rankings(dataset, weights, cfg,
                                      master_seed=args.seed, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    detect.export_rankings(rankings.sorted_splits(), rankings.sorted_merges(),
                           args.seed, out / "rankings.jsonl")
    log.info("ranked %d split and %d merge candidates",
             len(rankings.splits), len(rankings.merges))
    return 0


def cmd_correct(args) -> int:
    dataset = load_dataset(args.dataset)
    weights = cnn.load_checkpoint(args.checkpoint)
    cfg = _config(args, patch_size=weights.arch.input_hw)
    if args.mode == "oracle":
        provider = correct.OracleProvider()
    elif args.mode == "auto":
        provider = correct.ThresholdProvider(cfg.p_t)
    else:
        log.error("interactive mode runs through `segproof serve`")
        return 1
    rankings = correct.build_rankings(dataset, weights, cfg,
                                      master_seed=args.seed, jobs=args.jobs)
    result = correct.run_corrections(dataset, rankings, provider, weights, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_labels(dataset, out)
    correct.export_log(result, out / "log.jsonl", out / "summary.json")
    s = result.summary()
    log.info("decided %d candidates, accepted %d; median VI %s -> %s",
             s["events"], s["accepted"],
             s["initial_median_vi"], s["final_median_vi"])
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    report: dict = {"dataset": dataset.name, "sections": {}}
    if args.against_gt:
        vis = {}
        census = {}
        for sec in dataset.sections:
            if sec.gt_labels is None:
                log.error("section %d has no ground truth", sec.geometry.index)
                return 1
            m = metrics.vi(sec.labels, sec.gt_labels)
            vis[sec.geometry.index] = m.vi
            census[sec.geometry.index] = metrics.error_census(sec.labels,
                                                              sec.gt_labels)
            report["sections"][str(sec.geometry.index)] = {
                "vi": m.vi, "h_auto_given_gt": m.h_x_given_y,
                "h_gt_given_auto": m.h_y_given_x,
                "split_errors": census[sec.geometry.index][0],
                "merge_errors": census[sec.geometry.index][1],
                "best_possible_vi": metrics.best_possible_vi(
                    sec.labels, sec.gt_labels).vi,
            }
        vals = np.array(list(vis.values()))
        report["vi"] = {"median": float(np.median(vals)),
                        "mean": float(vals.mean()),
                        "sd": float(vals.std())}
        report["census"] = {"split_errors": sum(c[0] for c in census.values()),
                            "merge_errors": sum(c[1] for c in census.values())}
    if args.checkpoint:
        weights = cnn.load_checkpoint(args.checkpoint)
        cfg = _config(args, patch_size=weights.arch.input_hw)
        ts = patches.build_training_set(dataset, cfg, rng_seed=args.seed)
        x, y = ts.as_arrays()
        scores = cnn.forward(weights, x)[:, 1]
        curve = metrics.roc(scores, y)
        p, r, f1 = metrics.prf1(scores, y, cfg.p_t)
        report["classifier"] = {
            "patches": int(len(y)), "auc": curve.auc,
            "precision": p, "recall": r, "f1": f1,
            "roc": [{"threshold": float(t), "tpr": float(tp), "fpr": float(fp)}
                    for t, tp, fp in zip(curve.thresholds, curve.tpr, curve.fpr)],
        }
        if args.roc_csv:
            with open(args.roc_csv, "w") as fh:
                fh.write("threshold,tpr,fpr\n")
                for t, tp, fp in zip(curve.thresholds, curve.tpr, curve.fpr):
                    fh.write(f"{t},{tp},{fp}\n")
    out = Path(args.out) if args.out else None
    text = json.dumps(report, indent=2) + "\n"
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text)
        log.info("report written to %s", out / "report.json")
    else:
        sys.stdout.write(text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port,
                log_level="warning")
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segproof",
        description="detect and correct split/merge errors in EM segmentations")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-json", action="store_true",
                        help="JSON-lines logs on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--sections", type=int, default=4)
    p.add_argument("--cells", type=int, default=12)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--splits", type=int, default=0,
                   help="planted split errors across the dataset")
    p.add_argument("--merges", type=int, default=0,
                   help="planted merge errors across the dataset")
    p.add_argument("--name", default="synth")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-train", help="export a balanced training set")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=75)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_build_train)

    p = sub.add_parser("train", help="train the split-error classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=75)
    p.add_argument("--filters", type=int, nargs="+", default=[64, 48, 48, 48])
    p.add_argument("--dense-units", type=int, default=512)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="export ranked error candidates")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("correct", help="run the correction loop")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["oracle", "auto", "interactive"],
                   required=True)
    p.add_argument("--pt", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("eval", help="VI/census report, optional classifier ROC")
    p.add_argument("--dataset", required=True)
    p.add_argument("--against-gt", action="store_true")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--roc-csv", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--pt", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the interactive session API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_json)
    try:
        return args.func(args)
    except EngineError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
