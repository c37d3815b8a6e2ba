"""Command line entry point: ``pathfl {gen-data,run,eval,report}``.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numeric failure (non-finite weights).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from pathfl.checkpoint import load_checkpoint
from pathfl.config import METHODS, default_config, load_config
from pathfl.errors import FormatError, NumericError, ShapeError, ValidationError
from pathfl.federation import build_clients, evaluate_global, generate_datasets, run_federation
from pathfl.report import compare_runs, write_report
from pathfl.segnet import SegNet, SegNetConfig
from pathfl.synth import load_clients, save_client

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    return cfg.with_overrides(seed=getattr(args, "seed", None), rounds=getattr(args, "rounds", None),
                              workers=getattr(args, "workers", None)).validate()


def cmd_gen_data(args):
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.with_overrides(data_seed=args.seed)
    out = Path(args.out)
    for (cid, (train, test)), profile in zip(generate_datasets(cfg).items(), cfg.profiles):
        save_client(out, cid, profile, train, test)
        print(f"{cid}: {len(train)} train / {len(test)} test -> {out / cid}")
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args).with_overrides(method=args.method)
    cfg.cse = cfg.cse and not args.no_cse
    cfg.afa = cfg.afa and not args.no_afa
    cfg.ssa = cfg.ssa and not args.no_ssa
    cfg.out_dir = args.out
    cfg.validate()
    datasets = None
    if args.data:
        datasets = load_clients(args.data)
        first = next(iter(datasets.values()))[0][0].image
        if first.shape[1:] != (cfg.height, cfg.width):
            raise ValidationError(f"data is {first.shape[1]}x{first.shape[2]}, "
                                  f"config expects {cfg.height}x{cfg.width}")
    result = run_federation(cfg, datasets)
    paths = write_report(result, args.out)
    last = result.logs[-1]
    print(f"{cfg.label} seed {cfg.seed}: final dice {last.mean_dice:.4f} assd {last.mean_assd:.3f}")
    print(f"report: {paths['report']}")
    return EXIT_OK


def cmd_eval(args):
    params, meta = load_checkpoint(args.checkpoint)
    model = SegNet(SegNetConfig(3, int(meta.get("base_channels", 8)), int(meta.get("depth", 2)), 2))
    model.check_params(params)
    clients = build_clients(None, load_clients(args.data))
    ev = evaluate_global(model, params, clients)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client", "dice", "assd"])
        for cid, (d, a) in ev.per_client.items():
            w.writerow([cid, repr(d), repr(a)])
    for cid, (d, a) in ev.per_client.items():
        print(f"{cid:>16}  dice {d:.4f}  assd {a:.3f}")
    print(f"{'average':>16}  dice {ev.mean_dice:.4f}  assd {ev.mean_assd:.3f}")
    return EXIT_OK


def cmd_report(args):
    text = compare_runs(args.runs)
    Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="pathfl", description="Desk-scale federated segmentation simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every round")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic client datasets as PPM/PGM files")
    g.add_argument("--config", help="run config JSON (default: bundled desk config)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, help="data seed (default: the config's)")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="simulate federated training and write a report")
    r.add_argument("--config", help="run config JSON (default: bundled desk config)")
    r.add_argument("--method", choices=METHODS, default="pathfl")
    r.add_argument("--no-cse", action="store_true", help="disable style enhancement")
    r.add_argument("--no-afa", action="store_true", help="disable bottleneck feature alignment")
    r.add_argument("--no-ssa", action="store_true", help="aggregate with FedAvg instead of similarity weights")
    r.add_argument("--seed", type=int)
    r.add_argument("--rounds", type=int)
    r.add_argument("--workers", type=int, help="client-parallel worker threads")
    r.add_argument("--data", help="dataset directory from gen-data (default: generate in memory)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="evaluate a checkpoint on every client's test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("report", help="merge several runs into one comparison table")
    m.add_argument("--runs", nargs="+", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ShapeError, OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
