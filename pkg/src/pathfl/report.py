"""Run artifacts on disk: CSV logs, a markdown results table, config copy, checkpoint.

Floats are written with ``repr`` so the CSVs round-trip exactly and two runs
with the same seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from pathfl.checkpoint import save_checkpoint
from pathfl.config import config_from_dict
from pathfl.errors import FormatError, ValidationError

METRIC_COLUMNS = ("round", "client", "loss", "dice", "assd")
SIMILARITY_COLUMNS = ("round", "layer", "m", "j", "raw_cos", "s_norm")
LOSS_COLUMNS = ("round", "client", "epoch", "loss")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def metric_rows(logs):
    return [(lg.round, c.client, c.loss, c.dice, c.assd) for lg in logs for c in lg.clients]


def write_report(result, out_dir):
    """Write every artifact of a finished run into ``out_dir``; returns the paths."""
    if not result.logs:
        raise ValidationError("nothing to report: the run has no round logs")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.csv",
        "similarity": out / "similarity.csv",
        "train_loss": out / "train_loss.csv",
        "report": out / "final_report.md",
        "config": out / "config.json",
        "checkpoint": out / "model.json",
    }
    _write_csv(paths["metrics"], METRIC_COLUMNS, metric_rows(result.logs))
    _write_csv(paths["similarity"], SIMILARITY_COLUMNS, result.similarity_rows)
    _write_csv(paths["train_loss"], LOSS_COLUMNS, result.loss_rows)
    cfg = result.config
    paths["config"].write_text(cfg.dumps() + "\n")
    final = final_scores(read_metrics(paths["metrics"]))
    paths["report"].write_text(render_run(cfg.label, final, len(result.logs)))
    save_checkpoint(paths["checkpoint"], result.final, {
        "label": cfg.label, "rounds": cfg.rounds, "seed": cfg.seed,
        "base_channels": cfg.base_channels, "depth": cfg.depth,
        "height": cfg.height, "width": cfg.width,
    })
    return paths


def read_metrics(path):
    """Rows of a metrics.csv as dicts with typed values."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
                raise FormatError(f"{path}: unexpected columns {reader.fieldnames}")
            return [{"round": int(r["round"]), "client": r["client"], "loss": float(r["loss"]),
                     "dice": float(r["dice"]), "assd": float(r["assd"])} for r in reader]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc


def final_scores(rows):
    """``{client: (dice, assd)}`` of the last round in ``rows`` (client order preserved)."""
    if not rows:
        raise ValidationError("metrics table is empty")
    last = max(r["round"] for r in rows)
    return {r["client"]: (r["dice"], r["assd"]) for r in rows if r["round"] == last}


def macro(scores):
    return (float(np.mean([d for d, _ in scores.values()])),
            float(np.mean([a for _, a in scores.values()])))


def _table(entries, clients):
    head = "| method | " + " | ".join(clients) + " | Average |"
    rule = "|---" * (len(clients) + 2) + "|"
    lines = [head, rule]
    for label, scores in entries:
        cells = []
        for c in clients:
            d, a = scores.get(c, (float("nan"), float("nan")))
            cells.append(f"{100 * d:.2f} / {a:.2f}")
        md, ma = macro(scores)
        lines.append(f"| {label} | " + " | ".join(cells) + f" | {100 * md:.2f} / {ma:.2f} |")
    return "\n".join(lines) + "\n"


def render_run(label, scores, rounds):
    return (f"# {label}\n\nTest Dice (%) / ASSD (px) of the global model after {rounds} rounds.\n\n"
            + _table([(label, scores)], list(scores)))


def compare_runs(run_dirs):
    """Markdown table with one row per run directory, columns per client plus the average."""
    entries = []
    clients = []
    for d in run_dirs:
        d = Path(d)
        scores = final_scores(read_metrics(d / "metrics.csv"))
        cfg_path = d / "config.json"
        label = config_from_dict(json.loads(cfg_path.read_text())).label if cfg_path.exists() else d.name
        entries.append((f"{label} ({d.name})", scores))
        clients += [c for c in scores if c not in clients]
    if not entries:
        raise ValidationError("no runs to compare")
    return ("# Comparison\n\nTest Dice (%) / ASSD (px) of each run's final global model.\n\n"
            + _table(entries, clients))
