"""Command-line entry point: generate, train, eval, infer, report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import (
    ABLATION_TABLES,
    PRESETS,
    build_run_config,
    load_config_file,
    parse_value,
    resolve,
)
from .data import AnnotatedSample, atomic_write_text, load_png, load_split
from .evaluate import (
    MetricReport,
    evaluate,
    oracle_predictions,
    predict,
    score_predictions,
)
from .layout import default_layout, load_layout
from .losses import NonFiniteLossError
from .metrics import ced_curve
from .model import LandmarkModel, load_checkpoint
from .synth import generate_dataset
from .train import prepare_samples, train

ENV_OUT = "OCCLANDMARKS_OUT"


class CliError(Exception):
    pass


def _default_out(command: str) -> Path:
    return Path(os.environ.get(ENV_OUT, "runs")) / command


def _split_overrides(extra: list[str]) -> dict:
    out = {}
    for tok in extra:
        if not tok.startswith("--") or "=" not in tok or "." not in tok.split("=", 1)[0]:
            raise CliError(f"unrecognized argument '{tok}' (overrides look like --section.key=value)")
        key, value = tok[2:].split("=", 1)
        out[key] = parse_value(value)
    return out


def _resolve(args, overrides: dict):
    cfg = resolve(load_config_file(args.config), getattr(args, "preset", None), overrides, args.seed)
    run, problems = build_run_config(cfg)
    if problems:
        raise CliError("invalid configuration:\n  " + "\n  ".join(problems))
    return run


def _log_config(run, out_dir: Path, command: str) -> None:
    resolved = run.resolved()
    atomic_write_text(out_dir / f"{command}_config.json", json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    print(f"[{command}] seed={run.seed} config={out_dir / f'{command}_config.json'}", file=sys.stderr)


def _layout(run):
    return load_layout(run.layout) if run.layout else default_layout()


def cmd_generate(args, overrides) -> int:
    run = _resolve(args, overrides)
    counts = list(args.counts) if args.counts else run.counts
    out = Path(args.out) if args.out else _default_out("generate")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {out} is not writable: {exc}") from exc
    run.counts = counts
    _log_config(run, out, "generate")
    generate_dataset(out, counts, seed=run.seed, ranges=run.scene)
    print(f"wrote {sum(counts)} samples to {out}")
    return 0


def _dataset(args, run) -> Path:
    data = args.data or run.dataset
    if not data:
        raise CliError("no dataset given (use --data or dataset in the config)")
    data = Path(data)
    if not (data / "manifest.json").exists():
        raise CliError(f"dataset {data} has no manifest.json")
    return data


def cmd_train(args, overrides) -> int:
    run = _resolve(args, overrides)
    data = _dataset(args, run)
    out = Path(args.out) if args.out else _default_out("train")
    out.mkdir(parents=True, exist_ok=True)
    samples = load_split(data, "train")
    if not samples:
        raise CliError("empty train split")
    _log_config(run, out, "train")
    layout = _layout(run)
    bb = run.model.backbone
    prepared = prepare_samples(samples, bb.crop_size, bb.stride, layout, run.train.sigma,
                               run.train.sigma_pt, run.train.sigma_edge)
    model = LandmarkModel(run.model, layout)
    try:
        result = train(model, prepared, run.train, out_dir=out, resume=args.resume,
                       log_fn=lambda line: print(json.dumps(line), file=sys.stderr))
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"checkpoint {result.checkpoint} after {result.step} steps")
    return 0


def _checkpoint(run, path):
    try:
        return load_checkpoint(path, _layout(run))
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_eval(args, overrides) -> int:
    run = _resolve(args, overrides)
    data = _dataset(args, run)
    samples = load_split(data, args.split)
    if not samples:
        raise CliError(f"empty {args.split} split")
    out = Path(args.out) if args.out else _default_out("eval") / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _log_config(run, out.parent, "eval")
    if args.oracle:
        report = score_predictions(samples, oracle_predictions(samples), run.metrics)
    else:
        if not args.checkpoint:
            raise CliError("--checkpoint is required unless --oracle is given")
        model, _ = _checkpoint(run, args.checkpoint)
        report = evaluate(model, samples, run.metrics)
    report.write(out)
    m = report.metrics
    summary = " ".join(f"{k}={'null' if v is None else f'{v:.4f}'}" for k, v in m.items())
    print(f"{args.split}: {summary}")
    return 0


def _read_box(text) -> tuple[float, float, float, float]:
    vals = [float(v) for v in text]
    if len(vals) != 4 or vals[2] <= 0 or vals[3] <= 0:
        raise CliError("--box needs x y width height with positive size")
    return tuple(vals)


def cmd_infer(args, overrides) -> int:
    run = _resolve(args, overrides)
    model, _ = _checkpoint(run, args.checkpoint)
    try:
        image = load_png(args.image)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read image {args.image}: {exc}") from exc
    n = model.layout.num_points
    # placeholder annotation: only the image and box drive the crop
    sample = AnnotatedSample(image, _read_box(args.box), np.zeros((n, 2)), np.ones(n, dtype=np.int64))
    bb = model.config.backbone
    preds = predict(model, prepare_samples([sample], bb.crop_size, bb.stride, model.layout))
    body = {
        "points": [[float(x), float(y)] for x, y in preds.points[0]],
        "visibility": [float(v) for v in preds.visibility[0]],
    }
    text = json.dumps(body) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _run_name(path: Path, given: list[str] | None, i: int) -> str:
    if given:
        return given[i]
    return path.stem if path.stem != "report" else path.parent.name


def _table(rows: list[tuple[str, dict]], keys) -> str:
    head = "| run | " + " | ".join(keys) + " |"
    sep = "|---" * (len(keys) + 1) + "|"
    lines = [head, sep]
    for name, m in rows:
        cells = ["null" if m.get(k) is None else f"{m[k]:.4f}" for k in keys]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_report(args, overrides) -> int:
    if not args.reports:
        raise CliError("report needs at least one MetricReport file")
    if args.names and len(args.names) != len(args.reports):
        raise CliError("--names must match the number of reports")
    rows = []
    for i, p in enumerate(args.reports):
        p = Path(p)
        try:
            report = MetricReport.read(p)
        except (OSError, ValueError, TypeError) as exc:
            raise CliError(f"cannot read report {p}: {exc}") from exc
        rows.append((_run_name(p, args.names, i), report))
    out = Path(args.out) if args.out else _default_out("report")
    out.mkdir(parents=True, exist_ok=True)
    keys = ["nme", "nme_vis", "nme_occ", "occ_ap", "f1", "roc_auc", "fr", "ced_auc"]
    parts = ["## All runs", _table([(n, r.metrics) for n, r in rows], keys)]
    by_name = {n: r.metrics for n, r in rows}
    for table, presets in ABLATION_TABLES.items():
        present = [(p, by_name[p]) for p in presets if p in by_name]
        if present:
            parts += [f"## {table}", _table(present, keys)]
    text = "\n\n".join(parts) + "\n"
    atomic_write_text(out / "tables.md", text)
    for name, report in rows:
        if report.per_sample_nme:
            xs, ys = ced_curve(report.per_sample_nme, report.config.get("cutoff", 0.1))
            atomic_write_text(out / f"ced_{name}.csv", _csv([("nme", "fraction"), *zip(xs.tolist(), ys.tolist())]))
        if report.pr_curve:
            atomic_write_text(out / f"pr_{name}.csv", _csv([("recall", "precision"), *report.pr_curve]))
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occlandmarks", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help=f"output path (default under ${ENV_OUT} or ./runs)")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common(g)
    g.add_argument("--counts", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.pt")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(e)
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--checkpoint")
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--oracle", action="store_true", help="score the ground truth against itself")

    i = sub.add_parser("infer", help="predict landmarks for one image")
    common(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--box", nargs=4, required=True, metavar=("X", "Y", "W", "H"))

    r = sub.add_parser("report", help="merge MetricReports into tables and curve CSVs")
    common(r)
    r.add_argument("reports", nargs="*")
    r.add_argument("--names", nargs="*")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = _split_overrides(extra)
        return COMMANDS[args.command](args, overrides)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
