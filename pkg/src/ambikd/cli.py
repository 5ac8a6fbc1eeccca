"""Command-line interface: ``ambikd generate | train | evaluate | compare``."""
import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, load_config
from .datagen import file_sha256, generate_corpus, load_corpus, read_manifest, write_corpus
from .encoder import load_checkpoint
from .metrics import EvalMode, MetricsReport, evaluate
from .pipeline import METHODS, PhaseError, run_method

log = logging.getLogger("ambikd")

OUTPUT_ROOT_ENV = "AMBIKD_OUTPUT_ROOT"
REQUIRED_RUN_FILES = ("config.yaml", "resolved_config.json", "report.txt", "losses.csv")
PIPELINE_RUN_FILES = ("entropy_profile.csv", "source_selection.json", "ambiguous_ids.txt",
                      "la_scores.csv", "lad_report.txt")


class CLIError(Exception):
    pass


def _output_root(cfg):
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or cfg.output_dir)


def _load(args):
    if args.config:
        cfg, text = load_config(args.config)
    else:
        cfg, text = RunConfig(), None
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg = cfg.resolved()
    return cfg, text if text is not None else dump_config(cfg)


def eval_checksum(data_dir):
    manifest = read_manifest(data_dir)
    if manifest and "eval" in manifest.get("checksums", {}):
        return manifest["checksums"]["eval"]
    return file_sha256(Path(data_dir) / "eval.jsonl")


def cmd_generate(args):
    cfg, _ = _load(args)
    out = Path(args.out) if args.out else _output_root(cfg) / "data"
    splits = generate_corpus(cfg.corpus)
    manifest = write_corpus(splits, out, cfg.corpus)
    for name, digest in manifest["checksums"].items():
        print(f"{name}\t{manifest['sizes'][name]}\t{digest}")
    print(f"wrote corpus to {out}")
    return 0


def cmd_train(args):
    cfg, text = _load(args)
    if not args.data:
        raise CLIError("--data is required (directory produced by `ambikd generate`)")
    splits = load_corpus(args.data)
    checksum = eval_checksum(args.data)
    run_dir = Path(args.out) if args.out else _output_root(cfg) / f"{args.method}-seed{cfg.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(text)
    resolved = cfg.to_dict()
    resolved["method"] = args.method
    resolved["data_dir"] = str(args.data)
    resolved["eval_checksum"] = checksum
    resolved["log_base"] = "e"
    (run_dir / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")

    _, report = run_method(args.method, splits, cfg, run_dir=run_dir, eval_checksum=checksum)
    validate_run_dir(run_dir, args.method)
    print(report.to_text(), end="")
    print(f"run directory: {run_dir}")
    return 0


def validate_run_dir(run_dir, method):
    run_dir = Path(run_dir)
    needed = list(REQUIRED_RUN_FILES)
    if method in ("lad", "lad-rc"):
        needed += PIPELINE_RUN_FILES
    if method == "lad-rc":
        needed.append("recalibration.json")
    if method == "ts":
        needed.append("temperature.json")
    missing = [f for f in needed if not (run_dir / f).is_file()]
    if missing:
        raise CLIError(f"run directory {run_dir} is missing {missing}")
    MetricsReport.from_text((run_dir / "report.txt").read_text())


def cmd_evaluate(args):
    if not args.run or not args.data:
        raise CLIError("evaluate needs --run and --data")
    run_dir = Path(args.run)
    ckpt_dir = run_dir / "checkpoints"
    name = args.checkpoint
    if name is None:
        for cand in ("lad_rc", "lad", "final"):
            if (ckpt_dir / f"{cand}.npz").exists():
                name = cand
                break
    if name is None or not (ckpt_dir / f"{name}.npz").exists():
        raise CLIError(f"no checkpoint found in {ckpt_dir}")
    model, _ = load_checkpoint(ckpt_dir / f"{name}.npz")
    splits = load_corpus(args.data)
    mode = EvalMode.parse(args.mode)
    seed = args.seed if args.seed is not None else 0
    report = evaluate(model, splits["eval"], mode=mode, method=args.method or name, seed=seed,
                      eval_checksum=eval_checksum(args.data))
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


COLUMNS = (("JSD", "jsd", min), ("KL", "kl", min), ("Acc", "accuracy", max), ("Diff", "diff", min))


def load_reports(run_dirs):
    reports = []
    for d in run_dirs:
        p = Path(d) / "report.txt"
        if not p.is_file():
            raise CLIError(f"{d}: no report.txt")
        reports.append((str(d), MetricsReport.from_text(p.read_text())))
    sums = {r.eval_checksum for _, r in reports}
    if len(sums) > 1:
        raise CLIError("runs were evaluated on different eval splits (checksum mismatch): "
                       + ", ".join(f"{d}={r.eval_checksum[:12]}" for d, r in reports))
    return reports


def comparison_table(reports):
    """Return ``(text, csv_text)``; best value per column is marked with ``*``."""
    best = {}
    for title, key, pick in COLUMNS:
        best[key] = pick(getattr(r, key) for _, r in reports)
    header = ["method", "seed"] + [c[0] for c in COLUMNS]
    rows = []
    for _, r in reports:
        cells = [r.method, str(r.seed)]
        for _, key, _ in COLUMNS:
            v = getattr(r, key)
            cells.append(f"{v:.4f}" + ("*" if v == best[key] else ""))
        rows.append(cells)
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "seed", "jsd", "kl", "accuracy", "diff", "best"])
    for _, r in reports:
        marks = ";".join(t for t, key, _ in COLUMNS if getattr(r, key) == best[key])
        w.writerow([r.method, r.seed, repr(r.jsd), repr(r.kl), repr(r.accuracy), repr(r.diff), marks])
    return "\n".join(lines) + "\n", buf.getvalue()


def cmd_compare(args):
    if not args.runs:
        raise CLIError("compare needs at least one run directory")
    text, csv_text = comparison_table(load_reports(args.runs))
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.txt").write_text(text)
        (out / "comparison.csv").write_text(csv_text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ambikd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic corpus and its manifest")
    g.add_argument("--config")
    g.add_argument("--out", help="corpus directory (default: <output root>/data)")
    g.add_argument("--seed", type=int, help="override the run seed (the corpus seed is corpus.seed)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one method and write a run directory")
    t.add_argument("--method", required=True, choices=METHODS)
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", help="run directory (default: <output root>/<method>-seed<seed>)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a run's checkpoint on the eval split")
    e.add_argument("--run", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--mode", default="deterministic", help="deterministic | mc:<k> | temperature:<T>")
    e.add_argument("--checkpoint", help="checkpoint name (default: lad_rc, lad or final)")
    e.add_argument("--method", help="method tag written into the report")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="write the report here as well")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="tabulate reports of several runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--out", help="directory for comparison.txt / comparison.csv")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"ambikd: invalid config: {e}", file=sys.stderr)
    except PhaseError as e:
        print(f"ambikd: phase '{e.phase}' failed: {e}", file=sys.stderr)
    except (CLIError, FileNotFoundError, ValueError) as e:
        print(f"ambikd: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
