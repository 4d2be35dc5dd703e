"""``transbox`` command-line entry point.

Exit codes: 0 success, 1 failed soundness check, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import monte_carlo_intersection_probability
from .model import (
    CheckpointError,
    UnknownNameError,
    load_checkpoint,
    save_checkpoint,
    soundness_report,
)
from .ontology import OntologyError, load_ontology

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2
BOUND_N50 = 1.6e-9
METRICS = ("H@1", "H@10", "H@100", "Med", "MRR", "MR", "AUC")
# lower is better for these
_LOWER_BETTER = {"Med", "MR"}

log = logging.getLogger("transbox")


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out: Path, command: str, inputs: list, started: str, **extra) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "inputs": [str(p) for p in inputs],
        "out": str(out),
        "started": started,
        "finished": _now(),
    }
    manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

# flag dest -> TrainConfig field
_TRAIN_FLAGS = {
    "dim": "dim",
    "gamma": "gamma",
    "reg_lambda": "reg_lambda",
    "lr": "lr",
    "epochs": "epochs",
    "seed": "seed",
    "batch_size": "batch_size",
    "negatives": "negatives",
    "checkpoint_every": "checkpoint_every",
    "min_offset": "min_offset",
}


def _read_config_file(path) -> dict:
    """key = value lines, optionally under a [train] section."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = "[train]\n" + text
    parser.read_string(text)
    if not parser.has_section("train"):
        raise UsageError(f"{path}: expected a [train] section")
    return dict(parser["train"])


def resolve_train_config(args):
    """Flag > config file > default."""
    from .training import TrainConfig

    values = _read_config_file(args.config) if args.config else {}
    for dest, key in _TRAIN_FLAGS.items():
        v = getattr(args, dest)
        if v is not None:
            values[key] = v
    if args.no_negatives:
        values["negatives"] = 0
    if args.no_enhancement:
        values["semantic_enhancement"] = False
    try:
        return TrainConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def cmd_train(args) -> int:
    from .training import train, write_trace_csv

    started = _now()
    cfg = resolve_train_config(args)
    onto = load_ontology(args.ontology)
    out = _out_dir(args.out)
    ckpt_dir = out / "checkpoints"

    def on_checkpoint(epoch, model):
        ckpt_dir.mkdir(exist_ok=True)
        save_checkpoint(model, ckpt_dir / f"epoch{epoch:06d}.ckpt")

    t0 = time.perf_counter()
    try:
        result = train(onto, cfg, on_checkpoint=on_checkpoint)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    elapsed = time.perf_counter() - t0
    save_checkpoint(result.model, out / "model.ckpt")
    write_trace_csv(result.trace, out / "trace.csv")
    _write_manifest(out, "train", [args.ontology] + ([args.config] if args.config else []),
                    started, seed=cfg.seed, config_digest=cfg.digest(),
                    config=cfg.__dict__, seconds=round(elapsed, 3))
    final = result.final
    loss = f"{final.total:.6g}" if final else "n/a"
    print(f"trained {len(onto)} axioms for {cfg.epochs} epochs in {elapsed:.1f}s; "
          f"final loss {loss}; wrote {out / 'model.ckpt'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _parse_tasks(spec: str) -> list:
    from .evaluation import TASK_KINDS

    if spec == "all":
        return ["rhs-atomic", "lhs-atomic", "rhs-complex", "lhs-complex"]
    kinds = [k.strip() for k in spec.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in TASK_KINDS]
    if unknown or not kinds:
        raise UsageError(f"unknown task(s) {', '.join(unknown) or '(none)'}; "
                         f"choose from all, {', '.join(TASK_KINDS)}")
    return kinds


def _run_tasks(model, split, kinds, threads: int):
    from .evaluation import aggregate_metrics, build_tasks, rank_queries

    tasks = build_tasks(split, model, kinds)

    def one(task):
        if not task.queries or len(task.candidates) < 2:
            return None
        ranks = rank_queries(task, model)
        return aggregate_metrics(ranks, len(task.candidates), name=task.kind)

    if threads > 1 and len(tasks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            reports = list(ex.map(one, tasks))
    else:
        reports = [one(t) for t in tasks]
    return tasks, reports


def _selection_value(reports, metric: str) -> float:
    vals = [r.as_dict()[metric] for r in reports if r is not None]
    if not vals:
        return -math.inf
    v = float(np.mean(vals))
    return -v if metric in _LOWER_BETTER else v


def cmd_eval(args) -> int:
    from .evaluation import format_report_keyvalue, format_report_table, load_test_split

    started = _now()
    kinds = _parse_tasks(args.tasks)
    checkpoints = args.checkpoint
    if len(checkpoints) > 1 and not args.valid:
        raise UsageError("choosing among several checkpoints needs --valid")
    test = load_test_split(args.test)
    chosen = checkpoints[0]
    selection = None
    if len(checkpoints) > 1:
        valid = load_test_split(args.valid)
        scored = []
        for path in checkpoints:
            _, reports = _run_tasks(load_checkpoint(path), valid, kinds, args.threads)
            scored.append((_selection_value(reports, args.select_metric), path))
        best = max(scored, key=lambda s: s[0])
        chosen = best[1]
        selection = {"metric": args.select_metric,
                     "scores": {str(p): abs(v) for v, p in scored}, "chosen": str(chosen)}
        print(f"selected {chosen} by validation {args.select_metric}")
    model = load_checkpoint(chosen)
    tasks, reports = _run_tasks(model, test, kinds, args.threads)

    out = _out_dir(args.out)
    written = []
    for task, rep in zip(tasks, reports):
        if rep is None:
            why = "no test axioms of this kind" if not task.queries else "fewer than 2 candidates"
            print(f"{task.kind}: {why}, skipped")
            continue
        (out / f"{task.kind}.table.txt").write_text(format_report_table([rep]))
        (out / f"{task.kind}.kv.txt").write_text(format_report_keyvalue(rep))
        written.append(rep)
    if written:
        table = format_report_table(written)
        (out / "summary.txt").write_text(table)
        print(table, end="")
    _write_manifest(out, "eval", list(checkpoints) + list(args.test) + list(args.valid or []),
                    started, seed=model.metadata.get("seed"),
                    config_digest=model.metadata.get("config_digest"),
                    tasks=kinds, checkpoint=str(chosen), selection=selection)
    return EXIT_OK


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    if args.tol < 0:
        raise UsageError("--tol must be >= 0")
    model = load_checkpoint(args.checkpoint)
    onto = load_ontology(args.ontology)
    missing = (
        [n for n in onto.concepts if n not in model.concept_index]
        + [n for n in onto.roles if n not in model.role_index]
        + [n for n in onto.individuals if n not in model.individual_index]
    )
    if missing:
        raise UnknownNameError(missing)
    report = soundness_report(onto, model, tol=args.tol)
    print(report.format(), end="")
    if not report.sound:
        print(f"violated axioms: {len(report.violated)}", file=sys.stderr)
    return EXIT_OK if report.sound else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        dims = [int(d) for d in args.dims.split(",") if d.strip()]
    except ValueError:
        raise UsageError(f"--dims must be a comma list of integers, got {args.dims!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise UsageError("--dims needs positive integers")
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    shared = not args.independent_offsets
    base = 2.0 / 3.0 if shared else 17.0 / 24.0
    print(f"{'n':>4}{'empirical':>14}{'analytic':>14}{'stderr':>12}{'z':>8}  note")
    for n in dims:
        p_hat = monte_carlo_intersection_probability(n, args.samples, args.seed, shared)
        p = base ** n
        se = math.sqrt(p * (1 - p) / args.samples)
        z = (p_hat - p) / se if se > 0 else 0.0
        note = ""
        if shared and p < BOUND_N50:
            note = f"analytic < {BOUND_N50:.1e}"
        print(f"{n:>4}{p_hat:>14.6g}{p:>14.6g}{se:>12.3g}{z:>8.2f}  {note}".rstrip())
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot2d
# ---------------------------------------------------------------------------


def cmd_plot2d(args) -> int:
    from .plot import render_svg

    model = load_checkpoint(args.checkpoint)
    try:
        svg = render_svg(model, show_roles=not args.no_roles)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out == "-":
        sys.stdout.write(svg)
    else:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(svg, encoding="utf-8")
        print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="transbox", description="Box embeddings for EL++ ontologies.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a model to an ontology")
    t.add_argument("--ontology", required=True)
    t.add_argument("--out", default="run")
    t.add_argument("--config", help="key = value file; flags override it")
    t.add_argument("--dim", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--lambda", dest="reg_lambda", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--negatives", type=int, help="negatives per A ⊑ ∃r.B axiom")
    t.add_argument("--no-negatives", action="store_true")
    t.add_argument("--no-enhancement", action="store_true",
                   help="train on ∃ right-hand sides as written")
    t.add_argument("--min-offset", type=float)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--threads", type=int, default=0, help="torch intra-op threads (0 = default)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="rank held-out subsumptions")
    e.add_argument("--checkpoint", required=True, nargs="+")
    e.add_argument("--test", required=True, nargs="+")
    e.add_argument("--valid", nargs="+", help="split used to pick among checkpoints")
    e.add_argument("--tasks", default="all")
    e.add_argument("--select-metric", default="MRR", choices=METRICS)
    e.add_argument("--out", default="eval")
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="verify a checkpoint is a geometric model")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--ontology", required=True)
    c.add_argument("--tol", type=float, default=1e-3)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="random box intersection probability")
    s.add_argument("--dims", default="1,2,5,10,50")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--independent-offsets", action="store_true",
                   help="draw each box's offset separately")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("plot2d", help="render a 2-D checkpoint as SVG")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--out", default="-")
    g.add_argument("--no-roles", action="store_true")
    g.set_defaults(func=cmd_plot2d)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"transbox: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = getattr(args, "threads", 0)
    if args.command == "train" and threads:
        import torch

        torch.set_num_threads(threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"transbox: error: {exc}", file=sys.stderr)
    except UnknownNameError as exc:
        print(f"transbox: error: {exc}", file=sys.stderr)
    except (OntologyError, CheckpointError) as exc:
        print(f"transbox: error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"transbox: error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"transbox: error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
