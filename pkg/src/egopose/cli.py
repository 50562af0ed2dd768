"""``egopose`` command line.

Exit codes: 0 success, 1 usage or config error, 2 data or format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from . import checks
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, load_synth_config
from .errors import EgoPoseError, EvalError, UsageError
from .featurize import MaskConfig, parse_mask_spec
from .ingest import (Dataset, SequenceRecord, iter_files, load_dataset, parse_intrinsics, parse_sequence_3d,
                     project_sequence, save_sequence_2d)
from .synth import bayes_separability_check, generate, generate_records
from .train_eval import evaluate, train, write_history
from .transformer import init_model

log = logging.getLogger("egopose")

ABLATION_ROWS = [
    ("HandP+ObjL", "hands+label"),
    ("HandPL+ObjP+ObjL", "left+bbox+label"),
    ("HandPR+ObjP+ObjL", "right+bbox+label"),
    ("HandP+ObjP+ObjL", "hands+bbox+label"),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- project


def cmd_project(args) -> int:
    with open(args.intrinsics, encoding="utf-8") as fh:
        cam = parse_intrinsics(fh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = list(iter_files(args.raw3d, ".eseq3"))
    failed = 0
    for path in files:
        try:
            with open(path, encoding="utf-8") as fh:
                seq = parse_sequence_3d(fh)
            frames = project_sequence(seq, cam)
            save_sequence_2d(SequenceRecord(frames), out / (path.stem + ".eseq"))
        except EgoPoseError as e:
            failed += 1
            print(f"error: {path}: {e}", file=sys.stderr)
    print(f"projected {len(files) - failed} of {len(files)} files ({failed} failed)")
    return 2 if failed else 0


# ---------------------------------------------------------------- train


def _run_dataset(cfg, out: Path) -> Dataset:
    if cfg.data.manifest is not None:
        return load_dataset(cfg.data.manifest, cfg.data.root, cfg.model.num_classes)
    manifest = generate(cfg.synth, out / "data")
    log.info("generated synthetic data at %s", manifest.parent)
    return load_dataset(manifest, None, cfg.model.num_classes)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or [])
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "effective_config.yaml")
    data = _run_dataset(cfg, out)
    model = init_model(cfg.model, cfg.train.seed)
    save_checkpoint(model, out / "init.ckpt")

    def report(epoch, loss, acc):
        print(f"epoch {epoch:3d}  train_loss {loss:.6f}  val_accuracy {'-' if acc is None else f'{acc:.4f}'}",
              flush=True)

    result = train(model, data, cfg.train, on_epoch=report)
    write_history(result.history, out / "history.csv")
    save_checkpoint(result.model, out / "final.ckpt")
    best = result.best_model or result.model
    save_checkpoint(best, out / "best.ckpt")
    if data.split("val"):
        rep = evaluate(best, data, "val", cfg.train.mask)
        rep.write(out / "eval_val.json")
        print(f"best val accuracy {rep.accuracy:.4f}")
    print(f"artifacts written to {out}")
    return 0


# ---------------------------------------------------------------- eval / ablate


def _load_for_eval(args):
    model = load_checkpoint(args.checkpoint)
    data = load_dataset(args.manifest, None, model.cfg.num_classes)
    return model, data


def cmd_eval(args) -> int:
    mask = parse_mask_spec(args.mask)
    model, data = _load_for_eval(args)
    if not data.split(args.split):
        raise EvalError(f"split {args.split!r} is empty in {args.manifest}")
    rep = evaluate(model, data, args.split, mask)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"eval_{args.split}.json")
    rep.write(out)
    print(f"accuracy {rep.accuracy:.6f} on {rep.n_samples} {args.split} samples (mask {mask.spec()})")
    return 0


def ablation_table(model, data: Dataset, extra_masks=()) -> list[tuple[str, str, float | None, float | None]]:
    """(name, mask spec, val accuracy, test accuracy) per row; None where a split is empty."""
    rows = list(ABLATION_ROWS) + [(spec, spec) for spec in extra_masks]
    table = []
    for name, spec in rows:
        mask = parse_mask_spec(spec)
        accs = [evaluate(model, data, s, mask).accuracy if data.split(s) else None for s in ("val", "test")]
        table.append((name, spec, *accs))
    return table


def format_table(table) -> str:
    def pct(a):
        return "n/a" if a is None else f"{100 * a:.2f}"

    header = ("Configuration", "Validation %", "Test %")
    body = [(name, pct(v), pct(t)) for name, _, v, t in table]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(3)]
    lines = [f"{header[0]:<{widths[0]}}  {header[1]:>{widths[1]}}  {header[2]:>{widths[2]}}"]
    lines.append("  ".join("-" * w for w in widths))
    lines += [f"{n:<{widths[0]}}  {v:>{widths[1]}}  {t:>{widths[2]}}" for n, v, t in body]
    return "\n".join(lines)


def table_csv(table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["configuration", "mask", "validation_pct", "test_pct"])
    for name, spec, v, t in table:
        writer.writerow([name, spec, "" if v is None else repr(100 * v), "" if t is None else repr(100 * t)])
    return buf.getvalue()


def cmd_ablate(args) -> int:
    for spec in args.mask or []:
        parse_mask_spec(spec)
    model, data = _load_for_eval(args)
    if not data.split("val") and not data.split("test"):
        raise EvalError(f"{args.manifest} has neither val nor test sequences")
    table = ablation_table(model, data, args.mask or [])
    print(format_table(table))
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("ablation.csv")
    out.write_text(table_csv(table), encoding="utf-8")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------- synth / checks


def cmd_synth(args) -> int:
    cfg = load_synth_config(args.config, args.set or [])
    manifest = generate(cfg, args.out)
    oracle = bayes_separability_check(cfg)
    data = generate_records(cfg)
    counts = ", ".join(f"{s} {len(data.split(s))}" for s in ("train", "val", "test"))
    print(f"wrote {manifest} ({counts})")
    print(f"nearest-template oracle accuracy {oracle['accuracy']:.4f} (chance {oracle.get('chance', 0):.4f})")
    return 0


def cmd_gradcheck(args) -> int:
    prims = checks.primitive_gradchecks(args.seed)
    worst_name = max(prims, key=prims.get)
    print(f"primitives: max relative error {prims[worst_name]:.3e} ({worst_name})")
    model_err = checks.tiny_model_gradcheck(args.seed)
    print(f"tiny model: max relative error {model_err:.3e}")
    ok = prims[worst_name] < checks.PRIMITIVE_TOL and model_err < checks.GRADCHECK_TOL
    return 0 if ok else 3


def cmd_selftest(args) -> int:
    return 0 if checks.run_selftest() else 3


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="egopose", description="Hand-object action recognition from 2D pose sequences.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("project", help="convert .eseq3 camera-space sequences to .eseq pixel sequences")
    s.add_argument("--raw3d", required=True, help="directory of .eseq3 files")
    s.add_argument("--intrinsics", required=True, help="intrinsics file: fx fy cx cy width height")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("train", help="train a model from a YAML run config")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--mask", default=MaskConfig().spec(), help="parts kept, e.g. left+bbox+label")
    s.add_argument("--out", help="report path (default: eval_<split>.json beside the checkpoint)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="masked evaluations on val and test")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--mask", action="append", metavar="SPEC", help="extra row evaluated with this mask")
    s.add_argument("--out", help="CSV path (default: ablation.csv beside the checkpoint)")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", required=True, help="YAML with synth fields")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gradcheck", help="finite-difference check of primitives and a tiny model")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("selftest", help="run the built-in invariant checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except EgoPoseError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
