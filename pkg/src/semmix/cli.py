"""Command line entry point: ``semmix <command> ...``.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import logging
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .config import (RunConfig, dump_config, load_config, parse_toggle, with_overrides)
from .errors import ConfigError, DataError, SemmixError
from .kitti import (RemapTable, load_dataset, load_remap, save_dataset, save_remap)
from .model import load_params, save_params
from .toy import TOY_CLASSES, ShiftSpec, make_domains, nearest_centroid_accuracy
from .trainer import adapt, evaluate, finetune_ssda, pretrain
from .types import IGNORE, make_rng

log = logging.getLogger("semmix")

SWEEP_PARAMS = ("zeta", "alpha", "mu", "beta", "gamma")
TOY_RAW = {0: IGNORE, 40: 0, 10: 1, 80: 2}
# desk-scale training defaults written into generated toy configs
TOY_TRAIN = dict(lr=0.25, pretrain_epochs=5, epochs=4, batch_size=4, gamma=1)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def version_string():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# -- data ----------------------------------------------------------------------

def _remap(run: RunConfig) -> RemapTable:
    path = run.path("remap")
    if path is None:
        raise ConfigError("config [data] needs a remap table")
    return load_remap(path)


def _require(run, key):
    path = run.path(key)
    if path is None:
        raise ConfigError(f"config [data] needs '{key}'")
    if not path.exists():
        raise DataError(f"{key} path {path} does not exist")
    return path


def load_source(run, remap):
    return load_dataset(_require(run, "source"), remap,
                        label_dir=run.data.get("source_label_dir") or "labels")


def load_target_unlabeled(run):
    return load_dataset(_require(run, "target"), with_labels=False)


def load_target_val(run, remap):
    path = run.path("target_val")
    if path is None:
        return None
    return load_dataset(path, remap, label_dir="labels")


def read_frame_list(path):
    names = [ln.strip() for ln in Path(path).read_text().splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not names:
        raise DataError(f"labeled-frame list {path} is empty")
    return names


def load_target_labeled(run, remap):
    lst = run.path("labeled_frames")
    if lst is None:
        raise ConfigError("SSDA needs a labeled-frame list (--labeled-frames)")
    if not lst.exists():
        raise DataError(f"labeled-frame list {lst} does not exist")
    return load_dataset(_require(run, "target"), remap, names=read_frame_list(lst),
                        label_dir=run.data.get("target_label_dir") or "labels")


def _load_pretrained(run):
    path = run.path("pretrained")
    if path is None or not path.exists():
        raise DataError(f"pretrained checkpoint missing: {path}")
    return load_params(path)


# -- outputs -------------------------------------------------------------------

def _prepare_out(out, run, command):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(run, out / "manifest.ini",
                {"command": command, "version": version_string(), "out": out.resolve(),
                 "started": time.strftime("%Y-%m-%dT%H:%M:%S")})
    return out


def write_report(report, out, classes, stem="report", extra=None):
    (out / f"{stem}.txt").write_text(report.table(classes))
    kv = report.key_values(classes)
    if extra:
        kv += "".join(f"{k}={v}\n" for k, v in extra.items())
    (out / f"{stem}.kv").write_text(kv)
    if report.per_class:
        plotting.plot_iou(report, out / f"{stem}_iou.png", classes)


# -- commands ------------------------------------------------------------------

def cmd_gen_toy(out_dir, n_frames=200, n_points=2048, shift="combo", seed=0, n_val=None):
    """Write source, target (labels hidden under gt_labels/) and target_val sets."""
    spec = shift if isinstance(shift, ShiftSpec) else ShiftSpec.parse(shift)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source, target, target_val = make_domains(n_frames, n_points, spec, seed, n_val)
    remap = RemapTable(dict(TOY_RAW), TOY_CLASSES)
    inv = remap.inverse()
    save_remap(out / "remap.ini", remap)
    save_dataset(out / "source", source, inv)
    save_dataset(out / "target", target, inv, label_dir="gt_labels")
    save_dataset(out / "target_val", target_val, inv)
    (out / "labeled_frames.txt").write_text(f"{target[0].name}\n")
    run = RunConfig(data={"source": "source", "target": "target", "target_val": "target_val",
                          "remap": "remap.ini", "labeled_frames": "labeled_frames.txt",
                          "target_label_dir": "gt_labels",
                          "pretrained": "pretrain/pretrained.ckpt"},
                    seed=seed)
    run.train = replace(run.train, **TOY_TRAIN)
    dump_config(run, out / "toy.ini",
                {"shift": f"{spec.kind}:rotate={spec.rotate_deg},keep={spec.keep},"
                          f"noise={spec.noise}",
                 "frames": n_frames, "points": n_points,
                 "source_nearest_centroid_acc": f"{nearest_centroid_accuracy(source):.6f}"})
    return source, target, target_val



def cmd_pretrain(run: RunConfig, out):
    out = _prepare_out(out, run, "pretrain")
    remap = _remap(run)
    source = load_source(run, remap)
    val = load_target_val(run, remap)
    ids = list(remap.classes.ids)
    params = pretrain(source, run.train, make_rng(run.seed), class_ids=ids)
    save_params(out / "pretrained.ckpt", params)
    report = None
    if val is not None:
        report = evaluate(params, val, ids)
        write_report(report, out, remap.classes)
    return params, report


def cmd_finetune(run: RunConfig, out):
    out = _prepare_out(out, run, "finetune")
    remap = _remap(run)
    params = _load_pretrained(run)
    source = load_source(run, remap)
    target_l = load_target_labeled(run, remap)
    ids = list(remap.classes.ids)
    params = finetune_ssda(params, source, target_l, run.train, make_rng(run.seed), ids)
    save_params(out / "finetuned.ckpt", params)
    val = load_target_val(run, remap)
    report = None
    if val is not None:
        report = evaluate(params, val, ids)
        write_report(report, out, remap.classes)
    return params, report


def cmd_adapt(run: RunConfig, out, mode=None, ckpt_every=0):
    """UDA (no labeled target) or SSDA (finetune on labeled frames, then adapt)."""
    mode = mode or run.train.mode
    if mode not in ("uda", "ssda"):
        raise ConfigError(f"adapt mode must be uda or ssda, got {mode!r}")
    run = with_overrides(run, mode=mode)
    out = _prepare_out(out, run, f"adapt-{mode}")
    remap = _remap(run)
    ids = list(remap.classes.ids)
    params = _load_pretrained(run)
    source = load_source(run, remap)
    target_u = load_target_unlabeled(run)
    val = load_target_val(run, remap)
    rng = make_rng(run.seed)
    target_l = None
    if mode == "ssda":
        target_l = load_target_labeled(run, remap)
        if run.train.finetune_epochs:
            params = finetune_ssda(params, source, target_l, run.train, rng, ids)
            save_params(out / "finetuned.ckpt", params)
    before = evaluate(params, val, ids) if val is not None else None

    def on_epoch(ep, student, teacher):
        if ckpt_every and (ep + 1) % ckpt_every == 0:
            save_params(out / f"student_e{ep + 1:03d}.ckpt", student)

    student, stats = adapt(params, source, target_u, run.train, rng, ids, target_l=target_l,
                           val=val, stats_path=out / "stats.jsonl", checkpoint_cb=on_epoch)
    save_params(out / "adapted.ckpt", student)
    plotting.plot_training(stats, out / "training.png")
    report = None
    if val is not None:
        report = evaluate(student, val, ids)
        extra = {"before.miou": f"{before.miou:.6f}"}
        if stats.epochs:
            extra["coverage"] = f"{np.mean([e['coverage'] for e in stats.epochs]):.6f}"
        write_report(report, out, remap.classes, extra=extra)
    return student, stats, report


def cmd_eval(run: RunConfig, checkpoint, split="target_val", out=None):
    remap = _remap(run)
    params = load_params(checkpoint)
    if split == "source":
        data = load_source(run, remap)
    elif split == "target":
        data = load_dataset(_require(run, "target"), remap,
                            label_dir=run.data.get("target_label_dir") or "labels")
    else:
        data = load_target_val(run, remap)
        if data is None:
            raise ConfigError("config [data] has no target_val")
    report = evaluate(params, data, list(remap.classes.ids))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out, remap.classes, stem=f"eval_{split}")
    return report


def cmd_sweep(run: RunConfig, param, values, out, mode="uda"):
    """One seeded adaptation per value; every row starts from the same checkpoint and seed."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        sub = with_overrides(run, **{param: v})
        _, stats, report = cmd_adapt(sub, out / f"{param}={v}", mode=mode)
        cov = (float(np.mean([e["coverage"] for e in stats.epochs])) if stats.epochs
               else float("nan"))
        rows.append((v, report.miou if report else float("nan"), cov))
    lines = [f"{param}\ttarget_miou\tcoverage"]
    lines += [f"{v}\t{m:.6f}\t{c:.6f}" for v, m, c in rows]
    (out / "sweep.tsv").write_text("\n".join(lines) + "\n")
    plotting.plot_sweep(param, [r[0] for r in rows], [r[1] for r in rows], out / "sweep.png",
                        coverage=[r[2] for r in rows])
    return rows


# -- argument parsing ----------------------------------------------------------

def _common(p, need_config=True):
    p.add_argument("--config", required=need_config, help="run config (key = value, INI sections)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/out")
    p.add_argument("--toggle", action="append", default=[], metavar="NAME=on|off")
    for name in SWEEP_PARAMS:
        p.add_argument(f"--{name}", type=int if name == "gamma" else float)
    p.add_argument("--labeled-frames", help="file listing labeled target frame names")
    p.add_argument("--checkpoint", help="pretrained/finetuned parameter file")


def build_parser():
    ap = _Parser(prog="semmix", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-toy", help="write a synthetic source/target pair")
    g.add_argument("--out", required=True)
    g.add_argument("--frames", type=int, default=200)
    g.add_argument("--points", type=int, default=2048)
    g.add_argument("--shift", default="combo",
                   help="rotate[:deg] | subsample[:keep] | noise[:sigma] | combo[:k=v,...]")
    g.add_argument("--seed", type=int, default=0)

    for name, helptext in (("pretrain", "train on the source set"),
                           ("finetune", "finetune on source + labeled target frames"),
                           ("adapt-uda", "unsupervised adaptation"),
                           ("adapt-ssda", "semi-supervised adaptation"),
                           ("adapt", "adaptation, mode chosen by --mode")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name == "adapt":
            p.add_argument("--mode", choices=("uda", "ssda"), default="uda")
        if name.startswith("adapt"):
            p.add_argument("--ckpt-every", type=int, default=0, help="epochs between checkpoints")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(e)
    e.add_argument("--split", choices=("target_val", "target", "source"), default="target_val")

    s = sub.add_parser("sweep", help="seeded runs over one hyperparameter")
    _common(s)
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--mode", choices=("uda", "ssda"), default="uda")
    return ap


def _run_config(args):
    run = load_config(args.config)
    toggles = dict(parse_toggle(t) for t in args.toggle)
    run = with_overrides(run, seed=args.seed, toggles=toggles,
                         **{k: getattr(args, k) for k in SWEEP_PARAMS})
    if args.labeled_frames:
        run.data["labeled_frames"] = str(Path(args.labeled_frames).resolve())
    if args.checkpoint:
        run.data["pretrained"] = str(Path(args.checkpoint).resolve())
    return run


def _dispatch(args):
    if args.command == "gen-toy":
        s, t, v = cmd_gen_toy(args.out, args.frames, args.points, args.shift, args.seed)
        print(f"wrote {len(s)} source, {len(t)} target, {len(v)} target_val frames to {args.out}")
        return
    run = _run_config(args)
    if args.command == "pretrain":
        _, report = cmd_pretrain(run, args.out)
    elif args.command == "finetune":
        _, report = cmd_finetune(run, args.out)
    elif args.command in ("adapt-uda", "adapt-ssda", "adapt"):
        mode = args.mode if args.command == "adapt" else args.command.split("-")[1]
        _, _, report = cmd_adapt(run, args.out, mode, args.ckpt_every)
    elif args.command == "eval":
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint")
        report = cmd_eval(run, run.path("pretrained"), args.split, args.out)
    elif args.command == "sweep":
        conv = int if args.param == "gamma" else float
        try:
            values = [conv(v) for v in args.values.split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse --values {args.values!r}") from None
        rows = cmd_sweep(run, args.param, values, args.out, args.mode)
        print(f"{args.param}\ttarget_miou\tcoverage")
        for v, m, c in rows:
            print(f"{v}\t{m:.4f}\t{c:.4f}")
        return
    if report is not None:
        print(report.table(), end="")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except SemmixError as exc:
        print(f"semmix: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"semmix: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
