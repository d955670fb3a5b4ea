"""
Command-line entry point.

    diffret gen-data -o d/
    diffret train -c d/ --strategy both
    diffret eval
    diffret out-domain
    diffret trace --query t000003
    diffret ablate --axis strategy -c d/

Outputs go under ``-o`` or, by default, under ``$DIFFRET_OUTPUT_ROOT``
(``./runs`` when unset). Every command writes its resolved configuration
next to its outputs. Exit status: 0 on success, 1 on a runtime failure,
2 on a usage error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from . import corpus as corpora
from .denoiser import DIRECTIONS
from .exceptions import ConfigError, DiffRetError, InputError
from .pipeline import reports
from .pipeline.checkpoint import load_checkpoint, save_checkpoint
from .pipeline.config import RunConfig, TrainConfig, set_field, set_sampler_field
from .pipeline.evaluation import diffusion_trace, evaluate, out_domain_eval
from .pipeline.metrics import EvalReport
from .pipeline.training import train
from .sampler import SamplerConfig

ENV_ROOT = "DIFFRET_OUTPUT_ROOT"
AXES = ("loss-type", "sampling", "schedule", "strategy", "steps", "scale")
AXIS_VALUES = {
    "loss-type": "mse,kl",
    "sampling": "ddpm,ddim",
    "schedule": "linear,cosine",
    "strategy": "gen,dis,both",
    "scale": "0.1,0.5,1.0,1.5,2.0",
}
MODEL_FILE = "model.dfrt"
RUN_FILE = "run.json"

log = logging.getLogger("diffret")


def output_root() -> Path:
    return Path(os.environ.get(ENV_ROOT) or "runs")


# ---------------------------------------------------------------- flags

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_train_flags(p):
    g = p.add_argument_group("training (override the config file)")
    for f in dataclasses.fields(TrainConfig):
        g.add_argument(_flag(f.name), dest=f"train__{f.name}", metavar="V", default=None)


def _add_eval_flags(p):
    g = p.add_argument_group("sampling and fusion")
    for f in dataclasses.fields(SamplerConfig):
        name = "sampling" if f.name == "strategy" else f.name
        g.add_argument(_flag(name), dest=f"sampler__{f.name}", metavar="V", default=None)
    g.add_argument("-w", "--fusion-weight", dest="eval__fusion_weight", metavar="W", default=None)
    g.add_argument("--eval-seed", dest="eval__eval_seed", metavar="N", default=None)


def _add_set_flag(p):
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field by name")


def _apply_overrides(cfg: RunConfig, args, allow_train: bool) -> RunConfig:
    for key, raw in vars(args).items():
        if raw is None or "__" not in key:
            continue
        group, name = key.split("__", 1)
        if group == "sampler":
            set_sampler_field(cfg.sampler, name, raw)
        else:
            set_field(cfg, name, raw)
    for item in getattr(args, "set", []):
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key = key.strip().replace("-", "_")
        if not allow_train and key in {f.name for f in dataclasses.fields(TrainConfig)}:
            raise ConfigError(f"training field {key!r} cannot change after training")
        set_field(cfg, key, raw)
    cfg.train.validate()
    cfg.resolved_fusion_weight()
    return cfg


def _load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        return RunConfig.from_ini(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- paths

def _corpus_path(path, part: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / f"{part}.dfcx"
    if not p.exists():
        raise InputError(f"corpus file {p} not found")
    return p


def _model_path(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / MODEL_FILE
    if not p.exists():
        raise InputError(f"checkpoint {p} not found")
    return p


def _default_corpus(model: Path, given):
    if given is not None:
        return given
    run = model.parent / RUN_FILE
    if run.exists():
        return json.loads(run.read_text(encoding="utf-8"))["corpus"]
    raise InputError("no corpus given (-c) and the model directory does not record one")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    out = reports.ensure_dir(args.out or output_root() / "data")
    cp = configparser.ConfigParser()
    if args.config:
        cp.read(args.config, encoding="utf-8")
    data = dict(cp["data"]) if cp.has_section("data") else {}
    shift = dict(cp["shift"]) if cp.has_section("shift") else {}
    spec_fields = {f.name: f for f in dataclasses.fields(corpora.DomainSpec) if f.name != "shift"}
    for name in spec_fields:
        if getattr(args, name) is not None:
            data[name] = str(getattr(args, name))
    for key in ("seed", "train_fraction"):
        if getattr(args, key) is not None:
            data[key] = str(getattr(args, key))
    for name in ("rotation", "translation", "noise_inflation"):
        if getattr(args, name) is not None:
            shift[name] = str(getattr(args, name))
    if args.shift_seed is not None:
        shift["seed"] = str(args.shift_seed)
    try:
        seed = int(data.pop("seed", 0))
        fraction = float(data.pop("train_fraction", 0.8))
        kw = {k: (int if spec_fields[k].type in (int, "int") else float)(v) for k, v in data.items()}
        sh = corpora.DomainShift(**{k: (int if k == "seed" else float)(v) for k, v in shift.items()})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad data setting: {exc}") from exc
    spec = corpora.DomainSpec(**kw)
    if args.from_csv:
        full = corpora.load_csv_dir(args.from_csv)
    else:
        full = corpora.generate(spec, seed)
    tr, te = corpora.split(full, fraction, seed)
    corpora.save(full, out / "corpus.dfcx")
    corpora.save(tr, out / "train.dfcx")
    corpora.save(te, out / "test.dfcx")
    corpora.save(corpora.apply_shift(te, sh, spec.sigma_modal), out / "shifted_test.dfcx")
    echo = configparser.ConfigParser()
    echo["data"] = {**{k: str(getattr(spec, k)) for k in spec_fields}, "seed": str(seed),
                    "train_fraction": repr(fraction)}
    echo["shift"] = {k: str(v) for k, v in dataclasses.asdict(sh).items()}
    with open(out / "data.ini", "w", encoding="utf-8") as fh:
        echo.write(fh)
    print(f"wrote {len(tr)} train / {len(te)} test pairs to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args, allow_train=True)
    out = reports.ensure_dir(args.out or output_root() / "train")
    corpus_dir = args.corpus or output_root() / "data"
    tr = corpora.load(_corpus_path(corpus_dir, "train"))
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    ckpt = train(tr, cfg, callback=lambda row: log.info("epoch %(epoch)d loss %(loss).4f", row))
    save_checkpoint(ckpt, out / MODEL_FILE)
    reports.write_loss_curve_csv(ckpt.loss_curve, out / "loss_curve.csv")
    (out / RUN_FILE).write_text(json.dumps({"corpus": os.fspath(Path(corpus_dir).resolve())}),
                                encoding="utf-8")
    last = ckpt.loss_curve[-1]["loss"]
    print(f"trained {cfg.train.epochs} epochs (final loss {last:.4f}); checkpoint {out / MODEL_FILE}")
    return 0


def _eval_setup(args, default_out: str):
    model = _model_path(args.model or output_root() / "train")
    ckpt = load_checkpoint(model)
    ckpt.config = _apply_overrides(ckpt.config, args, allow_train=False)
    out = reports.ensure_dir(args.out or output_root() / default_out)
    (out / "config.ini").write_text(ckpt.config.to_ini(), encoding="utf-8")
    return ckpt, _default_corpus(model, args.corpus), out


def _directions(arg: str):
    return DIRECTIONS if arg == "both" else (arg,)


def _write_reports(reps, out: Path) -> None:
    reports.write_reports_csv(reps, out / "report.csv")
    reports.write_reports_jsonl(reps, out / "report.jsonl")
    reports.write_histograms_csv(reps, out / "histograms.csv")


def _print_reports(reps) -> None:
    for r in reps:
        name = f"{r.label} " if r.label else ""
        print(f"{name}{r.direction}: R@1 {r.r1:.1f} R@5 {r.r5:.1f} R@10 {r.r10:.1f} "
              f"MdR {r.mdr:g} MnR {r.mnr:.1f} AUROC {r.auroc:.3f}")


def cmd_eval(args) -> int:
    ckpt, corpus_dir, out = _eval_setup(args, "eval")
    te = corpora.load(_corpus_path(corpus_dir, args.split))
    reps = list(evaluate(ckpt, te, _directions(args.direction), label=args.split).values())
    _write_reports(reps, out)
    _print_reports(reps)
    return 0


def cmd_out_domain(args) -> int:
    ckpt, corpus_dir, out = _eval_setup(args, "out-domain")
    a = corpora.load(_corpus_path(corpus_dir, "test"))
    b = corpora.load(Path(args.shifted) if args.shifted else _corpus_path(corpus_dir, "shifted_test"))
    rep_a, rep_b = out_domain_eval(ckpt, a, b, directions=_directions(args.direction))
    reps = list(rep_a.values()) + list(rep_b.values())
    _write_reports(reps, out)
    _print_reports(reps)
    return 0


def cmd_trace(args) -> int:
    ckpt, corpus_dir, out = _eval_setup(args, "trace")
    te = corpora.load(_corpus_path(corpus_dir, args.split))
    query = int(args.query) if args.query.isdigit() else args.query
    rows, gt = diffusion_trace(ckpt, te, query, args.direction)
    cands = te.video_ids if args.direction == "t2v" else te.text_ids
    reports.write_trace_csv(rows, gt, out / "trace.csv", cands)
    reports.write_trace_jsonl(rows, gt, out / "trace.jsonl", cands)
    print(f"{len(rows)} trace rows; ground truth {cands[gt]} ends at p={rows[-1][gt]:.3f}")
    return 0


# ---------------------------------------------------------------- ablation

def _ablation_points(axis: str, args, base: RunConfig):
    """[(point name, train overrides, [(eval name, sampler overrides)])]."""
    k = base.train.steps
    if axis == "steps":
        train_steps = [int(v) for v in args.train_steps.split(",")]
        eval_steps = [int(v) for v in args.eval_grid.split(",")]
        return [(f"train{t}", {"steps": str(t)}, [(f"eval{e}", {"eval_steps": str(e)}) for e in eval_steps])
                for t in train_steps]
    values = (args.values or AXIS_VALUES[axis]).split(",")
    if axis == "sampling":
        evals = [(v, {"strategy": v, "eval_steps": str(k) if v == "ddpm" else "none"}) for v in values]
        return [("model", {}, evals)]
    key = {"loss-type": "loss_type", "schedule": "schedule", "strategy": "strategy",
           "scale": "signal_scale"}[axis]
    return [(v, {key: v}, [("eval", {})]) for v in values]


def _run_point(task):
    corpus_dir, ini, evals, out, directions = task
    cfg = RunConfig.from_ini(ini)
    out = reports.ensure_dir(out)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    start = time.perf_counter()
    ckpt = train(corpora.load(_corpus_path(corpus_dir, "train")), cfg)
    train_seconds = time.perf_counter() - start
    save_checkpoint(ckpt, out / MODEL_FILE)
    te = corpora.load(_corpus_path(corpus_dir, "test"))
    results = []
    for name, overrides in evals:
        sampler = dataclasses.replace(cfg.sampler)
        for key, raw in overrides.items():
            set_sampler_field(sampler, key, raw)
        start = time.perf_counter()
        try:
            reps = evaluate(ckpt, te, directions, sampler=sampler, label=name)
            results.append((name, [r.to_dict() for r in reps.values()], "",
                            train_seconds + time.perf_counter() - start))
        except ConfigError as exc:
            results.append((name, [], str(exc), train_seconds))
    return results


def cmd_ablate(args) -> int:
    base = _apply_overrides(_load_config(args.config), args, allow_train=True)
    out = reports.ensure_dir(Path(args.out or output_root() / "ablate") / args.axis)
    corpus_dir = args.corpus or output_root() / "data"
    _corpus_path(corpus_dir, "train")
    (out / "config.ini").write_text(base.to_ini(), encoding="utf-8")
    points = _ablation_points(args.axis, args, base)
    tasks = []
    for name, overrides, evals in points:
        cfg = RunConfig.from_ini(base.to_ini())
        for key, raw in overrides.items():
            set_field(cfg, key, raw)
        cfg.train.validate()
        tasks.append((os.fspath(corpus_dir), cfg.to_ini(), evals, os.fspath(out / name),
                      _directions(args.direction)))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_point, tasks))
    else:
        results = [_run_point(t) for t in tasks]
    rows, reps, extra = [], [], []
    for (name, _, _), res in zip(points, results):
        for eval_name, rep_dicts, error, seconds in res:
            base_row = {"axis": args.axis, "point": name, "eval": eval_name, "seconds": f"{seconds:.1f}"}
            if error:
                rows.append({**base_row, "status": "infeasible", "message": error})
                print(f"{name}/{eval_name}: infeasible ({error})")
            for d in rep_dicts:
                rep = EvalReport(**d)
                reps.append(rep)
                extra.append({"axis": args.axis, "point": name, "eval": eval_name, "seconds": round(seconds, 1)})
                rows.append({**base_row, "status": "ok", "message": "", **reports.report_row(rep)})
                print(f"{name}/{eval_name} {rep.direction}: R@1 {rep.r1:.1f} MdR {rep.mdr:g} MnR {rep.mnr:.1f}")
    cols = ["axis", "point", "eval", "status", "message", "seconds"] + reports.REPORT_COLUMNS
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        w.writerows(rows)
    reports.write_reports_jsonl(reps, out / "summary.jsonl", extra)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffret", description="Generative text-video retrieval on token features.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="generate a synthetic corpus with train/test/shifted splits")
    g.add_argument("-o", "--out")
    g.add_argument("--config", help="INI file with [data] and [shift] sections")
    for f in dataclasses.fields(corpora.DomainSpec):
        if f.name != "shift":
            g.add_argument(_flag(f.name), dest=f.name, type=int if f.type in (int, "int") else float,
                           default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--train-fraction", type=float, default=None)
    g.add_argument("--rotation", type=float, default=None)
    g.add_argument("--translation", type=float, default=None)
    g.add_argument("--noise-inflation", type=float, default=None)
    g.add_argument("--shift-seed", type=int, default=None)
    g.add_argument("--from-csv", metavar="DIR", help="import a CSV embedding directory instead of generating")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a checkpoint")
    t.add_argument("-c", "--corpus", help="data directory or .dfcx file (train split)")
    t.add_argument("-o", "--out")
    t.add_argument("--config", help="INI config; flags override it")
    _add_train_flags(t)
    _add_eval_flags(t)
    _add_set_flag(t)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint on a test split"),
                                 ("out-domain", cmd_out_domain, "evaluate in-domain and on a shifted domain"),
                                 ("trace", cmd_trace, "export the per-step distribution of one query")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("-m", "--model", help="checkpoint file or training directory")
        e.add_argument("-c", "--corpus", help="data directory or .dfcx file")
        e.add_argument("-o", "--out")
        e.add_argument("--direction", choices=("t2v", "v2t") if name == "trace" else ("t2v", "v2t", "both"),
                       default="t2v" if name == "trace" else "both")
        if name != "out-domain":
            e.add_argument("--split", default="test", help="split file to read from a data directory")
        if name == "out-domain":
            e.add_argument("--shifted", help="shifted test corpus (default: shifted_test.dfcx)")
        if name == "trace":
            e.add_argument("--query", required=True, help="query id or position")
        _add_eval_flags(e)
        _add_set_flag(e)
        e.set_defaults(func=func)

    a = sub.add_parser("ablate", help="train and evaluate one model per setting of an ablation axis")
    a.add_argument("--axis", choices=AXES, required=True)
    a.add_argument("--values", help="comma-separated settings (default per axis)")
    a.add_argument("--train-steps", default="10,50", help="steps axis: training K values")
    a.add_argument("--eval-grid", default="10,50,100", help="steps axis: evaluation step counts")
    a.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    a.add_argument("--direction", choices=("t2v", "v2t", "both"), default="t2v")
    a.add_argument("-c", "--corpus")
    a.add_argument("-o", "--out")
    a.add_argument("--config")
    _add_train_flags(a)
    _add_eval_flags(a)
    _add_set_flag(a)
    a.set_defaults(func=cmd_ablate)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (DiffRetError, OSError) as exc:
        print(f"diffret: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
