"""Command-line entry point: generate | trajset | train | eval | matrix | report."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
import yaml

from . import report as R
from .scenegen import build_dataset, load_dataset, save_dataset
from .tasks import (
    VARIANTS,
    CheckpointCache,
    DivergenceError,
    ExperimentConfig,
    Hyper,
    PosteriorCheckpoint,
    Stages,
    TrainState,
    build_experiment_data,
    evaluate_model,
    make_report,
    prepare_trajset,
    run_cell,
    train_variant,
)
from .seeding import child_seed
from .scenegen import subsample
from .trajset import FORMAT_VERSION, TrajectorySet, build_cover, tune_epsilon
from .varcore import NonFiniteGradient, params_from_dict, params_to_dict, save_json

log = logging.getLogger("gvcltraj")

OUTPUT_ROOT_ENV = "GVCLTRAJ_OUTPUT_ROOT"
EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 2, 3, 4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def output_path(p) -> Path:
    """Relative output paths resolve against $GVCLTRAJ_OUTPUT_ROOT when set."""
    p = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def load_config(path) -> dict:
    try:
        d = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError(f"{path} must hold a mapping")
    return d


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(","))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    split = _floats(args.split)
    ds = build_dataset(args.n, args.seed, split)
    out = output_path(args.out)
    save_dataset(ds, out, args.format)
    print(json.dumps({"out": str(out), **ds.manifest["counts"]}))
    return 0


def cmd_trajset(args) -> int:
    ds = load_dataset(args.data)
    corpus = np.stack([s.future for s in ds.train])
    if args.epsilon is None:
        lo, hi = (int(x) for x in args.modes.split(","))
        eps = tune_epsilon(corpus, lo, hi)
    else:
        eps = args.epsilon
    ts = build_cover(corpus, eps)
    out = output_path(args.out)
    payload = ts.to_dict()
    payload["config"] = {"data": str(args.data), "epsilon": args.epsilon, "modes": args.modes}
    save_json(out, payload)
    print(json.dumps({"out": str(out), "epsilon": eps, "n_modes": len(ts)}))
    return 0


def _experiment_config(args) -> ExperimentConfig:
    d = load_config(args.config) if args.config else {}
    for name in ("variant", "epsilon", "fraction", "dataset_path", "trajset_path", "sharpening", "beta",
                 "lambda_multi", "epochs", "batch_size", "lr"):
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    if getattr(args, "seed", None) is not None:
        d["seeds"] = [args.seed]
    missing = {"variant", "epsilon"} - set(d)
    if missing:
        raise ConfigError(f"missing config fields: {sorted(missing)}")
    try:
        return ExperimentConfig.from_mapping(d)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


class EpochCheckpointer:
    """Writes every stage's latest loop state after each epoch."""

    def __init__(self, path: Path, states: dict[str, TrainState], header: dict):
        self.path, self.states, self.header = path, dict(states), header

    def __call__(self, stage: str, state: TrainState) -> None:
        self.states[stage] = state
        payload = dict(self.header, stages={
            k: {"epoch": s.epoch, "trace": s.trace, "params": params_to_dict(s.params)} for k, s in self.states.items()
        })
        save_json(self.path, payload)

    @staticmethod
    def load(path: Path, header: dict) -> dict[str, TrainState]:
        d = json.loads(path.read_text())
        if d.get("config") != header["config"]:
            raise ConfigError(f"{path} was written for a different configuration")
        return {k: TrainState(params_from_dict(v["params"]), v["epoch"], v["trace"]) for k, v in d["stages"].items()}


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    if cfg.dataset_path is None:
        raise ConfigError("dataset_path is required")
    seed = cfg.seeds[0]
    hyper = cfg.resolved_hyper()
    ds = load_dataset(cfg.dataset_path)
    ts = prepare_trajset(ds, cfg.epsilon, cfg.trajset_path)
    out = output_path(args.out or cfg.output_dir or "run")
    out.mkdir(parents=True, exist_ok=True)
    header = {"format_version": FORMAT_VERSION, "config": cfg.to_dict(), "seed": seed}
    state_path = out / "train_state.json"
    resume = EpochCheckpointer.load(state_path, header) if args.resume and state_path.exists() else {}
    hook = EpochCheckpointer(state_path, resume, header)

    torch.set_num_threads(1)
    observed = subsample(ds, cfg.fraction, child_seed(seed, 20)).train
    data = build_experiment_data(ds.train, observed, ts, hyper.torch_dtype)
    model = train_variant(cfg.variant, data, hyper, seed, Stages(resume, hook))
    meta = dict(model.meta, config=cfg.to_dict(), hyper=asdict(hyper), seed=seed, trajset_hash=ts.source_hash,
                epsilon=ts.epsilon)
    ck = PosteriorCheckpoint(model.params, model.task_id, model.sharpening, model.variant, model.spec, meta)
    ck.save(out / "checkpoint.json")
    ts_path = out / "trajset.json"
    if not ts_path.exists():
        ts.save(ts_path)
    with open(out / "train_log.jsonl", "w") as f:
        for stage, st in sorted(hook.states.items()):
            for epoch, loss in enumerate(st.trace):
                f.write(json.dumps({"stage": stage, "epoch": epoch, "loss": loss}) + "\n")
    print(json.dumps({"checkpoint": str(out / "checkpoint.json"), "variant": ck.variant}))
    return 0


def cmd_eval(args) -> int:
    ck = PosteriorCheckpoint.load(args.checkpoint)
    if args.variant:
        if args.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {args.variant!r}")
        ck = PosteriorCheckpoint(ck.params, ck.task_id, ck.sharpening, args.variant, ck.spec, ck.meta)
    ds = load_dataset(args.data)
    ts = TrajectorySet.load(args.trajset)
    hyper = Hyper.from_mapping(ck.meta.get("hyper", {}))
    seed = ck.meta.get("seed", 0)
    torch.set_num_threads(1)
    scores, clamped = evaluate_model(ck, ds.test, ts, child_seed(seed, 30), hyper.n_test_samples)
    config = dict(ck.meta.get("config", {}), variant=ck.variant)
    rep = make_report(config, hyper, ts, [{"seed": seed, "metrics": scores, "nll_clamped": clamped}])
    out = output_path(args.out)
    save_json(out, rep)
    print(R.text_table([rep]), end="")
    return 0


def _cell(job) -> dict:
    variant, eps, fraction, seed, dataset_path, hyper_d, cache_dir, ts_dir = job
    torch.set_num_threads(1)
    ds = load_dataset(dataset_path)
    ts = TrajectorySet.load(Path(ts_dir) / f"trajset_eps{eps:g}.json")
    hyper = Hyper.from_mapping(hyper_d)
    _, scores, clamped = run_cell(variant, ds, ts, fraction, seed, hyper, CheckpointCache(cache_dir))
    return {"seed": seed, "metrics": scores, "nll_clamped": clamped}


def _matrix_lists(d: dict) -> dict:
    m = {}
    for key in ("variants", "epsilons", "fractions", "seeds"):
        v = d.get(key)
        if v is None:
            raise ConfigError(f"matrix config needs {key}")
        m[key] = list(v) if isinstance(v, (list, tuple)) else [v]
        if not m[key]:
            raise ConfigError(f"{key} must be non-empty")
    bad = [v for v in m["variants"] if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}")
    if any(not 0 < f <= 1 for f in m["fractions"]):
        raise ConfigError("fractions must lie in (0, 1]")
    return m


def cmd_matrix(args) -> int:
    d = load_config(args.config)
    m = _matrix_lists(d)
    dataset_path = args.data or d.get("dataset_path")
    if not dataset_path:
        raise ConfigError("dataset_path is required")
    out = output_path(args.out or d.get("output_dir") or "matrix")
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(dataset_path)
    for eps in m["epsilons"]:
        p = out / f"trajset_eps{eps:g}.json"
        ts = prepare_trajset(ds, float(eps), str(p))
        if not p.exists():
            ts.save(p)

    reports = []
    groups = list(itertools.product(m["variants"], m["epsilons"], m["fractions"]))
    jobs = []
    for v, eps, frac in groups:
        cfg = ExperimentConfig.from_mapping({
            "variant": v, "epsilon": float(eps), "fraction": float(frac), "seeds": m["seeds"],
            "dataset_path": str(dataset_path), "output_dir": str(out), "hyper": dict(d.get("hyper", {})),
            **{k: d[k] for k in ("beta", "lambda_multi", "sharpening") if d.get(k) is not None},
        })
        hyper = asdict(cfg.resolved_hyper())
        jobs += [(v, float(eps), float(frac), s, str(dataset_path), hyper, str(out / "cache"), str(out))
                 for s in m["seeds"]]
        reports.append(cfg)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_cell, jobs))
    else:
        results = [_cell(j) for j in jobs]

    n = len(m["seeds"])
    full = []
    for i, cfg in enumerate(reports):
        ts = TrajectorySet.load(out / f"trajset_eps{cfg.epsilon:g}.json")
        rep = make_report(cfg.to_dict(), cfg.resolved_hyper(), ts, results[i * n:(i + 1) * n])
        full.append(rep)
    payload = {"format_version": FORMAT_VERSION, "config": d, "reports": full}
    save_json(out / "matrix.json", payload)
    _write_outputs(full, out, figures=not args.no_figures)
    return 0


def _write_outputs(reports: list[dict], out: Path, figures: bool = True) -> None:
    table = R.text_table(reports)
    (out / "table.txt").write_text(table)
    (out / "results.csv").write_text(R.to_csv(reports))
    if figures:
        R.render_figures(reports, out / "figures")
    print(table, end="")


def cmd_report(args) -> int:
    reports = []
    for p in args.input:
        d = json.loads(Path(p).read_text())
        reports += d["reports"] if "reports" in d else [d]
    if not reports:
        raise ConfigError("no reports given")
    out = output_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_outputs(reports, out, figures=not args.no_figures)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gvcltraj", description=__doc__, allow_abbrev=False)
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="synthesize a scene dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="0.7,0.15,0.15")
    p.add_argument("--format", choices=("bin", "jsonl"), default="bin")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("trajset", help="build an epsilon-cover trajectory set")
    p.add_argument("--data", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--modes", help="MIN,MAX: tune epsilon for this mode count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trajset)

    p = sub.add_parser("train", help="train one variant for one seed")
    p.add_argument("--config")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", dest="dataset_path")
    p.add_argument("--trajset", dest="trajset_path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda-multi", dest="lambda_multi", type=float)
    p.add_argument("--sharpening", type=float)
    p.add_argument("--out")
    p.add_argument("--resume", action="store_true", help="continue from the last epoch checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--trajset", required=True)
    p.add_argument("--variant", help="override the checkpoint's variant tag (e.g. gvcl-det)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="run a variant x epsilon x fraction x seed grid")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("report", help="render tables, CSV and figures from report files")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "usage", e)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DivergenceError, NonFiniteGradient) as e:
        return _fail(EXIT_DIVERGENCE, "divergence", e)
    except (OSError, EOFError) as e:
        return _fail(EXIT_IO, "io", e)
    except (ValueError, KeyError, TypeError) as e:
        return _fail(EXIT_CONFIG, "config", e)


if __name__ == "__main__":
    sys.exit(main())
