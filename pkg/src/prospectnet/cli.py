"""Command-line entry point: ``prospectnet <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .estimators import MarginalPredictor, ProspectNet, check_scenarios
from .features import (DEFAULT_THRESHOLD, PRESETS, TargetConfigError, bmd_report, mine_interactive_pairs,
                       preset, scenario_targets)
from .metrics import evaluate, record_from_scenario
from .scenario_io import ScenarioParseError, read_predictions, read_scenarios, write_prediction_file, \
    prediction_record, write_scenarios
from .scene import ScenarioValidationError
from .synthetic import KINDS, SyntheticConfigError, generate_dataset

log = logging.getLogger("prospectnet")

THREADS_ENV = "PROSPECTNET_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(n, cap))


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(out: Path, command: str, args: argparse.Namespace, cfg: RunConfig | None) -> Path:
    manifest = {
        "command": command,
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                      if k not in ("func",)},
        "config": cfg.to_dict() if cfg is not None else None,
        "seed": getattr(args, "seed", None) if cfg is None else cfg.train.seed,
        "git_revision": git_revision(),
        "version": __version__,
        "numpy": np.__version__,
    }
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "steps", None) is not None:
        cfg.train.steps = args.steps
    if getattr(args, "preset", None) is not None:
        cfg.model.preset = args.preset
    if getattr(args, "top_k", None) is not None:
        cfg.model.top_k = args.top_k
    cfg.model.validate()
    return cfg


def _read_pairs(path, scenarios) -> list:
    """First mined pair per scenario from a mine-pairs output file."""
    mined = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                mined[rec["scenario_id"]] = [tuple(p) for p in rec["pairs"]]
    out = []
    for s in scenarios:
        if not mined.get(s.id):
            raise ScenarioValidationError(f"scenario {s.id}: no interactive pair in {path}")
        out.append(mined[s.id][0])
    return out


# ---------------------------------------------------------------- subcommands

def _gen_chunk(job):
    kind, count, seed, start, kw = job
    return generate_dataset(kind, count, seed, start=start, **kw)


def cmd_gen_data(args) -> int:
    kw = {"history_len": args.history_len, "horizon": args.horizon}
    workers = worker_count()
    if workers > 1 and args.count > 1:
        size = -(-args.count // workers)
        jobs = [(args.kind, min(size, args.count - s), args.seed, s, kw) for s in range(0, args.count, size)]
        with ProcessPoolExecutor(workers) as pool:
            scenes = [s for chunk in pool.map(_gen_chunk, jobs) for s in chunk]
    else:
        scenes = generate_dataset(args.kind, args.count, args.seed, **kw)
    write_scenarios(args.out, scenes)
    write_manifest(args.out, "gen-data", args, None)
    print(f"wrote {len(scenes)} scenarios to {args.out}")
    return 0


def cmd_mine_pairs(args) -> int:
    scenes = read_scenarios(args.data)
    n = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for s in scenes:
            pairs = mine_interactive_pairs(s, args.threshold)
            n += bool(pairs)
            fh.write(json.dumps({"scenario_id": s.id, "pairs": [list(p) for p in pairs]}) + "\n")
    write_manifest(args.out, "mine-pairs", args, None)
    print(f"{n}/{len(scenes)} scenarios have an interactive pair (threshold {args.threshold} m)")
    return 0


def cmd_sample_targets(args) -> int:
    scenes = read_scenarios(args.data)
    params = preset(args.preset)
    with open(args.out, "w", encoding="utf-8") as fh:
        for s in scenes:
            for aid in s.predictable_ids():
                ts = scenario_targets(s, aid, params)
                fh.write(json.dumps({"scenario_id": s.id, "agent_id": aid, "preset": args.preset,
                                     "targets": ts.points.tolist(), "warning": ts.warning}) + "\n")
    write_manifest(args.out, "sample-targets", args, None)
    if args.report:
        presets = sorted(PRESETS) if args.report == "all" else [args.preset]
        for num, rep in zip(presets, bmd_report(scenes, [PRESETS[p] for p in presets], args.threshold)):
            print(json.dumps({"preset": num, "agent1": rep.agent1, "agent2": rep.agent2,
                              "skipped": rep.skipped}))
    else:
        print(f"wrote targets for {len(scenes)} scenarios to {args.out}")
    return 0


def _train(args, estimator_cls, init=None) -> int:
    cfg = _run_config(args)
    scenes = check_scenarios(args.data, require_future=True)
    pairs = _read_pairs(args.pairs, scenes) if args.pairs else None
    est = estimator_cls.from_config(cfg.model, cfg.train)
    if init is not None:
        est.fit(scenes, pairs=pairs, init_from=init)
    else:
        est.fit(scenes, pairs=pairs)
    est.save(args.out)
    write_manifest(args.out, args.command, args, cfg)
    print(f"trained {len(scenes)} scenarios for {cfg.train.steps} steps; "
          f"final loss {est.loss_history_[-1]:.4f}; checkpoint {args.out}")
    return 0


def cmd_train_marginal(args) -> int:
    return _train(args, MarginalPredictor)


def cmd_train_joint(args) -> int:
    cfg = _run_config(args)
    init = args.init or cfg.data.get("marginal_checkpoint")
    if not init:
        init = str(Path(args.out).with_name("marginal.ckpt"))
    if not Path(init).is_file():
        raise CheckpointError(f"train-joint needs a marginal checkpoint; expected it at {init}")
    marginal = MarginalPredictor.from_config(cfg.model, cfg.train).load(init)
    return _train(args, ProspectNet, init=marginal)


def cmd_predict(args) -> int:
    cfg = _run_config(args)
    cls = MarginalPredictor if args.marginal else ProspectNet
    if not Path(args.checkpoint).is_file():
        raise CheckpointError(f"checkpoint not found: {args.checkpoint}")
    est = cls.from_config(cfg.model, cfg.train).load(args.checkpoint)
    scenes = check_scenarios(args.data)
    pairs = _read_pairs(args.pairs, scenes) if args.pairs else None
    out = est.predict_with_agents(scenes, pairs)
    write_prediction_file(args.out, [prediction_record(sid, preds, agents) for sid, agents, preds in out])
    write_manifest(args.out, "predict", args, cfg)
    print(f"wrote predictions for {len(out)} scenarios to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    scenes = {s.id: s for s in read_scenarios(args.data)}
    preds = read_predictions(args.predictions)
    records = []
    for sid, rec in preds.items():
        if sid not in scenes:
            raise ScenarioValidationError(f"prediction for unknown scenario {sid}")
        agents = rec["agents"] or scenes[sid].predictable_ids()[:2]
        records.append(record_from_scenario(scenes[sid], agents, rec["pairs"]))
    report = evaluate(records)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        write_manifest(args.out, "evaluate", args, None)
    print(text)
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_pair

    scenes = {s.id: s for s in read_scenarios(args.data)}
    preds = read_predictions(args.predictions) if args.predictions else {}
    sid = args.scenario or next(iter(preds or scenes))
    if sid not in scenes:
        raise ScenarioValidationError(f"scenario {sid} not found in {args.data}")
    rec = preds.get(sid, {"agents": None, "pairs": []})
    agents = rec["agents"] or scenes[sid].predictable_ids()[:2]
    plot_pair(scenes[sid], agents, rec["pairs"], args.out)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prospectnet", description="Joint two-agent trajectory prediction.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic interactive scenarios")
    g.add_argument("--kind", choices=[*KINDS, "mixed"], default="mixed")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--history-len", type=int, default=10)
    g.add_argument("--horizon", type=int, default=30)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    m = sub.add_parser("mine-pairs", help="list interactive agent pairs per scenario")
    m.add_argument("--data", required=True)
    m.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mine_pairs)

    t = sub.add_parser("sample-targets", help="sample goal targets for every predictable agent")
    t.add_argument("--data", required=True)
    t.add_argument("--preset", type=int, default=4)
    t.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    t.add_argument("--report", nargs="?", const="one", choices=["one", "all"],
                   help="print best-mode displacement statistics (for --preset, or all presets)")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_sample_targets)

    for name, func, help_ in (("train-marginal", cmd_train_marginal, "train the marginal predictor"),
                              ("train-joint", cmd_train_joint, "train the joint model from a marginal checkpoint")):
        tr = sub.add_parser(name, help=help_)
        tr.add_argument("--config")
        tr.add_argument("--data", required=True)
        tr.add_argument("--pairs", help="mine-pairs output; default: first mined pair per scenario")
        tr.add_argument("--seed", type=int)
        tr.add_argument("--steps", type=int)
        tr.add_argument("--preset", type=int)
        tr.add_argument("--top-k", type=int)
        tr.add_argument("--out", required=True)
        if name == "train-joint":
            tr.add_argument("--init", help="marginal checkpoint (default: [data] marginal_checkpoint, "
                                           "else marginal.ckpt next to --out)")
        tr.set_defaults(func=func)

    pr = sub.add_parser("predict", help="write top-K pair predictions")
    pr.add_argument("--config")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--pairs")
    pr.add_argument("--marginal", action="store_true", help="Cartesian-product baseline instead of joint")
    pr.add_argument("--seed", type=int)
    pr.add_argument("--preset", type=int)
    pr.add_argument("--top-k", type=int)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", help="compute pair-wise metrics as JSON")
    ev.add_argument("--data", required=True)
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_evaluate)

    pl = sub.add_parser("plot", help="render one scenario and its predictions as SVG")
    pl.add_argument("--data", required=True)
    pl.add_argument("--predictions")
    pl.add_argument("--scenario")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


EXPECTED_ERRORS = (ConfigError, CheckpointError, ScenarioParseError, ScenarioValidationError,
                   TargetConfigError, SyntheticConfigError, OSError, ValueError, KeyError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"prospectnet {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
