"""Command-line entry point: generate data, train, evaluate, gradient-check.

Exit codes are a stable contract: 0 success, 2 user/input error, 3 numerical
failure. Config precedence is preset < config file < environment < flags, and
every train run writes a manifest (before training starts) that is sufficient
to reproduce it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .checkpoint import check_vocab_compatibility, load_checkpoint, save_checkpoint
from .corpus import build_vocabs, file_digest, parse_corpus
from .errors import CheckpointError, NumericalError, ParseError, ValidationError
from .generator import gen_synthetic
from .training import (
    MODES,
    PRESETS,
    TrainConfig,
    evaluate,
    joint_gradcheck,
    make_config,
    train,
    tune_thresholds,
    write_trainlog,
)

log = logging.getLogger("dialact")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    """User-facing error that maps to exit code 2."""


def _setup_logging() -> None:
    level_name = os.environ.get("DIALACT_LOG", "info").lower()
    level = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level_name, logging.INFO
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(message)s")


def _env_seed() -> int | None:
    raw = os.environ.get("DIALACT_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise CliError(f"DIALACT_SEED must be an integer, got {raw!r}") from exc


def _resolve_config(args) -> TrainConfig:
    """preset defaults < --config file < DIALACT_SEED < command-line flags."""
    overrides: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise CliError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {config_path}: {exc.msg}") from exc
        known = {f.name for f in fields(TrainConfig)}
        for key in raw:
            if key not in known:
                raise CliError(f"config file {config_path}: unknown field {key!r}")
        overrides.update(raw)
    env_seed = _env_seed()
    if env_seed is not None:
        overrides["seed"] = env_seed
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    try:
        return make_config(preset=args.preset, **overrides)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load_sessions(path: Path):
    if not path.exists():
        raise CliError(f"missing data file: {path}")
    return parse_corpus(path)


def cmd_gen_data(args) -> int:
    spec = None
    if args.spec:
        try:
            spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise CliError(f"spec file not found: {args.spec}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"spec file {args.spec}: {exc.msg}") from exc
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    manifest = gen_synthetic(spec, seed, args.out)
    for split, stats in manifest["splits"].items():
        log.info("%s: %d sessions, %d utterances", split, stats["sessions"], stats["utterances"])
    log.info(
        "vocab sizes: words=%d M=%d N=%d K=%d",
        manifest["vocab_sizes"]["words"],
        manifest["vocab_sizes"]["M_tags"],
        manifest["vocab_sizes"]["N_intents"],
        manifest["vocab_sizes"]["K_actions"],
    )
    print(json.dumps({"out": str(args.out), "files": manifest["files"]}, sort_keys=True))
    return EXIT_OK


def _format_dev(dev: dict | None) -> str:
    if not dev:
        return ""
    parts = []
    for task in ("tags", "intents", "actions"):
        if task in dev:
            parts.append(f"{task}={dev[task]['FrmAcc']:.3f}")
    return " dev_frmacc " + " ".join(parts)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_sessions = _load_sessions(data_dir / "train.jsonl")
    dev_path = data_dir / "dev.jsonl"
    dev_sessions = parse_corpus(dev_path) if dev_path.exists() else None

    checkpoint_path = out_dir / "checkpoint.ckpt"
    trainlog_path = out_dir / "trainlog.jsonl"
    manifest = {
        "command": "train",
        "tool_version": __version__,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "data_dir": str(data_dir),
        "data_digests": {
            p.name: file_digest(p)
            for p in (data_dir / "train.jsonl", data_dir / "dev.jsonl", data_dir / "test.jsonl")
            if p.exists()
        },
        "checkpoint": str(checkpoint_path),
        "trainlog": str(trainlog_path),
        "init_checkpoint": args.init_checkpoint,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    init_params = None
    if args.init_checkpoint:
        loaded = load_checkpoint(args.init_checkpoint)
        check_vocab_compatibility(loaded, build_vocabs(train_sessions))
        init_params = loaded.params

    def progress(rec):
        log.info(
            "epoch %d/%d loss=%.4f act=%.4f tag=%.4f int=%.4f (%.1fs)%s",
            rec.epoch,
            cfg.epochs,
            rec.loss,
            rec.loss_act,
            rec.loss_tag,
            rec.loss_int,
            rec.seconds,
            _format_dev(rec.dev),
        )

    result = train(cfg, train_sessions, dev_sessions, init_params=init_params, progress=progress)
    save_checkpoint(checkpoint_path, result.params, cfg, result.vocabs)
    write_trainlog(result.log, trainlog_path)
    from .figures import save_training_curves

    save_training_curves([r.to_record() for r in result.log], out_dir / "training_curves.png")
    print(
        json.dumps(
            {
                "checkpoint": str(checkpoint_path),
                "trainlog": str(trainlog_path),
                "figure": str(out_dir / "training_curves.png"),
                "final_loss": result.log[-1].loss,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    loaded = load_checkpoint(args.checkpoint)
    data_dir = Path(args.data)
    train_path = data_dir / "train.jsonl"
    if train_path.exists():
        check_vocab_compatibility(loaded, build_vocabs(parse_corpus(train_path)))
    cfg = TrainConfig(**loaded.config)
    mode = args.mode or cfg.mode
    if mode not in MODES:
        raise CliError(f"mode must be one of {MODES}, got {mode!r}")
    sessions = _load_sessions(data_dir / f"{args.split}.jsonl")

    if args.thresholds == "tune":
        dev_sessions = _load_sessions(data_dir / "dev.jsonl")
        thresholds = tune_thresholds(
            loaded.params, dev_sessions, loaded.vocabs, cfg, mode, parallelism=args.parallelism
        )
        log.info("tuned thresholds: intent=%.3f action=%.3f", thresholds["intent"], thresholds["action"])
    else:
        for name, value in (("intent", args.threshold_intent), ("action", args.threshold_action)):
            if not 0.0 <= value <= 1.0:
                raise CliError(f"--threshold-{name} must be in [0, 1], got {value}")
        thresholds = {"intent": args.threshold_intent, "action": args.threshold_action}
    report = evaluate(
        loaded.params, sessions, loaded.vocabs, cfg, thresholds, mode, parallelism=args.parallelism
    )
    record = report.to_record()
    print(json.dumps(record, sort_keys=True))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval_report.json").write_text(
            json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        manifest = {
            "command": "eval",
            "tool_version": __version__,
            "checkpoint": str(args.checkpoint),
            "data_dir": str(data_dir),
            "split": args.split,
            "mode": mode,
            "thresholds": thresholds,
            "data_digests": {
                p.name: file_digest(p)
                for p in (data_dir / f"{args.split}.jsonl", data_dir / "dev.jsonl")
                if p.exists()
            },
        }
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        from .figures import save_eval_figure

        save_eval_figure(record, out_dir / "eval_report.png")
    return EXIT_OK


def _parse_dims(raw: str | None) -> dict:
    dims: dict = {}
    if not raw:
        return dims
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise CliError(f"--dims entries must look like name=value, got {part!r}")
        key, value = part.split("=", 1)
        try:
            dims[key.strip()] = int(value)
        except ValueError as exc:
            raise CliError(f"--dims {key.strip()}: {value!r} is not an integer") from exc
    return dims


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    try:
        report = joint_gradcheck(
            dims=_parse_dims(args.dims), seed=seed, corrupt=args.corrupt_grad
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    for name in sorted(report.per_param):
        log.info("  %-24s max rel err %.3e", name, report.per_param[name])
    print(
        json.dumps(
            {
                "max_rel_error": report.max_rel_error,
                "worst_coordinate": report.worst_coordinate,
                "passed": report.passed(args.tolerance),
                "tolerance": args.tolerance,
            },
            sort_keys=True,
        )
    )
    if not report.passed(args.tolerance):
        log.error(
            "gradient check FAILED at %s (rel err %.3e)",
            report.worst_coordinate,
            report.max_rel_error,
        )
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialact", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dialact {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--spec", help="generator spec JSON (defaults to the built-in desk spec)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON file of TrainConfig overrides")
    p.add_argument("--data", required=True, help="directory with train/dev/test.jsonl")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init-checkpoint", default=None, help="resume from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", help="data split to score (default test)")
    p.add_argument("--mode", choices=MODES, default=None, help="defaults to the checkpoint's mode")
    p.add_argument(
        "--thresholds",
        default=None,
        choices=["tune"],
        help="'tune' tunes on dev before scoring; otherwise use the explicit flags",
    )
    p.add_argument("--threshold-intent", type=float, default=0.5)
    p.add_argument("--threshold-action", type=float, default=0.5)
    p.add_argument("--out", default=None, help="also write eval_report.json/.png here")
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full joint model")
    p.add_argument("--dims", help="comma list, e.g. embed=8,hidden=8,M=5,N=3,K=4,T=6,I=3,batch=2")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt-grad", default=None, help="testing hook: corrupt one analytic gradient")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("error: %s", exc)
        return EXIT_USAGE
    except (ValidationError, ParseError, CheckpointError, FileNotFoundError) as exc:
        log.error("error: %s", exc)
        return EXIT_USAGE
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
