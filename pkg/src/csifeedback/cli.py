"""Command-line front end: ``csifb train | eval | baseline | sweep``.

Configuration files are JSON with optional ``system``, ``training`` and
``sweep`` sections. Outputs go to ``--out``, else ``$CSIFB_OUTPUT_DIR``,
else ``./runs``.

Exit codes: 0 success, 1 sweep finished with failed points, 2 bad
configuration or usage, 3 I/O or corrupt file, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import sweep as sw
from .channel import SystemConfig
from .checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, DecodeError, DimensionMismatchError, NumericalError
from .system import FeedbackSystem
from .trainer import TEST_SET_SIZE, Trainer, TrainingConfig, evaluate, heads_for

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3, 4
OUTPUT_ENV = "CSIFB_OUTPUT_DIR"
SECTIONS = ("system", "training", "sweep")

log = logging.getLogger("csifeedback")


def load_config(path) -> dict:
    """Read a JSON config; a missing or malformed file is a configuration error."""
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or set(data) - set(SECTIONS):
        raise ConfigError(f"config must be an object with sections {SECTIONS}")
    return data


def build_configs(data: dict, args) -> tuple[SystemConfig, TrainingConfig]:
    system = dict(data.get("system", {}))
    training = dict(data.get("training", {}))
    if getattr(args, "seed", None) is not None:
        system["rng_seed"] = training["rng_seed"] = args.seed
    for flag, key in (("lam", "lam"), ("gamma", "gamma"), ("steps", "total_batches")):
        value = getattr(args, flag, None)
        if value is not None:
            training[key] = value
    return SystemConfig.from_dict(system), TrainingConfig.from_dict(training)


def output_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV) or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _progress(step, row):
    o, r, d, loss = row
    log.info("step %d  overhead %.4f  rate %.4f  distortion %.4f  loss %.4f", step, o, r, d, loss)


def cmd_train(args) -> int:
    system_cfg, train_cfg = build_configs(load_config(args.config), args)
    out = output_dir(args)
    name = train_cfg.checkpoint_path or f"{train_cfg.mode}_lam{train_cfg.lam:g}_gamma{train_cfg.gamma:g}.ckpt"
    train_cfg = dataclasses.replace(train_cfg, checkpoint_path=name)
    trainer = Trainer(FeedbackSystem(system_cfg), train_cfg)
    log.info("training %s model (lambda=%g, gamma=%g) for %d batches",
             train_cfg.mode, train_cfg.lam, train_cfg.gamma, train_cfg.total_batches)
    log_path = out / (Path(name).stem + ".log.csv")
    trainer.run(log_path=log_path, progress=_progress)
    ident = save_checkpoint(trainer, out / name)
    print(f"checkpoint {out / name} id {ident}")
    print(f"log {log_path}")
    return EXIT_OK


def _emit(rows: list[dict], csv_path: Path):
    text = sw.rows_to_csv(rows)
    sys.stdout.write(text)
    csv_path.write_text(text)
    log.info("wrote %s", csv_path)


def cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    trainer = load_checkpoint(path)
    tc = trainer.config
    metrics = evaluate(trainer.system, args.testset_seed, args.n_test, heads=heads_for(tc))
    row = sw.metrics_row(sw.SweepPoint(tc.lam, tc.gamma), metrics, tc.rng_seed,
                         args.testset_seed, checkpoint_id(path.read_bytes()))
    csv_path = Path(args.csv) if args.csv else output_dir(args) / f"{path.stem}.eval.csv"
    _emit([row], csv_path)
    return EXIT_OK


def cmd_baseline(args) -> int:
    system_cfg, _ = build_configs(load_config(args.config), args)
    row = sw.baseline_row(system_cfg, args.method, args.testset_seed, args.n_test)
    csv_path = Path(args.csv) if args.csv else output_dir(args) / f"baseline_{args.method}.csv"
    _emit([row], csv_path)
    return EXIT_OK


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value list {text!r}") from exc


def cmd_sweep(args) -> int:
    data = load_config(args.config)
    system_cfg, train_cfg = build_configs(data, args)
    opts = dict(data.get("sweep", {}))
    unknown = set(opts) - {"lambdas", "gammas", "testset_seed", "n_test"}
    if unknown:
        raise ConfigError(f"unknown sweep fields: {sorted(unknown)}")
    lambdas = _floats(args.lambdas) if args.lambdas is not None else opts.get("lambdas", sw.DEFAULT_LAMBDAS)
    gammas = _floats(args.gammas) if args.gammas is not None else opts.get("gammas", sw.DEFAULT_GAMMAS)
    points = sw.grid(lambdas, gammas)
    if not points:
        raise ConfigError("sweep needs at least one lambda or gamma value")
    testset_seed = args.testset_seed if args.testset_seed is not None else opts.get("testset_seed", 1234)
    n_test = args.n_test if args.n_test is not None else opts.get("n_test", TEST_SET_SIZE)
    out = output_dir(args)
    rows = sw.run_sweep(system_cfg, train_cfg, points, out, testset_seed, n_test,
                        jobs=args.jobs, resume=not args.no_resume)
    sys.stdout.write(sw.rows_to_csv(rows))
    comparison = sw.low_overhead_comparison(rows)
    if comparison is not None and not comparison["holds"]:
        sw.write_tradeoff_warning(out / "tradeoff_warning.txt", comparison)
        log.warning("low-overhead expectation not met; see %s", out / "tradeoff_warning.txt")
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        log.error("%d sweep point(s) failed", len(failed))
        return EXIT_PARTIAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csifb", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only print warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", nargs="?", help="JSON configuration file")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./runs)")

    def evaluation(p):
        p.add_argument("--testset-seed", type=int, default=1234)
        p.add_argument("--n-test", type=int, default=TEST_SET_SIZE)
        p.add_argument("--csv", help="CSV output path")

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="override total_batches")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the seeded test set")
    p.add_argument("checkpoint")
    common(p, config=False)
    evaluation(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="CSIT baseline on the seeded test set")
    common(p)
    p.add_argument("--method", choices=sw.BASELINES, required=True)
    evaluation(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="train and evaluate a lambda/gamma grid")
    common(p)
    p.add_argument("--lambdas", help="comma-separated, e.g. 0.5,1,2,4,8")
    p.add_argument("--gammas", help="comma-separated; empty string for none")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="override total_batches")
    p.add_argument("--testset-seed", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--jobs", type=int, default=1, help="train points in parallel processes")
    p.add_argument("--no-resume", action="store_true", help="retrain even if checkpoints exist")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DimensionMismatchError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, DecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
