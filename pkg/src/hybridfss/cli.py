"""Command-line entry point: ``hybridfss {gen,run,bank,bench}``.

Options come from an optional JSON config (``--config``) overridden by flags.
Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .ckmm import build_bank_for_classes, load_bank, save_bank
from .episode import save_episode
from .errors import ConfigError, FormatError, InvariantError
from .pipeline import RunConfig, build_synthetic_bank, evaluate, generate_episodes, load_episodes

log = logging.getLogger("hybridfss")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _csv_strs(text: str) -> list[str]:
    return [v for v in text.split(",") if v]


def _add_synthetic_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--channels", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--shot", type=int)
    g.add_argument("--classes", dest="num_base_classes", type=int, help="number of base classes")
    g.add_argument("--novel-classes", dest="num_novel_classes", type=int)
    g.add_argument("--noise", dest="noise_sigma", type=float)
    g.add_argument("--latent-rate", dest="latent_object_rate", type=float)
    g.add_argument("--episodes", type=int)
    g.add_argument("--episode-classes", choices=("base", "novel", "all"))
    g.add_argument("--bank-instances", type=int)


def _add_pipeline_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("pipeline")
    g.add_argument("--projection", choices=("identity", "random"))
    g.add_argument("--position", choices=("zeros", "random"))
    g.add_argument("--block-size", type=int)
    g.add_argument("--levels", type=int)
    g.add_argument("--topk-schedule", type=_csv_ints)
    g.add_argument("--topk-fraction", type=float)
    g.add_argument("--combine-mode", choices=("add", "multiply", "concat"))
    g.add_argument("--aggregate-mode", choices=("concat", "add", "multiply"))
    g.add_argument("--tau", type=float)
    g.add_argument("--w-ag", type=float)
    g.add_argument("--normalize", action="store_const", const=True, default=None,
                   help="cosine instead of raw dot product in the class-agnostic map")
    g.add_argument("--exclude-masked-tokens", action="store_const", const=True, default=None)
    g.add_argument("--pad", action="store_const", const=True, default=None,
                   help="zero-pad maps whose size is not a multiple of the block size")
    g.add_argument("--ablate", type=_csv_strs, help="comma list from p2p,p2b,ckmm")
    g.add_argument("--episodes-dir")
    g.add_argument("--bank", dest="bank_path")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (report file, or directory for gen)")
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hybridfss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="write synthetic episodes to a directory")
    _add_synthetic_flags(gen)

    run = sub.add_parser("run", parents=[common], help="run the pipeline and print an evaluation report")
    _add_synthetic_flags(run)
    _add_pipeline_flags(run)

    bank = sub.add_parser("bank", parents=[common], help="build and save a base-class prototype bank")
    _add_synthetic_flags(bank)
    bank.add_argument("--from-episodes", help="use support pairs of saved episodes as instances")

    b = sub.add_parser("bench", parents=[common], help="time the attention variants")
    b.add_argument("--variants", type=_csv_strs, default=list(bench.VARIANTS))
    b.add_argument("--tokens", type=_csv_ints, default=[1024, 3600])
    b.add_argument("--bench-channels", dest="bench_channels", type=_csv_ints, default=[64])
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--warmup", type=int, default=bench.DEFAULT_WARMUP)
    b.add_argument("--csv", help="also write the results as CSV to this path")
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "from_episodes", "variants", "tokens",
               "bench_channels", "repeats", "warmup", "csv"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    if args.command == "gen" and overrides.get("out") is not None:
        overrides["episodes_dir"] = overrides["out"]
    return cfg.updated(**overrides)


def _emit(text: str, out: str | None):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_generate(cfg: RunConfig) -> str:
    if not cfg.episodes_dir:
        raise ConfigError("gen needs an output directory (--out or episodes_dir)")
    root = Path(cfg.episodes_dir)
    episodes = generate_episodes(cfg)
    for i, ep in enumerate(episodes):
        save_episode(root / f"episode_{i:04d}", ep)
    summary = {
        "episodes": len(episodes),
        "directory": str(root),
        "latent_objects": sum(ep.has_latent_object for ep in episodes),
        "synthetic": cfg.to_dict()["synthetic"],
    }
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def cmd_run(cfg: RunConfig) -> str:
    if cfg.episodes_dir:
        episodes = load_episodes(cfg.episodes_dir)
    else:
        episodes = generate_episodes(cfg)
    bank = None
    if "ckmm" not in cfg.ablate:
        bank = load_bank(cfg.bank_path) if cfg.bank_path else build_synthetic_bank(cfg)
    report, _ = evaluate(cfg, episodes, bank)
    return report.to_json()


def cmd_bank(cfg: RunConfig, from_episodes: str | None, out: str | None) -> str:
    target = out or cfg.bank_path
    if not target:
        raise ConfigError("bank needs an output path (--out or bank_path)")
    if from_episodes:
        instances = [(s.features, s.mask, ep.class_id)
                     for ep in load_episodes(from_episodes) for s in ep.supports]
        base = [c for c in cfg.synthetic.base_classes]
        bank = build_bank_for_classes([i for i in instances if i[2] in base], base)
    else:
        bank = build_synthetic_bank(cfg)
    save_bank(target, bank)
    summary = {"path": str(target), "class_ids": bank.class_ids,
               "instance_counts": bank.instance_counts, "channels": bank.channels}
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def cmd_bench(args: argparse.Namespace, seed: int) -> str:
    results = bench.run_bench(args.variants, args.tokens, args.bench_channels,
                              args.repeats, seed, args.warmup)
    if args.csv:
        Path(args.csv).write_text(bench.report_csv(results))
    return bench.report_json(results)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "gen":
            _emit(cmd_generate(cfg), None)
        elif args.command == "run":
            _emit(cmd_run(cfg), cfg.out)
        elif args.command == "bank":
            _emit(cmd_bank(cfg, args.from_episodes, cfg.out), None)
        elif args.command == "bench":
            _emit(cmd_bench(args, cfg.seed), cfg.out)
    except InvariantError as exc:
        log.error("%s", exc)
        return EXIT_INVARIANT
    except (OSError, FormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (ConfigError, ValueError, TypeError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
