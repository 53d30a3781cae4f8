"""Command-line interface.

Subcommands: evolve, baseline-rl, compare, inspect, resume. Precedence for
settings is CLI flag > NMEVO_* environment variable > config file > preset.
Flag-level environment mirrors: NMEVO_CONFIG, NMEVO_PRESET, NMEVO_SEED,
NMEVO_MODE, NMEVO_THREADS, NMEVO_OUT. Section-level keys are also settable
as NMEVO_<SECTION>_<KEY> (for example NMEVO_EVOLUTION_GENERATIONS).

Exit codes: 0 success; 2 configuration or input error; 3 resume mismatch;
4 numeric divergence in a non-evolution run.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__, genome, runner
from . import config as configmod
from .checkpoint import CheckpointError, ResumeMismatch
from .config import ConfigError
from .genome import VALUE_COL, GenotypeParseError
from .lifetime import MODES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESUME = 3
EXIT_DIVERGED = 4


def _env(name: str) -> str | None:
    return os.environ.get(f"NMEVO_{name}")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=_env("CONFIG"), help="INI config file")
    sub.add_argument("--preset", default=_env("PRESET") or "paper-full",
                     choices=["paper-full", "desk-scale"], help="base preset")
    sub.add_argument("--seed", type=int,
                     default=None if _env("SEED") is None else int(_env("SEED")),
                     help="master seed (overrides config)")
    sub.add_argument("--mode", default=_env("MODE"), choices=list(MODES),
                     help="run mode (overrides config)")
    sub.add_argument("--threads", type=int,
                     default=int(_env("THREADS") or "1"), help="worker threads")
    sub.add_argument("--out", default=_env("OUT"), help="output directory")


def _load_config(args) -> configmod.RunConfig:
    cfg = configmod.load(args.config, preset_name=args.preset)
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["evolution.master_seed"] = args.seed
    if args.mode is not None:
        overrides["evolution.mode"] = args.mode
    if overrides:
        cfg = configmod.apply(cfg, overrides)
    return cfg


def _require_out(args) -> str:
    if not args.out:
        raise ConfigError("an output directory is required (--out or NMEVO_OUT)")
    return args.out


def cmd_evolve(args) -> int:
    cfg = _load_config(args)
    result = runner.run_evolution(cfg, _require_out(args), threads=args.threads,
                                  stop_after=args.stop_after)
    if result.champion_path:
        print(f"champion written to {result.champion_path}")
    else:
        print(f"stopped before generation {result.last_generation}; resume to continue")
    return EXIT_OK


def cmd_resume(args) -> int:
    out = _require_out(args)
    snapshot = os.path.join(out, "config.ini")
    config_path = args.config or snapshot
    if not os.path.exists(config_path):
        raise ConfigError(f"no config snapshot at {snapshot}; was this an evolve run?")
    cfg = configmod.load(config_path, preset_name=args.preset)
    if args.seed is not None or args.mode is not None:
        raise ConfigError("resume cannot change seed or mode; edit a new run instead")
    result = runner.run_evolution(cfg, out, threads=args.threads,
                                  stop_after=args.stop_after, resume=True)
    if result.champion_path:
        print(f"champion written to {result.champion_path}")
    else:
        print(f"stopped before generation {result.last_generation}; resume to continue")
    return EXIT_OK


def cmd_baseline_rl(args) -> int:
    cfg = _load_config(args)
    curve = runner.run_baseline(cfg, _require_out(args))
    window = min(cfg.curve_window, curve.mean.size)
    tail = float(curve.mean[-window:].mean())
    print(f"baseline mean reward over final {window} trials: {tail:.4f}")
    if curve.n_diverged:
        print(f"error: {curve.n_diverged} instance(s) diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    curves, errors = runner.run_compare(
        cfg, args.champions, _require_out(args),
        n_trials=args.trials, n_instances=args.instances,
    )
    for path, message in errors.items():
        print(f"error: skipped {path}: {message}", file=sys.stderr)
    diverged = 0
    for label, curve in curves.items():
        window = min(cfg.curve_window, curve.mean.size)
        print(f"{label}: final-{window}-trial mean reward {curve.mean[-window:].mean():.4f}")
        diverged += curve.n_diverged
    if diverged:
        print(f"error: {diverged} instance evaluation(s) diverged", file=sys.stderr)
        return EXIT_DIVERGED
    if errors:
        return EXIT_CONFIG
    return EXIT_OK


def _format_genotype(g: genome.Genotype) -> str:
    graph = genome.active_graph(g)
    names = {c: f"{genome.COLUMN_ROLES[c]}({c})" for c in range(genome.N_COLUMNS)}
    lines = [
        f"global_rl_rate: {g.global_rl_rate!r}",
        f"projections: {len(g.activatory)} activatory, {len(g.modulatory)} modulatory",
        f"active graph: {len(graph.columns)} columns, "
        f"{len(graph.activatory)} activatory, {len(graph.modulatory)} modulatory",
        "columns:",
    ]
    for c in range(genome.N_COLUMNS):
        state = "active" if c in graph.columns else "inactive"
        lines.append(
            f"  {c}: {genome.COLUMN_ROLES[c]:13s} size {genome.column_size(c)} "
            f"{genome.COLUMN_ACTIVATIONS[c]:11s} {state}"
        )
    lines.append("activatory projections:")
    if not g.activatory:
        lines.append("  (none)")
    for k, p in enumerate(g.activatory):
        state = "active" if k in graph.activatory else "inactive"
        lines.append(
            f"  {names[p.pre]} -> {names[p.post]}  "
            f"weights {p.weights.shape[0]}x{p.weights.shape[1]}  "
            f"local_rl_rate {p.local_rl_rate!r}  {state}"
        )
    lines.append("modulatory projections:")
    if not g.modulatory:
        lines.append("  (none)")
    for k, q in enumerate(g.modulatory):
        state = "active" if k in graph.modulatory else "inactive"
        lines.append(
            f"  reads {names[q.column]}, modulates {names[q.target_pre]} -> "
            f"{names[q.target_post]}  priority {q.priority!r}  {state}"
        )
    reads_value = any(
        g.modulatory[k].column == VALUE_COL for k in graph.modulatory
    )
    if g.global_rl_rate == 0.0 and not reads_value:
        lines.append("value output: vestigial (no RL, not read by modulation)")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    try:
        with open(args.genotype, encoding="utf-8") as fh:
            g = genome.from_text(fh.read())
    except OSError as exc:
        print(f"error: cannot read {args.genotype}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GenotypeParseError as exc:
        print(f"error: {args.genotype}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_format_genotype(g))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmevo",
        description="Evolutionary laboratory for neuromodulation-based learning.",
    )
    parser.add_argument("--version", action="version", version=f"nmevo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="run the generational loop")
    _add_common(p)
    p.add_argument("--stop-after", type=int, default=None, metavar="G",
                   help="halt cleanly before generation G (resumable)")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("resume", help="continue a checkpointed evolve run")
    _add_common(p)
    p.add_argument("--stop-after", type=int, default=None, metavar="G")
    p.set_defaults(fn=cmd_resume)

    p = sub.add_parser("baseline-rl", help="train the pure-RL reference agent")
    _add_common(p)
    p.set_defaults(fn=cmd_baseline_rl)

    p = sub.add_parser("compare", help="learning curves for stored champions")
    _add_common(p)
    p.add_argument("champions", nargs="*", help="genotype files")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--instances", type=int, default=16)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("inspect", help="describe a stored genotype")
    p.add_argument("genotype", help="genotype file")
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResumeMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESUME
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESUME


if __name__ == "__main__":
    sys.exit(main())
