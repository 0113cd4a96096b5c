"""Command-line front end: generate datasets, learn graphs, run benchmarks.

Exit codes: 0 success, 2 validation problems, 3 I/O problems, 4 run failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from kclearn.agents import ControllerConfig
from kclearn.bench import (
    ABLATION_VARIANTS,
    BenchmarkPlan,
    FitnessSpec,
    format_ablation,
    format_summary,
    run_ablation,
    run_and_save,
    run_benchmark,
)
from kclearn.data import (
    PRESETS,
    SyntheticSpec,
    generate_dataset,
    load_dataset,
    preset_spec,
    save_dataset,
)
from kclearn.engine import EngineConfig
from kclearn.errors import (
    ConfigurationError,
    DataFormatError,
    DecisionParseError,
    DimensionError,
    InvalidPairError,
    KCLearnError,
    ValidationError,
)
from kclearn.graph import gene_count

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_RUN = 4

_VALIDATION_ERRORS = (
    ConfigurationError,
    ValidationError,
    DataFormatError,
    DecisionParseError,
    DimensionError,
    InvalidPairError,
)

_ENGINE_FLAGS = (
    "pop_size",
    "max_fe",
    "ap",
    "pf",
    "nf",
    "f_de",
    "cr",
    "p_init",
)
_CONTROLLER_FLAGS = (
    "endpoint",
    "model",
    "timeout",
    "max_retries",
    "api_key_env",
    "prompt_dir",
    "temperature",
)


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("engine")
    group.add_argument("--pop-size", type=int, default=None)
    group.add_argument("--max-fe", type=int, default=None)
    group.add_argument("--ap", type=float, default=None)
    group.add_argument("--pf", type=float, default=None)
    group.add_argument("--nf", type=float, default=None)
    group.add_argument("--f-de", type=float, default=None)
    group.add_argument("--cr", type=float, default=None)
    group.add_argument("--p-init", type=float, default=None)


def _add_controller_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("controller")
    group.add_argument("--agent-backend", choices=("llm", "rule", "off"), default=None)
    group.add_argument(
        "--disable-agent",
        action="append",
        choices=("game", "pfa", "nfa"),
        default=None,
        help="freeze one agent's parameter (repeatable)",
    )
    group.add_argument("--endpoint", default=None, help="LLM chat-completion URL")
    group.add_argument("--model", default=None)
    group.add_argument("--timeout", type=float, default=None)
    group.add_argument("--max-retries", type=int, default=None)
    group.add_argument("--api-key-env", default=None, help="env var holding the API token")
    group.add_argument("--prompt-dir", default=None)
    group.add_argument("--temperature", type=float, default=None)


def _add_fitness_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("fitness")
    group.add_argument("--fitness", choices=("recovery", "consistency"), default=None)
    group.add_argument("--tau", type=float, default=None)
    group.add_argument("--min-support", type=int, default=None)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise DataFormatError(f"{path}: config file must hold a JSON object")
    return data


def _engine_config(args: argparse.Namespace, file_cfg: dict) -> EngineConfig:
    settings = dict(file_cfg.get("engine", {}))
    for name in _ENGINE_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    if getattr(args, "seed", None) is not None:
        settings["seed"] = args.seed
    try:
        return EngineConfig(**settings)
    except TypeError as exc:
        raise ConfigurationError(f"bad engine settings: {exc}") from exc


def _controller_config(args: argparse.Namespace, file_cfg: dict) -> ControllerConfig:
    settings = dict(file_cfg.get("controller", {}))
    for name in _CONTROLLER_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    if getattr(args, "agent_backend", None) is not None:
        settings["backend"] = args.agent_backend
    for agent in getattr(args, "disable_agent", None) or ():
        settings[f"{agent}_enabled"] = False
    try:
        cfg = ControllerConfig(**settings)
    except TypeError as exc:
        raise ConfigurationError(f"bad controller settings: {exc}") from exc
    if cfg.backend == "llm" and not os.environ.get(cfg.api_key_env, ""):
        raise ConfigurationError(
            f"agent backend 'llm' needs an API token in ${cfg.api_key_env}"
        )
    return cfg


def _fitness_spec(args: argparse.Namespace, file_cfg: dict) -> FitnessSpec:
    settings = dict(file_cfg.get("fitness", {}))
    if getattr(args, "fitness", None) is not None:
        settings["kind"] = args.fitness
    if getattr(args, "tau", None) is not None:
        settings["tau"] = args.tau
    if getattr(args, "min_support", None) is not None:
        settings["min_support"] = args.min_support
    try:
        return FitnessSpec(**settings)
    except TypeError as exc:
        raise ConfigurationError(f"bad fitness settings: {exc}") from exc


def cmd_generate(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.preset:
        spec = preset_spec(args.preset, seed=seed)
        if args.n is not None or args.density is not None:
            raise ConfigurationError("give either --preset or --n/--density, not both")
    else:
        if args.n is None or args.density is None:
            raise ConfigurationError("need --preset, or both --n and --density")
        spec = SyntheticSpec(
            n=args.n,
            density=args.density,
            num_learners=args.learners,
            p_root=args.p_root,
            p_learn=args.p_learn,
            p_slip=args.p_slip,
            noise=args.noise,
            seed=seed,
        )
    if args.learners is not None and args.preset:
        spec = replace(spec, num_learners=args.learners)
    name = args.name or (f"{args.preset}-seed{seed}" if args.preset else None)
    dataset = generate_dataset(spec, name=name)
    path = save_dataset(dataset, Path(args.out))
    print(f"wrote dataset bundle: {path}")
    print(
        f"  n={dataset.n}  D={gene_count(dataset.n)}  "
        f"edges={dataset.truth.popcount}  learners={dataset.responses.num_learners}"
    )
    return EXIT_OK


def cmd_learn(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    engine_cfg = _engine_config(args, file_cfg)
    controller_cfg = _controller_config(args, file_cfg)
    fitness = _fitness_spec(args, file_cfg)
    dataset = load_dataset(Path(args.dataset))
    out_dir = Path(args.out)
    started = time.perf_counter()
    result = run_and_save(dataset, engine_cfg, controller_cfg, fitness, out_dir)
    elapsed = time.perf_counter() - started
    print(f"final loss: {result.best_loss:.6f}")
    print(
        f"generations: {result.generations}  total evaluations: {result.total_fe}  "
        f"({elapsed:.2f}s)"
    )
    print(f"artifacts in: {out_dir}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    plan_dict = _load_config_file(args.plan)
    if args.out is not None:
        plan_dict["out_dir"] = args.out
    if args.jobs is not None:
        plan_dict["jobs"] = args.jobs
    plan = BenchmarkPlan.from_dict(plan_dict)
    rows, failures = run_benchmark(plan)
    print(format_summary(rows, failures), end="")
    print(f"outputs in: {plan.out_dir}")
    return EXIT_RUN if failures else EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    engine_cfg = _engine_config(args, file_cfg)
    controller_cfg = _controller_config(args, file_cfg)
    fitness = _fitness_spec(args, file_cfg)
    if args.seed_list:
        seeds = [int(s) for s in args.seed_list.split(",")]
    else:
        seeds = list(range(args.seeds))
    table, failures = run_ablation(
        args.dataset,
        seeds,
        args.out,
        engine=_public_dict(engine_cfg),
        controller=_public_dict(controller_cfg),
        fitness=fitness,
        variants=ABLATION_VARIANTS,
        jobs=args.jobs,
    )
    print(format_ablation(table), end="")
    print(f"outputs in: {args.out}")
    return EXIT_RUN if failures else EXIT_OK


def _public_dict(cfg) -> dict:
    from dataclasses import asdict

    data = asdict(cfg)
    data.pop("seed", None)  # benchmark cells set their own seeds
    return data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kclearn",
        description="Learn prerequisite-graph structure over knowledge components.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset bundle")
    gen.add_argument("--preset", choices=sorted(PRESETS), default=None)
    gen.add_argument("--n", type=int, default=None)
    gen.add_argument("--density", type=float, default=None)
    gen.add_argument("--learners", type=int, default=None)
    gen.add_argument("--p-root", type=float, default=0.6)
    gen.add_argument("--p-learn", type=float, default=0.8)
    gen.add_argument("--p-slip", type=float, default=0.1)
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--name", default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    learn = sub.add_parser("learn", help="run the optimizer on a dataset bundle")
    learn.add_argument("dataset")
    learn.add_argument("--out", required=True)
    learn.add_argument("--seed", type=int, default=None)
    learn.add_argument("--config", default=None, help="JSON config file; flags win")
    _add_engine_flags(learn)
    _add_controller_flags(learn)
    _add_fitness_flags(learn)
    learn.set_defaults(func=cmd_learn)

    bench = sub.add_parser("benchmark", help="run a benchmark plan file")
    bench.add_argument("plan", help="JSON plan: datasets, variants, seeds, overrides")
    bench.add_argument("--out", default=None, help="override the plan's output directory")
    bench.add_argument("--jobs", type=int, default=None)
    bench.set_defaults(func=cmd_benchmark)

    ablate = sub.add_parser("ablate", help="five-variant ablation table on one dataset")
    ablate.add_argument("dataset")
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--seeds", type=int, default=10, help="use seeds 0..N-1")
    ablate.add_argument("--seed-list", default=None, help="comma-separated explicit seeds")
    ablate.add_argument("--jobs", type=int, default=1)
    ablate.add_argument("--config", default=None)
    _add_engine_flags(ablate)
    _add_controller_flags(ablate)
    _add_fitness_flags(ablate)
    ablate.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KCLearnError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
