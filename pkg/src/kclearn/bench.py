"""Benchmark harness: seeded runs, ablation variants, and summary tables.

A run writes four artifacts into its output directory:

    result.json       config, best genome/graph, final loss, full trace
    convergence.csv   generation,fe,best_loss,median_loss,ap,pf,nf
    decisions.jsonl   one agent decision (with observation snapshot) per line
    best_graph.json   the decoded best graph

Primary outputs carry no wall-clock fields, so identical seed/config/dataset
reproduce them byte for byte.
"""

from __future__ import annotations

import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from kclearn.agents import Controller, ControllerConfig
from kclearn.data import Dataset, load_dataset
from kclearn.engine import EngineConfig, RunResult, run
from kclearn.errors import ConfigurationError, StateError, ValidationError
from kclearn.fitness import (
    CONSISTENCY,
    DEFAULT_MIN_SUPPORT,
    DEFAULT_TAU,
    RECOVERY,
    FitnessBackend,
    consistency_backend,
    recovery_backend,
)
from kclearn.graph import decode
from kclearn.ioutil import write_json_atomic, write_text_atomic

VARIANTS: tuple[str, ...] = ("full", "-GA", "-PFA", "-NFA", "-MAS", "plain-DE")
ABLATION_VARIANTS: tuple[str, ...] = ("full", "-GA", "-PFA", "-NFA", "-MAS")

_VARIANT_DIRS = {
    "full": "full",
    "-GA": "no_ga",
    "-PFA": "no_pfa",
    "-NFA": "no_nfa",
    "-MAS": "no_mas",
    "plain-DE": "plain_de",
}


@dataclass(frozen=True)
class FitnessSpec:
    """Which backend to score with, plus consistency thresholds."""

    kind: str = "recovery"
    tau: float = DEFAULT_TAU
    min_support: int = DEFAULT_MIN_SUPPORT

    def __post_init__(self) -> None:
        if self.kind not in ("recovery", "consistency"):
            raise ConfigurationError(f"fitness kind must be recovery or consistency, got {self.kind!r}")


def build_backend(dataset: Dataset, fitness: FitnessSpec) -> FitnessBackend:
    if fitness.kind == "recovery":
        if dataset.truth is None:
            raise ConfigurationError(
                f"dataset {dataset.name!r} has no ground truth; recovery fitness unavailable"
            )
        return recovery_backend(dataset.truth)
    if dataset.responses is None:
        raise ConfigurationError(
            f"dataset {dataset.name!r} has no responses; consistency fitness unavailable"
        )
    return consistency_backend(dataset.responses, fitness.tau, fitness.min_support)


def apply_variant(
    variant: str, engine_cfg: EngineConfig, controller_cfg: ControllerConfig
) -> tuple[EngineConfig, ControllerConfig]:
    """Ablation variants: disable agents and/or zero the feedback factors."""
    if variant == "full":
        return engine_cfg, controller_cfg
    if variant == "-GA":
        return engine_cfg, replace(controller_cfg, game_enabled=False)
    if variant == "-PFA":
        return engine_cfg, replace(controller_cfg, pfa_enabled=False)
    if variant == "-NFA":
        return engine_cfg, replace(controller_cfg, nfa_enabled=False)
    if variant == "-MAS":
        return engine_cfg, replace(controller_cfg, backend="off")
    if variant == "plain-DE":
        return replace(engine_cfg, pf=0.0, nf=0.0), replace(controller_cfg, backend="off")
    raise ValidationError(f"unknown variant {variant!r}; choose from {list(VARIANTS)}")


def trace_to_csv(result: RunResult) -> str:
    lines = ["generation,fe,best_loss,median_loss,ap,pf,nf"]
    for row in result.trace:
        lines.append(
            f"{row.generation},{row.fe},{row.best_loss},{row.median_loss},{row.ap},{row.pf},{row.nf}"
        )
    return "\n".join(lines) + "\n"


def write_run_artifacts(
    result: RunResult,
    out_dir: Path,
    dataset_name: str,
    engine_cfg: EngineConfig,
    controller_cfg: ControllerConfig,
    fitness: FitnessSpec,
) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "dataset": dataset_name,
        "seed": result.seed,
        "engine": asdict(engine_cfg),
        "controller": asdict(controller_cfg),
        "fitness": asdict(fitness),
        "best_loss": result.best_loss,
        "total_fe": result.total_fe,
        "generations": result.generations,
        "best_genome": result.best_genome.to_json_dict(),
        "best_graph": decode(result.best_genome).to_json_dict(),
        "trace": [asdict(row) for row in result.trace],
    }
    write_json_atomic(out_dir / "result.json", payload)
    write_text_atomic(out_dir / "convergence.csv", trace_to_csv(result))
    lines = [json.dumps(entry, sort_keys=True) for entry in result.decisions]
    write_text_atomic(out_dir / "decisions.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    write_json_atomic(out_dir / "best_graph.json", decode(result.best_genome).to_json_dict())
    return payload


def run_and_save(
    dataset: Dataset,
    engine_cfg: EngineConfig,
    controller_cfg: ControllerConfig,
    fitness: FitnessSpec,
    out_dir: Path,
) -> RunResult:
    backend = build_backend(dataset, fitness)
    result = run(engine_cfg, backend, Controller(controller_cfg))
    write_run_artifacts(result, out_dir, dataset.name, engine_cfg, controller_cfg, fitness)
    return result


@dataclass(frozen=True)
class BenchmarkPlan:
    """Every (dataset x variant x seed) cell to run, plus shared overrides."""

    datasets: tuple[str, ...]
    seeds: tuple[int, ...]
    variants: tuple[str, ...] = ("full",)
    out_dir: str = "bench-out"
    engine: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    fitness: FitnessSpec = FitnessSpec()
    jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "variants", tuple(self.variants))
        if not self.datasets:
            raise ValidationError("benchmark plan needs at least one dataset")
        if len(self.seeds) < 3:
            raise ValidationError(
                f"benchmark plan needs at least 3 seeds, got {len(self.seeds)}"
            )
        if not self.variants:
            raise ValidationError("benchmark plan needs at least one variant")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ValidationError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
        if self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkPlan":
        fitness = FitnessSpec(**data.get("fitness", {}))
        try:
            return cls(
                datasets=tuple(data["datasets"]),
                seeds=tuple(data["seeds"]),
                variants=tuple(data.get("variants", ("full",))),
                out_dir=str(data.get("out_dir", "bench-out")),
                engine=dict(data.get("engine", {})),
                controller=dict(data.get("controller", {})),
                fitness=fitness,
                jobs=int(data.get("jobs", 1)),
            )
        except KeyError as exc:
            raise ValidationError(f"benchmark plan missing required field: {exc}") from exc


def _make_configs(plan_engine: dict, plan_controller: dict, seed: int):
    try:
        engine_cfg = EngineConfig(**{**plan_engine, "seed": seed})
    except TypeError as exc:
        raise ConfigurationError(f"bad engine settings: {exc}") from exc
    try:
        controller_cfg = ControllerConfig(**plan_controller)
    except TypeError as exc:
        raise ConfigurationError(f"bad controller settings: {exc}") from exc
    return engine_cfg, controller_cfg


def _run_cell(cell: dict) -> dict:
    """One (dataset, variant, seed) run; module-level so worker pools can pickle it."""
    dataset = load_dataset(cell["dataset_path"])
    engine_cfg, controller_cfg = _make_configs(cell["engine"], cell["controller"], cell["seed"])
    engine_cfg, controller_cfg = apply_variant(cell["variant"], engine_cfg, controller_cfg)
    fitness = FitnessSpec(**cell["fitness"])
    result = run_and_save(dataset, engine_cfg, controller_cfg, fitness, Path(cell["out_dir"]))
    return {
        "dataset": dataset.name,
        "dataset_path": cell["dataset_path"],
        "variant": cell["variant"],
        "seed": cell["seed"],
        "final_loss": result.best_loss,
        "total_fe": result.total_fe,
        "out_dir": cell["out_dir"],
    }


def _summarize(values: list[float]) -> tuple[float, float, float]:
    mean = statistics.mean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd, statistics.median(values)


def paired_signs(reference: list[float], other: list[float]) -> tuple[int, int, int]:
    """(wins, ties, losses) of the reference, paired by position; lower is better."""
    wins = sum(1 for r, o in zip(reference, other) if r < o)
    ties = sum(1 for r, o in zip(reference, other) if r == o)
    return wins, ties, len(reference) - wins - ties


def run_benchmark(plan: BenchmarkPlan) -> tuple[list[dict], list[dict]]:
    """Run every cell; returns (summary rows, per-cell failures).

    Failures are recorded per cell and do not stop the remaining cells.
    """
    out_root = Path(plan.out_dir)
    cells = []
    for dataset_path in plan.datasets:
        ds_name = Path(dataset_path).name
        for variant in plan.variants:
            for seed in plan.seeds:
                cells.append(
                    {
                        "dataset_path": str(dataset_path),
                        "variant": variant,
                        "seed": int(seed),
                        "engine": dict(plan.engine),
                        "controller": dict(plan.controller),
                        "fitness": asdict(plan.fitness),
                        "out_dir": str(
                            out_root / ds_name / _VARIANT_DIRS[variant] / f"seed_{seed}"
                        ),
                    }
                )

    outcomes: list[dict | None] = [None] * len(cells)
    failures: list[dict] = []
    if plan.jobs > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            futures = [pool.submit(_run_cell, cell) for cell in cells]
            for i, future in enumerate(futures):
                try:
                    outcomes[i] = future.result()
                except Exception as exc:  # noqa: BLE001 - record and continue
                    failures.append({**_cell_id(cells[i]), "error": str(exc)})
    else:
        for i, cell in enumerate(cells):
            try:
                outcomes[i] = _run_cell(cell)
            except Exception as exc:  # noqa: BLE001 - record and continue
                failures.append({**_cell_id(cell), "error": str(exc)})

    completed = [o for o in outcomes if o is not None]
    rows = _aggregate(completed, plan)
    _write_summary(rows, completed, failures, out_root)
    _self_check(rows, completed)
    return rows, failures


def _cell_id(cell: dict) -> dict:
    return {
        "dataset": Path(cell["dataset_path"]).name,
        "variant": cell["variant"],
        "seed": cell["seed"],
    }


def _aggregate(completed: list[dict], plan: BenchmarkPlan) -> list[dict]:
    rows = []
    by_key: dict[tuple[str, str], list[dict]] = {}
    for outcome in completed:
        by_key.setdefault((outcome["dataset"], outcome["variant"]), []).append(outcome)
    for (dataset, variant), group in sorted(by_key.items()):
        group = sorted(group, key=lambda o: o["seed"])
        finals = [o["final_loss"] for o in group]
        mean, sd, median = _summarize(finals)
        row = {
            "dataset": dataset,
            "variant": variant,
            "seeds": len(finals),
            "mean": mean,
            "sd": sd,
            "median": median,
        }
        full_group = sorted(by_key.get((dataset, "full"), []), key=lambda o: o["seed"])
        if variant != "full" and len(full_group) == len(group) and full_group:
            full_finals = [o["final_loss"] for o in full_group]
            wins, ties, losses = paired_signs(full_finals, finals)
            row.update({"full_wins": wins, "full_ties": ties, "full_losses": losses})
        rows.append(row)
    return rows


def _write_summary(
    rows: list[dict], completed: list[dict], failures: list[dict], out_root: Path
) -> None:
    out_root.mkdir(parents=True, exist_ok=True)
    finals_lines = ["dataset,variant,seed,final_loss,total_fe"]
    for outcome in sorted(completed, key=lambda o: (o["dataset"], o["variant"], o["seed"])):
        finals_lines.append(
            f"{outcome['dataset']},{outcome['variant']},{outcome['seed']},"
            f"{outcome['final_loss']},{outcome['total_fe']}"
        )
    write_text_atomic(out_root / "finals.csv", "\n".join(finals_lines) + "\n")

    summary_lines = ["dataset,variant,seeds,mean,sd,median,full_wins,full_ties,full_losses"]
    for row in rows:
        summary_lines.append(
            f"{row['dataset']},{row['variant']},{row['seeds']},{row['mean']},{row['sd']},"
            f"{row['median']},{row.get('full_wins', '')},{row.get('full_ties', '')},"
            f"{row.get('full_losses', '')}"
        )
    write_text_atomic(out_root / "summary.csv", "\n".join(summary_lines) + "\n")
    write_text_atomic(out_root / "summary.txt", format_summary(rows, failures))


def format_summary(rows: list[dict], failures: list[dict]) -> str:
    """Fixed-width table; the best mean per dataset is starred."""
    lines = []
    best_mean: dict[str, float] = {}
    for row in rows:
        best = best_mean.get(row["dataset"])
        if best is None or row["mean"] < best:
            best_mean[row["dataset"]] = row["mean"]
    header = f"{'dataset':<28} {'variant':<10} {'seeds':>5} {'mean':>12} {'sd':>12} {'median':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in rows:
        star = "*" if row["mean"] == best_mean[row["dataset"]] else " "
        lines.append(
            f"{row['dataset']:<28} {row['variant']:<10} {row['seeds']:>5} "
            f"{row['mean']:>12.6f}{star} {row['sd']:>12.6f} {row['median']:>12.6f}"
        )
    if failures:
        lines.append("")
        lines.append(f"{len(failures)} failed cell(s):")
        for failure in failures:
            lines.append(
                f"  {failure['dataset']} / {failure['variant']} / seed {failure['seed']}: "
                f"{failure['error']}"
            )
    return "\n".join(lines) + "\n"


def _self_check(rows: list[dict], completed: list[dict]) -> None:
    """Recompute each cell mean/sd from the result.json files it cites."""
    by_key: dict[tuple[str, str], list[dict]] = {}
    for outcome in completed:
        by_key.setdefault((outcome["dataset"], outcome["variant"]), []).append(outcome)
    for row in rows:
        group = by_key[(row["dataset"], row["variant"])]
        reread = []
        for outcome in sorted(group, key=lambda o: o["seed"]):
            payload = json.loads(
                (Path(outcome["out_dir"]) / "result.json").read_text(encoding="utf-8")
            )
            reread.append(payload["best_loss"])
        mean, sd, _ = _summarize(reread)
        if mean != row["mean"] or sd != row["sd"]:
            raise StateError(
                f"summary self-consistency check failed for {row['dataset']}/{row['variant']}: "
                f"summary says mean={row['mean']}, files say mean={mean}"
            )


def run_ablation(
    dataset_path: str,
    seeds: list[int],
    out_dir: str,
    engine: dict | None = None,
    controller: dict | None = None,
    fitness: FitnessSpec = FitnessSpec(),
    variants: tuple[str, ...] = ABLATION_VARIANTS,
    jobs: int = 1,
) -> tuple[list[dict], list[dict]]:
    """Five-variant table with loss increase relative to the full algorithm."""
    plan = BenchmarkPlan(
        datasets=(dataset_path,),
        seeds=tuple(seeds),
        variants=variants,
        out_dir=out_dir,
        engine=engine or {},
        controller=controller or {},
        fitness=fitness,
        jobs=jobs,
    )
    rows, failures = run_benchmark(plan)
    full_mean = next((r["mean"] for r in rows if r["variant"] == "full"), None)
    table = []
    for variant in variants:
        row = next((r for r in rows if r["variant"] == variant), None)
        if row is None:
            continue
        if full_mean is None:
            delta_pct = float("nan")
        elif full_mean == 0.0:
            delta_pct = 0.0 if row["mean"] == 0.0 else float("inf")
        else:
            delta_pct = 100.0 * (row["mean"] - full_mean) / full_mean
        table.append({**row, "delta_pct": delta_pct})

    out_root = Path(plan.out_dir)
    lines = ["variant,seeds,mean,sd,median,delta_pct,full_wins,full_ties,full_losses"]
    for row in table:
        lines.append(
            f"{row['variant']},{row['seeds']},{row['mean']},{row['sd']},{row['median']},"
            f"{row['delta_pct']},{row.get('full_wins', '')},{row.get('full_ties', '')},"
            f"{row.get('full_losses', '')}"
        )
    write_text_atomic(out_root / "ablation.csv", "\n".join(lines) + "\n")
    write_text_atomic(out_root / "ablation.txt", format_ablation(table))
    return table, failures


def format_ablation(table: list[dict]) -> str:
    header = f"{'variant':<10} {'mean':>12} {'sd':>12} {'median':>12} {'delta%':>10} {'w/t/l':>8}"
    lines = [header, "-" * len(header)]
    for row in table:
        signs = (
            f"{row['full_wins']}/{row['full_ties']}/{row['full_losses']}"
            if "full_wins" in row
            else "-"
        )
        lines.append(
            f"{row['variant']:<10} {row['mean']:>12.6f} {row['sd']:>12.6f} "
            f"{row['median']:>12.6f} {row['delta_pct']:>+10.2f} {signs:>8}"
        )
    return "\n".join(lines) + "\n"
