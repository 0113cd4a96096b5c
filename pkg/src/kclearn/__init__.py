"""Learning prerequisite-graph structure over knowledge components.

Couples a binary differential-evolution search over candidate graphs with a
per-generation bidirectional feedback mechanism (spread edges seen in strong
exploratory offspring, prune edges seen in weak ones) and a three-agent
controller, rule-based or LLM-backed, that retunes the search parameters
between generations.
"""

from kclearn.agents import (
    AgentDecision,
    AgentObservation,
    AgentRole,
    Controller,
    ControllerConfig,
    parse_decision,
    rule_decide,
)
from kclearn.bench import BenchmarkPlan, FitnessSpec, run_ablation, run_benchmark
from kclearn.data import (
    PRESETS,
    Dataset,
    SyntheticSpec,
    generate_dag,
    generate_dataset,
    load_dataset,
    save_dataset,
    simulate_responses,
)
from kclearn.engine import EngineConfig, RunResult, run
from kclearn.fitness import (
    EvaluationCounter,
    FitnessBackend,
    ResponseMatrix,
    consistency_backend,
    derive_target,
    edge_consistency,
    evaluate,
    recovery_backend,
)
from kclearn.graph import (
    EdgeGenome,
    Individual,
    KcGraph,
    Population,
    decode,
    encode,
    gene_count,
    is_acyclic,
    pair_index,
    shd,
)

__version__ = "0.1.0"

__all__ = [
    "AgentDecision",
    "AgentObservation",
    "AgentRole",
    "BenchmarkPlan",
    "Controller",
    "ControllerConfig",
    "Dataset",
    "EdgeGenome",
    "EngineConfig",
    "EvaluationCounter",
    "FitnessBackend",
    "FitnessSpec",
    "Individual",
    "KcGraph",
    "PRESETS",
    "Population",
    "ResponseMatrix",
    "RunResult",
    "SyntheticSpec",
    "consistency_backend",
    "decode",
    "derive_target",
    "edge_consistency",
    "encode",
    "evaluate",
    "gene_count",
    "generate_dag",
    "generate_dataset",
    "is_acyclic",
    "load_dataset",
    "pair_index",
    "parse_decision",
    "recovery_backend",
    "rule_decide",
    "run",
    "run_ablation",
    "run_benchmark",
    "save_dataset",
    "shd",
    "simulate_responses",
]
