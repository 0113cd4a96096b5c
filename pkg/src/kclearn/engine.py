"""Main optimization loop: DE variation, sub-population partition, feedback.

Each generation proceeds as follows:

1. binary differential evolution produces one trial offspring per parent;
2. offspring are evaluated and sorted by loss; the best ``round(AP * N)``
   form the superior sub-population, the rest are exploratory, split at
   their median loss into a stronger (PFO) and a weaker (NFO) half;
3. per-gene counters record which edges exploratory offspring newly gained
   relative to their parents: gains in PFO members accumulate as good, gains
   in NFO members as bad, combined into ``score = NF*good - PF*bad``;
4. every exploratory member is refined: genes with positive score are
   switched on with probability ``score/|EX|``, genes with negative score
   switched off with probability ``|score|/|EX|``; refined members are
   re-evaluated;
5. parents and refined offspring are merged and the best N survive
   (stable: a parent wins a loss tie against an offspring);
6. the three agents each propose their parameter's value for the next
   generation, clamped to configured bounds.

The loop runs until the per-generation evaluation budget is exhausted: a
generation charges N against ``max_fe``.  The reported total additionally
counts the initial population and refinement re-evaluations, so the exact
number of fitness calls is always visible.

All randomness flows through one seeded generator consumed only by this
orchestration code, so a run is bit-reproducible from its config.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from kclearn.agents import (
    AgentDecision,
    AgentObservation,
    AgentRole,
    Controller,
    ControllerConfig,
)
from kclearn.errors import ConfigurationError, DimensionError, StateError
from kclearn.fitness import (
    EvaluationCounter,
    FitnessBackend,
    evaluate,
    evaluate_batch,
)
from kclearn.graph import EdgeGenome, Individual, Population

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EngineConfig:
    """All loop inputs: population size, budget, and search parameters."""

    pop_size: int = 50
    max_fe: int = 10_000
    ap: float = 0.4
    pf: float = 0.6
    nf: float = 0.4
    od: str = "min"
    f_de: float = 0.5
    cr: float = 0.9
    p_init: float = 0.1
    seed: int = 0
    ap_min: float = 0.1
    ap_max: float = 0.9
    pf_min: float = 0.0
    pf_max: float = 1.5
    nf_min: float = 0.0
    nf_max: float = 1.5

    def __post_init__(self) -> None:
        if self.pop_size < 4:
            raise ConfigurationError(
                f"population size must be >= 4 (DE needs 3 distinct donors), got {self.pop_size}"
            )
        if self.max_fe < self.pop_size:
            raise ConfigurationError(
                f"max_fe must be >= pop_size, got {self.max_fe} < {self.pop_size}"
            )
        if self.od != "min":
            raise ConfigurationError(f"only od='min' is supported, got {self.od!r}")
        if not 0.0 < self.ap_min <= self.ap_max < 1.0:
            raise ConfigurationError(
                f"need 0 < ap_min <= ap_max < 1, got [{self.ap_min}, {self.ap_max}]"
            )
        if not self.ap_min <= self.ap <= self.ap_max:
            raise ConfigurationError(
                f"ap={self.ap} outside [{self.ap_min}, {self.ap_max}]"
            )
        for name, lo_name, hi_name in (("pf", "pf_min", "pf_max"), ("nf", "nf_min", "nf_max")):
            lo, hi = getattr(self, lo_name), getattr(self, hi_name)
            value = getattr(self, name)
            if not 0.0 <= lo <= hi:
                raise ConfigurationError(f"need 0 <= {lo_name} <= {hi_name}, got [{lo}, {hi}]")
            if not lo <= value <= hi:
                raise ConfigurationError(f"{name}={value} outside [{lo}, {hi}]")
        if not 0.0 < self.f_de <= 1.0:
            raise ConfigurationError(f"f_de must lie in (0, 1], got {self.f_de}")
        if not 0.0 <= self.cr <= 1.0:
            raise ConfigurationError(f"cr must lie in [0, 1], got {self.cr}")
        if not 0.0 <= self.p_init <= 1.0:
            raise ConfigurationError(f"p_init must lie in [0, 1], got {self.p_init}")

    def bounds(self, role: AgentRole) -> tuple[float, float]:
        return {
            AgentRole.GAME: (self.ap_min, self.ap_max),
            AgentRole.PFA: (self.pf_min, self.pf_max),
            AgentRole.NFA: (self.nf_min, self.nf_max),
        }[role]


class SubPop(str, Enum):
    SUP = "SUP"
    EX_PFO = "EX_PFO"
    EX_NFO = "EX_NFO"
    EL = "EL"


@dataclass(frozen=True)
class Partition:
    """Offspring sorted ascending by loss with their sub-population labels."""

    members: tuple[Individual, ...]
    labels: tuple[SubPop, ...]

    @property
    def ex_count(self) -> int:
        return sum(1 for lab in self.labels if lab in (SubPop.EX_PFO, SubPop.EX_NFO))

    @property
    def sup_count(self) -> int:
        return sum(1 for lab in self.labels if lab is SubPop.SUP)


@dataclass(frozen=True)
class FeedbackCounts:
    """Per-gene tallies of newly gained edges among exploratory offspring."""

    good: np.ndarray  # gains observed in PFO members
    bad: np.ndarray  # gains observed in NFO members
    score: np.ndarray  # nf*good - pf*bad


@dataclass(frozen=True)
class TraceRow:
    """One generation's snapshot for the convergence trace."""

    generation: int
    fe: int
    best_loss: float
    median_loss: float
    ap: float
    pf: float
    nf: float
    reevals: int = 0


@dataclass(frozen=True)
class RunResult:
    best_genome: EdgeGenome
    best_loss: float
    trace: tuple[TraceRow, ...]
    decisions: tuple[dict, ...]
    total_fe: int
    generations: int
    seed: int


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def initialize(
    config: EngineConfig,
    backend: FitnessBackend,
    rng: np.random.Generator,
    counter: EvaluationCounter,
) -> Population:
    """Random population: each gene set with probability ``p_init``; evaluated."""
    n = backend.target.n
    genome_len = len(backend.target)
    members = [
        Individual(EdgeGenome((rng.random(genome_len) < config.p_init).astype(np.uint8), n))
        for _ in range(config.pop_size)
    ]
    return Population(tuple(evaluate_batch(members, backend, counter)), generation=0)


def de_variation(
    pop: Population, config: EngineConfig, rng: np.random.Generator
) -> list[Individual]:
    """Binary DE trial per parent, unevaluated, with parent genome attached.

    Mutant = donor1 XOR (difference of donor2/donor3 transferred per gene with
    probability ``f_de``); binomial crossover against the parent with rate
    ``cr`` and one forced gene.  RNG consumption per parent: donor choice,
    transfer mask, forced index, crossover mask.
    """
    members = pop.members
    count = len(members)
    if count < 4:
        raise ConfigurationError(f"DE variation needs at least 4 individuals, got {count}")
    genome_len = len(members[0].genome)
    n = members[0].genome.n
    offspring: list[Individual] = []
    for i, parent in enumerate(members):
        candidates = np.array([j for j in range(count) if j != i])
        r1, r2, r3 = rng.choice(candidates, size=3, replace=False)
        base = members[r1].genome.bits
        diff = members[r2].genome.bits ^ members[r3].genome.bits
        transfer = rng.random(genome_len) < config.f_de
        mutant = base ^ (diff & transfer)
        forced = int(rng.integers(genome_len))
        cross = rng.random(genome_len) < config.cr
        cross[forced] = True
        trial = np.where(cross, mutant, parent.genome.bits).astype(np.uint8)
        offspring.append(
            Individual(EdgeGenome(trial, n), loss=None, parent_genome=parent.genome)
        )
    return offspring


def partition(members: Sequence[Individual], ap: float) -> Partition:
    """Sort ascending by loss and label: SUP first, then the EX halves.

    ``round(ap * N)`` members are superior; the exploratory remainder splits
    at its median loss into PFO (stronger half, ties to the lower index) and
    NFO.
    """
    if any(not m.evaluated for m in members):
        raise StateError("cannot partition unevaluated offspring")
    count = len(members)
    order = sorted(range(count), key=lambda i: members[i].loss)
    ordered = tuple(members[i] for i in order)
    n_sup = min(_round_half_up(ap * count), count)
    n_ex = count - n_sup
    n_pfo = (n_ex + 1) // 2
    labels = (
        (SubPop.SUP,) * n_sup + (SubPop.EX_PFO,) * n_pfo + (SubPop.EX_NFO,) * (n_ex - n_pfo)
    )
    return Partition(ordered, labels)


def accumulate_feedback(part: Partition, pf: float, nf: float) -> FeedbackCounts:
    """Tally newly gained edges per gene over the exploratory sub-population."""
    genome_len = len(part.members[0].genome)
    good = np.zeros(genome_len, dtype=np.int64)
    bad = np.zeros(genome_len, dtype=np.int64)
    for ind, label in zip(part.members, part.labels):
        if label not in (SubPop.EX_PFO, SubPop.EX_NFO):
            continue
        if ind.parent_genome is None:
            raise StateError("exploratory member lacks its parent genome")
        gained = ind.genome.bits > ind.parent_genome.bits
        if label is SubPop.EX_PFO:
            good += gained
        else:
            bad += gained
    return FeedbackCounts(good=good, bad=bad, score=nf * good - pf * bad)


def feedback_refine(
    part: Partition, counts: FeedbackCounts, rng: np.random.Generator
) -> tuple[Individual, ...]:
    """Push consensus edits into every exploratory member.

    Positive-score genes switch on with probability ``score/|EX|`` (clamped to
    1), negative-score genes switch off with ``|score|/|EX|``.  Superior
    members pass through untouched; modified members come back unevaluated.
    """
    ex_count = part.ex_count
    if ex_count == 0 or not np.any(counts.score != 0.0):
        return part.members
    p_add = np.minimum(1.0, np.where(counts.score > 0, counts.score, 0.0) / ex_count)
    p_del = np.minimum(1.0, np.where(counts.score < 0, -counts.score, 0.0) / ex_count)
    refined: list[Individual] = []
    for ind, label in zip(part.members, part.labels):
        if label not in (SubPop.EX_PFO, SubPop.EX_NFO):
            refined.append(ind)
            continue
        draws = rng.random(len(ind.genome))
        bits = ind.genome.bits.copy()
        bits[(p_add > 0) & (draws < p_add)] = 1
        bits[(p_del > 0) & (draws < p_del)] = 0
        if np.array_equal(bits, ind.genome.bits):
            refined.append(ind)
        else:
            refined.append(
                replace(ind, genome=EdgeGenome(bits, ind.genome.n), loss=None)
            )
    return tuple(refined)


def survivor_select(
    parents: Population, offspring: Sequence[Individual]
) -> tuple[Population, tuple[Individual, ...]]:
    """Keep the best N of the merged 2N pool; also return the eliminated N.

    The merge order (parents first) plus a stable sort implements the tie
    rule: a parent with equal loss beats an offspring.  Survivors drop their
    parent-genome scratch field.
    """
    if len(offspring) != parents.size:
        raise DimensionError(
            f"offspring count {len(offspring)} differs from population size {parents.size}"
        )
    merged = list(parents.members) + list(offspring)
    if any(not m.evaluated for m in merged):
        raise StateError("survivor selection requires fully evaluated populations")
    order = sorted(range(len(merged)), key=lambda i: merged[i].loss)
    keep = parents.size
    survivors = tuple(replace(merged[i], parent_genome=None) for i in order[:keep])
    eliminated = tuple(merged[i] for i in order[keep:])
    return Population(survivors, parents.generation + 1), eliminated


def _effective(decision: AgentDecision, current: float, bounds: tuple[float, float]) -> float:
    """Clamp a decision into bounds; non-finite proposals keep the current value."""
    value = decision.value
    if not math.isfinite(value):
        logger.warning("non-finite agent decision %r ignored; keeping %s", value, current)
        return current
    return min(max(value, bounds[0]), bounds[1])


def run(
    config: EngineConfig,
    backend: FitnessBackend,
    controller: Controller | None = None,
) -> RunResult:
    """Execute the full loop and return the best individual plus diagnostics."""
    if controller is None:
        controller = Controller(ControllerConfig(backend="off"))
    rng = np.random.default_rng(config.seed)
    counter = EvaluationCounter(max_fe=config.max_fe)
    pop = initialize(config, backend, rng, counter)

    ap, pf, nf = config.ap, config.pf, config.nf
    prev_best = float(pop.best().loss)
    history: dict[AgentRole, list[tuple[int, float, float]]] = {
        AgentRole.GAME: [(0, prev_best, ap)],
        AgentRole.PFA: [(0, prev_best, pf)],
        AgentRole.NFA: [(0, prev_best, nf)],
    }
    trace: list[TraceRow] = [
        TraceRow(0, counter.fe, prev_best, float(np.median(pop.losses())), ap, pf, nf, 0)
    ]
    decisions: list[dict] = []

    generation = 0
    while generation * config.pop_size < config.max_fe:
        generation += 1
        offspring = evaluate_batch(de_variation(pop, config, rng), backend, counter)
        part = partition(offspring, ap)
        counts = accumulate_feedback(part, pf, nf)
        refined = feedback_refine(part, counts, rng)
        reevals = sum(1 for ind in refined if not ind.evaluated)
        refined = [
            ind if ind.evaluated else replace(ind, loss=evaluate(ind.genome, backend))
            for ind in refined
        ]
        counter.add(reevals)
        pop, _ = survivor_select(pop, refined)

        best_loss = float(pop.best().loss)
        median_loss = float(np.median(pop.losses()))
        trace.append(
            TraceRow(generation, counter.fe, best_loss, median_loss, ap, pf, nf, reevals)
        )

        # End-of-generation decisions take effect next generation.
        params = {AgentRole.GAME: ap, AgentRole.PFA: pf, AgentRole.NFA: nf}
        k = controller.config.history_k
        for role in (AgentRole.GAME, AgentRole.PFA, AgentRole.NFA):
            obs = AgentObservation(
                agent=role,
                generation=generation,
                loss_current=best_loss,
                loss_previous=prev_best,
                delta_loss=prev_best - best_loss,
                param_current=params[role],
                param_bounds=config.bounds(role),
                history=tuple(history[role][-k:]) if k else (),
            )
            try:
                decision = controller.decide(obs)
            except Exception as exc:  # noqa: BLE001 - controller must not kill the run
                logger.warning("%s controller failed (%s); keeping current value", role.value, exc)
                decision = AgentDecision(params[role], f"controller error: {exc}", "fallback")
            value = _effective(decision, params[role], config.bounds(role))
            decisions.append(
                {
                    "generation": generation,
                    "agent": role.value,
                    "value": value,
                    "reasoning": decision.reasoning,
                    "source": decision.source,
                    "observation": obs.to_dict(),
                }
            )
            history[role].append((generation, best_loss, params[role]))
            params[role] = value
        ap, pf, nf = params[AgentRole.GAME], params[AgentRole.PFA], params[AgentRole.NFA]
        prev_best = best_loss

    best = pop.best()
    return RunResult(
        best_genome=best.genome,
        best_loss=float(best.loss),
        trace=tuple(trace),
        decisions=tuple(decisions),
        total_fe=counter.fe,
        generations=generation,
        seed=config.seed,
    )
