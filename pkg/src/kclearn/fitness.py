"""Loss evaluation backends and function-evaluation accounting.

Two interchangeable backends score a candidate genome with ``loss`` in
[0, 1], lower is better:

* ``edge-recovery`` — normalized Hamming distance to a known reference
  genome (the synthetic ground truth).
* ``prerequisite-consistency`` — the reference genome is first derived from
  learner response data by thresholding a per-pair consistency statistic,
  then the candidate is scored against it the same way.

Evaluation is pure given an immutable backend, so a generation's offspring
may be evaluated in parallel; the counter is bumped once per batch to keep
accounting exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from kclearn.errors import (
    ConfigurationError,
    DimensionError,
    InvalidPairError,
    ValidationError,
)
from kclearn.graph import EdgeGenome, Individual, all_pairs, shd

RECOVERY = "edge-recovery"
CONSISTENCY = "prerequisite-consistency"

DEFAULT_TAU = 0.9
DEFAULT_MIN_SUPPORT = 5


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """L learners x n KCs binary mastery matrix."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries)
        if entries.ndim != 2:
            raise DimensionError(f"response matrix must be 2-D, got shape {entries.shape}")
        if entries.shape[0] < 1 or entries.shape[1] < 2:
            raise ValidationError(
                f"response matrix needs L >= 1 learners and n >= 2 KCs, got {entries.shape}"
            )
        if not np.all((entries == 0) | (entries == 1)):
            raise ValidationError("response entries must be 0 or 1")
        entries = entries.astype(np.uint8).copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def num_learners(self) -> int:
        return int(self.entries.shape[0])

    @property
    def n(self) -> int:
        return int(self.entries.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ResponseMatrix):
            return NotImplemented
        return bool(np.array_equal(self.entries, other.entries))

    def __hash__(self) -> int:
        return hash(self.entries.tobytes())


@dataclass(frozen=True)
class FitnessBackend:
    """A scoring target: candidates are scored by normalized distance to it."""

    kind: str
    target: EdgeGenome

    def __post_init__(self) -> None:
        if self.kind not in (RECOVERY, CONSISTENCY):
            raise ConfigurationError(f"unknown fitness backend kind {self.kind!r}")


@dataclass
class EvaluationCounter:
    """Cumulative function-evaluation count against a budget."""

    max_fe: int
    fe: int = 0

    def add(self, k: int = 1) -> None:
        if k < 0:
            raise ValidationError("evaluation count may only increase")
        self.fe += k


def recovery_backend(truth: EdgeGenome) -> FitnessBackend:
    return FitnessBackend(kind=RECOVERY, target=truth)


def edge_consistency(responses: ResponseMatrix, a: int, b: int) -> float:
    """Fraction of learners mastering KC ``b`` that also mastered KC ``a``.

    Returns 1.0 when nobody masters ``b`` (no evidence against the pair).
    """
    if not (0 <= a < b < responses.n):
        raise InvalidPairError(f"pair ({a}, {b}) invalid for n={responses.n}")
    col_b = responses.entries[:, b]
    support = int(col_b.sum())
    violations = int(np.count_nonzero(col_b & (responses.entries[:, a] == 0)))
    return 1.0 - violations / max(support, 1)


def derive_target(
    responses: ResponseMatrix,
    tau: float = DEFAULT_TAU,
    min_support: int = DEFAULT_MIN_SUPPORT,
) -> EdgeGenome:
    """Threshold the consistency statistic into a reference genome.

    A gene is set iff its pair's consistency reaches ``tau`` and at least
    ``min_support`` learners master the downstream KC.  On noiseless data the
    result includes transitive-closure edges: the statistic cannot tell a
    direct prerequisite from an ancestral one.
    """
    if not 0.0 < tau <= 1.0:
        raise ConfigurationError(f"tau must lie in (0, 1], got {tau}")
    if min_support < 0:
        raise ConfigurationError(f"min_support must be >= 0, got {min_support}")
    n = responses.n
    support = responses.entries.sum(axis=0)
    bits = np.zeros(len(all_pairs(n)), dtype=np.uint8)
    for j, (a, b) in enumerate(all_pairs(n)):
        if support[b] >= min_support and edge_consistency(responses, a, b) >= tau:
            bits[j] = 1
    return EdgeGenome(bits, n)


def consistency_backend(
    responses: ResponseMatrix,
    tau: float = DEFAULT_TAU,
    min_support: int = DEFAULT_MIN_SUPPORT,
) -> FitnessBackend:
    return FitnessBackend(kind=CONSISTENCY, target=derive_target(responses, tau, min_support))


def evaluate(
    genome: EdgeGenome,
    backend: FitnessBackend,
    counter: EvaluationCounter | None = None,
) -> float:
    """Loss of a genome under a backend: SHD to the target over genome length."""
    loss = shd(genome, backend.target) / len(genome)
    if counter is not None:
        counter.add(1)
    return loss


def evaluate_batch(
    members: Sequence[Individual] | Iterable[Individual],
    backend: FitnessBackend,
    counter: EvaluationCounter,
) -> list[Individual]:
    """Evaluate every member, then bump the counter once by the batch size."""
    out = [replace(m, loss=evaluate(m.genome, backend)) for m in members]
    counter.add(len(out))
    return out
