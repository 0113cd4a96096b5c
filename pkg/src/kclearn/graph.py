"""Bit-vector encoding of candidate prerequisite graphs.

A candidate graph over ``n`` knowledge components (KCs) is a subset of the
``D = n*(n-1)/2`` ordered pairs ``(a, b)`` with ``a < b`` under a fixed KC
order, which makes every candidate acyclic by construction.  This module owns
the pair <-> gene-index bijection, decoding of genomes to explicit graphs,
and structural comparison between genomes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from graphlib import CycleError, TopologicalSorter
from typing import Iterable

import numpy as np

from kclearn.errors import (
    DimensionError,
    InvalidPairError,
    StateError,
    ValidationError,
)


def gene_count(n: int) -> int:
    """Genome length for ``n`` KCs: one gene per ordered pair (a, b), a < b."""
    if n < 2:
        raise ValidationError(f"need at least 2 KCs, got n={n}")
    return n * (n - 1) // 2


def pair_index(a: int, b: int, n: int) -> int:
    """Gene index of the ordered pair (a, b), row-major over the upper triangle.

    The layout is (0,1), (0,2), ..., (0,n-1), (1,2), ..., (n-2,n-1).
    """
    if not (0 <= a < b < n):
        raise InvalidPairError(f"pair ({a}, {b}) invalid for n={n}: need 0 <= a < b < n")
    return a * n - a * (a + 1) // 2 + (b - a - 1)


@lru_cache(maxsize=None)
def all_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """All ordered pairs (a, b) with a < b < n, in gene-index order."""
    gene_count(n)
    return tuple((a, b) for a in range(n) for b in range(a + 1, n))


def index_pair(j: int, n: int) -> tuple[int, int]:
    """Inverse of :func:`pair_index`."""
    pairs = all_pairs(n)
    if not 0 <= j < len(pairs):
        raise InvalidPairError(f"gene index {j} out of range for n={n} (D={len(pairs)})")
    return pairs[j]


@dataclass(frozen=True)
class KcGraph:
    """Directed acyclic KC graph; edge (a, b) reads "a is a prerequisite of b".

    Edges must respect the fixed node order (a < b), so any KcGraph is acyclic
    by construction.
    """

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        gene_count(self.n)
        edges = frozenset((int(a), int(b)) for a, b in self.edges)
        for a, b in edges:
            if not (0 <= a < b < self.n):
                raise ValidationError(
                    f"edge ({a}, {b}) violates the forward node order for n={self.n}"
                )
        object.__setattr__(self, "edges", edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def parents_of(self, k: int) -> tuple[int, ...]:
        """Direct prerequisites of KC ``k``, ascending."""
        return tuple(sorted(a for a, b in self.edges if b == k))

    def to_json_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in sorted(self.edges)]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "KcGraph":
        try:
            n = int(data["n"])
            edges = [(int(a), int(b)) for a, b in data["edges"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed graph object: {exc}") from exc
        if len(edges) != len(set(edges)):
            raise ValidationError("graph object contains duplicate edges")
        return cls(n=n, edges=frozenset(edges))


@dataclass(frozen=True, eq=False)
class EdgeGenome:
    """Fixed-length bit vector over the ordered KC pairs of an n-node graph."""

    bits: np.ndarray
    n: int

    def __post_init__(self) -> None:
        expected = gene_count(self.n)
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or bits.shape[0] != expected:
            raise DimensionError(
                f"genome for n={self.n} must have length {expected}, got shape {bits.shape}"
            )
        if not np.all((bits == 0) | (bits == 1)):
            raise ValidationError("genome bits must be 0 or 1")
        bits = bits.astype(np.uint8).copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EdgeGenome):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((self.n, self.bits.tobytes()))

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def to_bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_bitstring(cls, bits: str, n: int) -> "EdgeGenome":
        if set(bits) - {"0", "1"}:
            raise ValidationError("bit string may contain only '0' and '1'")
        return cls(np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0"), n)

    def to_json_dict(self) -> dict:
        return {"n": self.n, "bits": self.to_bitstring()}

    @classmethod
    def from_json_dict(cls, data: dict) -> "EdgeGenome":
        try:
            return cls.from_bitstring(str(data["bits"]), int(data["n"]))
        except KeyError as exc:
            raise ValidationError(f"malformed genome object: missing {exc}") from exc


def decode(genome: EdgeGenome) -> KcGraph:
    """Explicit graph of a genome: edge (a, b) present iff its gene is set."""
    pairs = all_pairs(genome.n)
    edges = frozenset(pairs[j] for j in np.flatnonzero(genome.bits))
    return KcGraph(n=genome.n, edges=edges)


def encode(graph: KcGraph) -> EdgeGenome:
    """Inverse of :func:`decode`."""
    bits = np.zeros(gene_count(graph.n), dtype=np.uint8)
    for a, b in graph.edges:
        bits[pair_index(a, b, graph.n)] = 1
    return EdgeGenome(bits, graph.n)


def shd(g1: EdgeGenome, g2: EdgeGenome) -> int:
    """Structural Hamming distance: number of gene positions that disagree."""
    if g1.n != g2.n or len(g1) != len(g2):
        raise DimensionError(f"genome dimensions disagree: n={g1.n} vs n={g2.n}")
    return int(np.count_nonzero(g1.bits != g2.bits))


def is_acyclic(edges: Iterable[tuple[int, int]], n: int) -> bool:
    """True iff the arbitrary directed edge list has no cycle.

    Decoded genomes are acyclic by construction; this check is for ingested
    external graphs that may not respect the forward node order.
    """
    sorter: TopologicalSorter = TopologicalSorter()
    for a, b in edges:
        if not (0 <= a < n and 0 <= b < n):
            raise ValidationError(f"edge ({a}, {b}) references a node outside 0..{n - 1}")
        sorter.add(b, a)
    try:
        sorter.prepare()
    except CycleError:
        return False
    return True


@dataclass(frozen=True)
class Individual:
    """A candidate genome plus its cached loss.

    ``parent_genome`` is retained for one generation so the feedback step can
    compute which edges the individual newly gained.
    """

    genome: EdgeGenome
    loss: float | None = None
    parent_genome: EdgeGenome | None = None

    def __post_init__(self) -> None:
        if self.loss is not None and not 0.0 <= self.loss <= 1.0:
            raise ValidationError(f"loss must lie in [0, 1], got {self.loss}")
        if self.parent_genome is not None and len(self.parent_genome) != len(self.genome):
            raise DimensionError("parent genome length differs from genome length")

    @property
    def evaluated(self) -> bool:
        return self.loss is not None


@dataclass(frozen=True)
class Population:
    """Ordered, fixed-size collection of individuals at one generation."""

    members: tuple[Individual, ...]
    generation: int = 0

    def __post_init__(self) -> None:
        members = tuple(self.members)
        if not members:
            raise ValidationError("population may not be empty")
        n = members[0].genome.n
        if any(m.genome.n != n for m in members):
            raise DimensionError("population members disagree on KC count")
        object.__setattr__(self, "members", members)

    @property
    def size(self) -> int:
        return len(self.members)

    def losses(self) -> np.ndarray:
        if any(not m.evaluated for m in self.members):
            raise StateError("population contains unevaluated members")
        return np.array([m.loss for m in self.members], dtype=float)

    def best(self) -> Individual:
        """Lowest-loss member; earliest index wins ties."""
        losses = self.losses()
        return self.members[int(np.argmin(losses))]
