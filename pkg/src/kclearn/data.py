"""Synthetic dataset generation and dataset bundle persistence.

A dataset bundle is a directory:

    meta.json       name, KC count, generator settings (when synthetic)
    truth.json      optional reference graph, {"n": ..., "edges": [[a, b], ...]}
    responses.csv   optional mastery matrix, header ``learner,kc_0,...,kc_{n-1}``

Responses are simulated with a noisy conjunctive-prerequisite model: a KC is
mastered with ``p_root`` when it has no prerequisites, ``p_learn`` when all
prerequisites are mastered, ``p_slip`` otherwise, and every cell is finally
flipped with probability ``noise``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from kclearn.errors import (
    ConfigurationError,
    DataFormatError,
    DimensionError,
    ValidationError,
)
from kclearn.fitness import ResponseMatrix
from kclearn.graph import EdgeGenome, KcGraph, decode, encode, gene_count
from kclearn.ioutil import write_json_atomic, write_text_atomic


@dataclass(frozen=True)
class SyntheticSpec:
    """Settings for one synthetic dataset (graph plus simulated learners)."""

    n: int
    density: float
    num_learners: int
    p_root: float = 0.6
    p_learn: float = 0.8
    p_slip: float = 0.1
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        gene_count(self.n)
        if self.num_learners < 1:
            raise ConfigurationError(f"need at least one learner, got {self.num_learners}")
        for name in ("density", "p_root", "p_learn", "p_slip", "noise"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """A named problem instance: reference graph and/or learner responses."""

    name: str
    n: int
    truth: EdgeGenome | None = None
    responses: ResponseMatrix | None = None
    spec: SyntheticSpec | None = None

    def __post_init__(self) -> None:
        if self.truth is None and self.responses is None:
            raise ValidationError("dataset needs a ground-truth graph or responses")
        if self.truth is not None and self.truth.n != self.n:
            raise DimensionError(f"truth has n={self.truth.n}, dataset has n={self.n}")
        if self.responses is not None and self.responses.n != self.n:
            raise DimensionError(
                f"responses have n={self.responses.n}, dataset has n={self.n}"
            )
        if self.spec is not None and self.spec.n != self.n:
            raise DimensionError(f"spec has n={self.spec.n}, dataset has n={self.n}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.name == other.name
            and self.n == other.n
            and self.truth == other.truth
            and self.responses == other.responses
            and self.spec == other.spec
        )


# Desk-scale presets on the same dimensional ladder as the target domain's
# public problem sizes (D = 210, 1225, 6670 for n = 21, 50, 116). The small
# preset keeps slip/noise low enough that the consistency statistic separates
# prerequisite pairs from incidental ones at the default tau.
PRESETS: dict[str, SyntheticSpec] = {
    "tiny": SyntheticSpec(n=4, density=0.3, num_learners=200),
    "small": SyntheticSpec(n=15, density=0.15, num_learners=600, p_slip=0.05, noise=0.02),
    "medium": SyntheticSpec(n=21, density=0.15, num_learners=1000, p_slip=0.05, noise=0.02),
    "large": SyntheticSpec(n=50, density=0.08, num_learners=2000, p_slip=0.05, noise=0.02),
    "xlarge": SyntheticSpec(n=116, density=0.04, num_learners=3000, p_slip=0.05, noise=0.02),
}


def preset_spec(name: str, seed: int = 0) -> SyntheticSpec:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], seed=seed)


def generate_dag(n: int, density: float, rng: np.random.Generator) -> KcGraph:
    """Random forward DAG: each ordered pair gets an edge with prob ``density``."""
    if not 0.0 <= density <= 1.0:
        raise ConfigurationError(f"density must lie in [0, 1], got {density}")
    bits = (rng.random(gene_count(n)) < density).astype(np.uint8)
    return decode(EdgeGenome(bits, n))


def simulate_responses(
    graph: KcGraph, spec: SyntheticSpec, rng: np.random.Generator
) -> ResponseMatrix:
    """Simulate mastery per learner, visiting KCs in index (topological) order."""
    if spec.n != graph.n:
        raise DimensionError(f"spec n={spec.n} does not match graph n={graph.n}")
    n = graph.n
    parents = [graph.parents_of(k) for k in range(n)]
    rows = np.zeros((spec.num_learners, n), dtype=np.uint8)
    for l in range(spec.num_learners):
        draws = rng.random(n)
        mastered = np.zeros(n, dtype=np.uint8)
        for k in range(n):
            if not parents[k]:
                p = spec.p_root
            elif all(mastered[a] for a in parents[k]):
                p = spec.p_learn
            else:
                p = spec.p_slip
            mastered[k] = draws[k] < p
        flips = rng.random(n) < spec.noise
        rows[l] = mastered ^ flips
    return ResponseMatrix(rows)


def generate_dataset(spec: SyntheticSpec, name: str | None = None) -> Dataset:
    """Ground-truth DAG plus simulated responses, fully determined by the spec."""
    rng = np.random.default_rng(spec.seed)
    graph = generate_dag(spec.n, spec.density, rng)
    responses = simulate_responses(graph, spec, rng)
    if name is None:
        name = f"synthetic-n{spec.n}-seed{spec.seed}"
    return Dataset(name=name, n=spec.n, truth=encode(graph), responses=responses, spec=spec)


def _responses_to_csv(responses: ResponseMatrix) -> str:
    header = "learner," + ",".join(f"kc_{k}" for k in range(responses.n))
    lines = [header]
    for i, row in enumerate(responses.entries):
        lines.append(str(i) + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def _responses_from_csv(text: str, path: Path) -> ResponseMatrix:
    lines = [line for line in text.splitlines() if line]
    if not lines:
        raise DataFormatError(f"{path}: empty responses file")
    header = lines[0].split(",")
    if header[0] != "learner" or any(
        col != f"kc_{k}" for k, col in enumerate(header[1:])
    ):
        raise DataFormatError(f"{path}: header must be learner,kc_0,...,kc_{{n-1}}")
    n = len(header) - 1
    rows = np.zeros((len(lines) - 1, n), dtype=np.uint8)
    for i, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != n + 1:
            raise DataFormatError(f"{path}: row {i} has {len(cells)} cells, expected {n + 1}")
        for k, cell in enumerate(cells[1:]):
            if cell not in ("0", "1"):
                raise DataFormatError(
                    f"{path}: row {i}, column kc_{k}: expected 0 or 1, got {cell!r}"
                )
            rows[i - 1, k] = cell == "1"
    return ResponseMatrix(rows)


def save_dataset(dataset: Dataset, path: Path) -> Path:
    """Write a dataset bundle directory; returns its path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": dataset.name,
        "n": dataset.n,
        "spec": asdict(dataset.spec) if dataset.spec is not None else None,
    }
    write_json_atomic(path / "meta.json", meta)
    if dataset.truth is not None:
        write_json_atomic(path / "truth.json", decode(dataset.truth).to_json_dict())
    if dataset.responses is not None:
        write_text_atomic(path / "responses.csv", _responses_to_csv(dataset.responses))
    return path


def load_dataset(path: Path) -> Dataset:
    """Load a bundle written by :func:`save_dataset`; round-trips losslessly."""
    path = Path(path)
    meta_path = path / "meta.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{meta_path}: invalid JSON: {exc}") from exc
    try:
        name = str(meta["name"])
        n = int(meta["n"])
        spec_dict = meta["spec"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{meta_path}: missing or malformed field: {exc}") from exc
    spec = None
    if spec_dict is not None:
        try:
            spec = SyntheticSpec(**spec_dict)
        except TypeError as exc:
            raise DataFormatError(f"{meta_path}: bad spec section: {exc}") from exc

    truth = None
    truth_path = path / "truth.json"
    if truth_path.exists():
        try:
            graph_dict = json.loads(truth_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{truth_path}: invalid JSON: {exc}") from exc
        graph = KcGraph.from_json_dict(graph_dict)
        if graph.n != n:
            raise ValidationError(f"{truth_path}: graph has n={graph.n}, meta says n={n}")
        truth = encode(graph)

    responses = None
    responses_path = path / "responses.csv"
    if responses_path.exists():
        responses = _responses_from_csv(
            responses_path.read_text(encoding="utf-8"), responses_path
        )
        if responses.n != n:
            raise ValidationError(
                f"{responses_path}: matrix has n={responses.n}, meta says n={n}"
            )

    return Dataset(name=name, n=n, truth=truth, responses=responses, spec=spec)
