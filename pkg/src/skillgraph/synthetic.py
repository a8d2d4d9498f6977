"""Synthetic skill libraries, tasks, and scripted providers with known ground truth.

Capability tags are the ground truth: leaves carry random tags, and every
internal unit summarizes its children lossily (each child tag survives with
``keep_prob``), so drilling down can recover detail a coarse summary lost.
Task utility is normalized tag coverage — monotone submodular by
construction — which keeps every oracle exactly computable without any
language model.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .adaptation import (
    ProviderBundle,
    RoutingAction,
    RuleVerifier,
    SkillContext,
    VerifierRegistry,
)
from .embeddings import EmbeddingProvider, HashingEmbedder, tokenize
from .evolution import MechanicalWriter, Task, classify_failure
from .graph import (
    GraphConfig,
    LAYER_MAX,
    LAYER_NAMES,
    SkillGraph,
    SkillUnit,
    build_edges,
)

SCRIPTED_MODES = ("oracle", "bernoulli", "parent-only", "rewrite-all")


@dataclass(frozen=True)
class SimConfig:
    """Knobs for synthetic libraries, tasks, and traversal-scaling trees."""

    seed: int = 0
    layer_sizes: tuple[int, int, int, int] = (2, 4, 8, 16)
    branching: int = 2
    decompose_prob: float = 0.25
    trials: int = 1000
    tree_sizes: tuple[int, ...] = (63, 1023, 65535)
    tag_vocab: int = 12
    mismatch_tags: int = 4
    mismatch_rate: float = 0.35
    keep_prob: float = 0.7
    embed_dim: int = 64
    task_count: int = 5
    substitution_rate: float = 0.5
    impossible_rate: float = 0.25

    def __post_init__(self) -> None:
        if len(self.layer_sizes) != 4 or any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer_sizes must be four positive counts, got {self.layer_sizes}")
        if self.branching < 1:
            raise ValueError(f"branching must be positive, got {self.branching}")
        for name in ("decompose_prob", "mismatch_rate", "keep_prob",
                     "substitution_rate", "impossible_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.trials < 1 or self.task_count < 1 or self.tag_vocab < 2:
            raise ValueError("trials, task_count, and tag_vocab must be positive")


# ---------------------------------------------------------------------------
# library and task generation
# ---------------------------------------------------------------------------

def _unit_content(uid: str, layer: int, tags: Iterable[str]) -> str:
    parts = [LAYER_NAMES[layer].lower(), "skill", uid, "handles", *sorted(tags)]
    return " ".join(parts)


def gen_synthetic_library(cfg: SimConfig,
                          embedder: EmbeddingProvider | None = None) -> SkillGraph:
    """Deterministic four-layer library; same seed, same graph.

    Children are striped proportionally across parents, so layer sizes
    ``(1, b, b^2, b^3)`` yield a full b-ary tree. Tags flow bottom-up as
    lossy summaries; a share of leaves additionally carries a mismatch tag
    that task substitutions can turn into a required capability.
    """
    rng = random.Random(cfg.seed)
    embedder = embedder if embedder is not None else HashingEmbedder(cfg.embed_dim)
    vocab = [f"cap{j:02d}" for j in range(cfg.tag_vocab)]
    mismatch_pool = [f"mis{j:02d}" for j in range(cfg.mismatch_tags)]
    sizes = cfg.layer_sizes
    ids = {layer: [f"s{layer}-{i:03d}" for i in range(sizes[layer - 1])]
           for layer in range(1, 5)}

    children: dict[str, list[str]] = {uid: [] for layer in ids for uid in ids[layer]}
    for layer in range(1, 4):
        n_parent, n_child = sizes[layer - 1], sizes[layer]
        for j in range(n_child):
            parent = ids[layer][j * n_parent // n_child]
            children[parent].append(ids[layer + 1][j])

    tags: dict[str, set[str]] = {}
    for uid in ids[4]:
        leaf_tags = set(rng.sample(vocab, rng.randint(1, min(3, len(vocab)))))
        if mismatch_pool and rng.random() < cfg.mismatch_rate:
            leaf_tags.add(rng.choice(mismatch_pool))
        tags[uid] = leaf_tags
    for layer in (3, 2, 1):
        for uid in ids[layer]:
            summary: set[str] = set()
            for child in children[uid]:
                summary |= {t for t in sorted(tags[child]) if rng.random() < cfg.keep_prob}
            tags[uid] = summary

    units = []
    for layer in range(1, 5):
        for uid in ids[layer]:
            units.append(SkillUnit(id=uid, layer=layer,
                                   content=_unit_content(uid, layer, tags[uid]),
                                   children=tuple(children[uid]),
                                   tags=frozenset(tags[uid])))
    return build_edges(units, embedder, GraphConfig())


def gen_full_tree(branching: int, depth: int) -> SkillGraph:
    """Full b-ary harness tree for traversal-scaling runs.

    Layers are clamped at the primitive layer so deep trees remain
    traversable; these trees exist for walk statistics, not for validation.
    Breadth-first ids make ``min(graph.units)`` the root.
    """
    total = sum(branching ** level for level in range(depth + 1))
    width = len(str(total))
    ids = [f"n{i:0{width}d}" for i in range(total)]
    units: dict[str, SkillUnit] = {}
    hier: set[tuple[str, str]] = set()
    weights: dict[tuple[str, str], float] = {}
    level = 0
    level_start = 0
    for i, uid in enumerate(ids):
        if i >= level_start + branching ** level:
            level_start += branching ** level
            level += 1
        first_child = i * branching + 1
        kids = tuple(ids[c] for c in range(first_child, min(first_child + branching, total)))
        units[uid] = SkillUnit(id=uid, layer=min(level + 1, LAYER_MAX),
                               content=f"node {uid}", children=kids)
        for kid in kids:
            hier.add((uid, kid))
            weights[(uid, kid)] = 1.0
    return SkillGraph(units=units, hierarchical_edges=frozenset(hier),
                      lateral_edges=frozenset(), edge_weights=weights)


def gen_random_graph(seed: int, max_nodes: int = 50) -> SkillGraph:
    """Small random valid graph for walk checks: mixed layers, random embeddings.

    Includes parentless and isolated units, so dangling-row handling gets
    exercised; anti-aligned embeddings occasionally produce zero-weight edges.
    """
    rng = random.Random(seed)
    n = rng.randint(2, max_nodes)
    layers = [rng.randint(1, 4) for _ in range(n)]
    dim = 8

    def random_embedding() -> tuple[float, ...]:
        vec = [rng.gauss(0.0, 1.0) for _ in range(dim)]
        norm = sum(x * x for x in vec) ** 0.5 or 1.0
        return tuple(x / norm for x in vec)

    by_layer: dict[int, list[str]] = {layer: [] for layer in range(1, 5)}
    ids = [f"u{i:03d}" for i in range(n)]
    for uid, layer in zip(ids, layers):
        by_layer[layer].append(uid)
    children: dict[str, tuple[str, ...]] = {}
    for uid, layer in zip(ids, layers):
        pool = by_layer.get(layer + 1, [])
        if layer < 4 and pool and rng.random() < 0.8:
            count = rng.randint(1, min(2, len(pool)))
            children[uid] = tuple(sorted(rng.sample(pool, count)))
        else:
            children[uid] = ()
    units = [SkillUnit(id=uid, layer=layer, content=f"unit {uid}",
                       children=children[uid], embedding=random_embedding())
             for uid, layer in zip(ids, layers)]
    return build_edges(units, None, GraphConfig())


def gen_tasks(cfg: SimConfig, graph: SkillGraph) -> list[Task]:
    """Seeded task split over a generated library.

    Some tasks carry a substitution pair (a mismatch tag rewrites into a
    required capability) and some require a capability no unit carries, so
    they stay failed and keep producing gap reports.
    """
    rng = random.Random(cfg.seed + 0x5EED)
    present = sorted({tag for unit in graph.units.values()
                      for tag in unit.tags if tag.startswith("cap")})
    if len(present) < 2:
        raise ValueError("library carries too few capability tags to build tasks")
    mis_units = sorted(uid for uid, unit in graph.units.items()
                       if any(t.startswith("mis") for t in unit.tags))
    tasks: list[Task] = []
    for i in range(cfg.task_count):
        required = set(rng.sample(present, rng.randint(2, min(3, len(present)))))
        substitutions: tuple[tuple[str, str], ...] = ()
        if mis_units and rng.random() < cfg.substitution_rate:
            unit = graph.units[rng.choice(mis_units)]
            source = sorted(t for t in unit.tags if t.startswith("mis"))[0]
            candidates = [t for t in present if t not in unit.tags]
            if candidates:
                target = rng.choice(candidates)
                required.add(target)
                substitutions = ((source, target),)
        if rng.random() < cfg.impossible_rate:
            required.add(f"none{i:02d}")
        ordered = sorted(required)
        tasks.append(Task(query="task needs " + " ".join(ordered),
                          ground_truth=" ".join(ordered),
                          required_tags=frozenset(required),
                          substitutions=substitutions))
    return tasks


# ---------------------------------------------------------------------------
# exactly computable utilities
# ---------------------------------------------------------------------------

def apply_substitutions(tags: Iterable[str],
                        substitutions: Sequence[tuple[str, str]]) -> frozenset[str]:
    mapping = dict(substitutions)
    return frozenset(mapping.get(tag, tag) for tag in tags)


def coverage_of_tag_sets(required: frozenset[str],
                         tag_sets: Iterable[Iterable[str]]) -> float:
    """Normalized set coverage: monotone and submodular by construction."""
    if not required:
        return 1.0
    covered: set[str] = set()
    for tags in tag_sets:
        covered |= set(tags)
    return len(covered & required) / len(required)


def coverage_utility(task: Task, retained_ids: Iterable[str],
                     graph: SkillGraph) -> float:
    """Fraction of the task's required tags covered by the retained units."""
    return coverage_of_tag_sets(
        task.required_tags, (graph.unit(uid).tags for uid in retained_ids))


def rewrite_gain(task: Task, unit: SkillUnit) -> float:
    """Exact singleton coverage gain from applying the task's substitutions."""
    if not task.required_tags:
        return 0.0
    before = len(unit.tags & task.required_tags)
    after = len(apply_substitutions(unit.tags, task.substitutions) & task.required_tags)
    return max(0.0, (after - before) / len(task.required_tags))


def context_coverage(task: Task, context: SkillContext,
                     rewritten_ids: frozenset[str], graph: SkillGraph) -> float:
    """Coverage achieved by a composed context, counting rewritten units as adapted."""
    tag_sets = []
    for entry in context.entries:
        unit = graph.units.get(entry.unit_id)
        if unit is None:
            continue
        tags = unit.tags
        if entry.unit_id in rewritten_ids:
            tags = apply_substitutions(tags, task.substitutions)
        tag_sets.append(tags)
    return coverage_of_tag_sets(task.required_tags, tag_sets)


# ---------------------------------------------------------------------------
# scripted providers
# ---------------------------------------------------------------------------

class TagAgent:
    """Mock agent: echoes the composed context, so the metric sees its tokens."""

    def complete(self, query: str, context: SkillContext) -> str:
        return context.render()


class TagMetric:
    """Mock metric: fraction of reference tokens present in the output."""

    def score(self, task: Task, output: str) -> float:
        reference = set(tokenize(task.ground_truth))
        if not reference:
            return 1.0
        return len(reference & set(tokenize(output))) / len(reference)

    def classify(self, task: Task, output: str, trace) -> str:
        return classify_failure(task, output, trace)


class OracleVerifier:
    """Utility-optimal local routing from ground-truth tags.

    Skip when the whole subtree is useless; take the unit (rewriting when
    substitutions add coverage) once it alone realizes everything its
    subtree can; decompose otherwise. Leaves always decide locally.
    """

    def __init__(self, graph: SkillGraph, task: Task) -> None:
        self.graph = graph
        self.task = task
        self._achievable: dict[str, frozenset[str]] = {}

    def _reach(self, uid: str) -> frozenset[str]:
        cached = self._achievable.get(uid)
        if cached is not None:
            return cached
        unit = self.graph.units[uid]
        reach = apply_substitutions(unit.tags, self.task.substitutions) \
            & self.task.required_tags
        for child in unit.children:
            if child in self.graph.units:
                reach |= self._reach(child)
        self._achievable[uid] = frozenset(reach)
        return self._achievable[uid]

    def decide(self, query: str, unit: SkillUnit, rel_score: float) -> RoutingAction:
        achievable = self._reach(unit.id)
        if not achievable:
            return RoutingAction.SKIP
        own = apply_substitutions(unit.tags, self.task.substitutions) \
            & self.task.required_tags
        if own == achievable:
            if rewrite_gain(self.task, unit) > 0.0:
                return RoutingAction.REWRITE
            return RoutingAction.ACCEPT
        return RoutingAction.DECOMPOSE


class BernoulliVerifier:
    """Decompose with probability rho; otherwise a uniform terminal action."""

    _TERMINAL = (RoutingAction.ACCEPT, RoutingAction.REWRITE, RoutingAction.SKIP)

    def __init__(self, rho: float, rng: random.Random) -> None:
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {rho}")
        self.rho = rho
        self.rng = rng

    def decide(self, query: str, unit: SkillUnit, rel_score: float) -> RoutingAction:
        if self.rng.random() < self.rho:
            return RoutingAction.DECOMPOSE
        return self.rng.choice(self._TERMINAL)


class ParentOnlyVerifier:
    """Ablation: rewrite every partial node itself, never drill down."""

    def decide(self, query: str, unit: SkillUnit, rel_score: float) -> RoutingAction:
        return RoutingAction.REWRITE


class RewriteAllVerifier:
    """Ablation: expand each partial root, then rewrite every child unseen."""

    def __init__(self, root_ids: Iterable[str]) -> None:
        self.root_ids = frozenset(root_ids)

    def decide(self, query: str, unit: SkillUnit, rel_score: float) -> RoutingAction:
        if unit.id in self.root_ids:
            return RoutingAction.DECOMPOSE
        return RoutingAction.REWRITE


def make_scripted_verifier(mode: str, *, graph: SkillGraph | None = None,
                           task: Task | None = None, rho: float = 0.0,
                           rng: random.Random | None = None,
                           root_ids: Iterable[str] = ()):
    """Build one of the scripted verifier modes; unknown modes are an error."""
    if mode == "oracle":
        if graph is None or task is None:
            raise ValueError("oracle mode needs a graph and a task")
        return OracleVerifier(graph, task)
    if mode == "bernoulli":
        return BernoulliVerifier(rho, rng if rng is not None else random.Random(0))
    if mode == "parent-only":
        return ParentOnlyVerifier()
    if mode == "rewrite-all":
        return RewriteAllVerifier(root_ids)
    raise ValueError(f"unknown scripted verifier mode {mode!r}; "
                     f"expected one of {SCRIPTED_MODES}")


def mock_providers(embedder: EmbeddingProvider | None = None,
                   registry: VerifierRegistry | None = None) -> ProviderBundle:
    """Fully deterministic in-process provider set for synthetic runs."""
    embedder = embedder if embedder is not None else HashingEmbedder()
    registry = registry if registry is not None else VerifierRegistry()
    return ProviderBundle(
        embedder=embedder,
        verifier=RuleVerifier(registry),
        writer=MechanicalWriter(embedder=embedder),
        agent=TagAgent(),
        metric=TagMetric(),
        writer_factory=lambda task: MechanicalWriter(
            substitutions=getattr(task, "substitutions", ()), embedder=embedder))
