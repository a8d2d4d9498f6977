"""Verifier-routed traversal over partially relevant skill subtrees.

Stage 1 (trigger, seeds, walk, tier partition) produces candidate tiers;
stage 2 walks each partial candidate's decomposition subtree depth-first,
routing every visited unit to Accept, Decompose, Rewrite, or Skip. The
composed context holds only fully compatible, accepted, and locally
rewritten units, so token cost tracks the number of visited and rewritten
units rather than subtree size.

Inference-time rewrites adapt content for the current query only and are
never written back into the registry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Protocol, Sequence

from .embeddings import EmbeddingProvider, tokenize, whitespace_token_count
from .graph import SkillGraph, SkillUnit
from .retrieval import (
    CompatibilityPartition,
    RwrConfig,
    ScoreVector,
    SeedDistribution,
    TierThresholds,
    degree_corrected_rwr,
    partition,
    seed_retrieve,
)


class RoutingAction(str, Enum):
    ACCEPT = "Accept"
    DECOMPOSE = "Decompose"
    REWRITE = "Rewrite"
    SKIP = "Skip"


ACTION_TOKENS = {action.value: action for action in RoutingAction}

TIER_HIGH = "high"
TIER_MID = "mid"
TIER_LOW = "low"
_TIERS = (TIER_HIGH, TIER_MID, TIER_LOW)


# ---------------------------------------------------------------------------
# provider contracts and degradations
# ---------------------------------------------------------------------------

class ProviderError(RuntimeError):
    """Base for provider degradations; traversal maps these to flagged Skips."""

    flag = "provider-error"


class TransportError(ProviderError):
    flag = "transport-error"


class MalformedReplyError(ProviderError):
    flag = "malformed-reply"


class Verifier(Protocol):
    def decide(self, query: str, unit: SkillUnit, rel_score: float) -> RoutingAction: ...


class Writer(Protocol):
    def rewrite(self, query: str, unit: SkillUnit) -> str: ...


class ConfidenceProvider(Protocol):
    def confidence(self, query: str) -> float: ...


class ZeroConfidence:
    """Default gate input: zero confidence, so retrieval always triggers."""

    def confidence(self, query: str) -> float:
        return 0.0


class SubstitutionWriter:
    """Deterministic in-process writer: applies ordered substitution pairs.

    An empty pair list makes the writer the identity on content.
    """

    def __init__(self, substitutions: Sequence[tuple[str, str]] = ()) -> None:
        self.substitutions = tuple((str(a), str(b)) for a, b in substitutions)

    def rewrite(self, query: str, unit: SkillUnit) -> str:
        text = unit.content
        for old, new in self.substitutions:
            text = text.replace(old, new)
        return text


# ---------------------------------------------------------------------------
# routing rules and the default verifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoutingRule:
    """One routing policy entry: a conjunctive match predicate plus an action.

    Every non-empty field must match: unit layer, tag subset, score tier,
    and query tokens. First matching rule wins.
    """

    action: RoutingAction
    layer: int | None = None
    tags: frozenset[str] = frozenset()
    tier: str | None = None
    query_tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not isinstance(self.action, RoutingAction):
            raise ValueError(f"rule action must be a RoutingAction, got {self.action!r}")
        if self.tier is not None and self.tier not in _TIERS:
            raise ValueError(f"rule tier must be one of {_TIERS}, got {self.tier!r}")

    def matches(self, unit: SkillUnit, tier: str, query_tokens: frozenset[str]) -> bool:
        if self.layer is not None and unit.layer != self.layer:
            return False
        if self.tags and not self.tags <= unit.tags:
            return False
        if self.tier is not None and tier != self.tier:
            return False
        if self.query_tags and not self.query_tags <= query_tokens:
            return False
        return True

    def describe(self) -> str:
        clauses = []
        if self.layer is not None:
            clauses.append(f"layer={self.layer}")
        if self.tags:
            clauses.append("tags>={" + ",".join(sorted(self.tags)) + "}")
        if self.tier is not None:
            clauses.append(f"tier={self.tier}")
        if self.query_tags:
            clauses.append("query>={" + ",".join(sorted(self.query_tags)) + "}")
        condition = " and ".join(clauses) if clauses else "always"
        return f"if {condition} then {self.action.value}"


@dataclass(frozen=True)
class VerifierRegistry:
    """Ordered routing rules plus the tier thresholds used as a fallback."""

    rules: tuple[RoutingRule, ...] = ()
    theta_full: float = 0.7
    theta_part: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_part < self.theta_full <= 1.0:
            raise ValueError(
                f"need 0 < theta_part < theta_full <= 1, got "
                f"({self.theta_full}, {self.theta_part})")

    def tier_of(self, rel_score: float) -> str:
        if rel_score >= self.theta_full:
            return TIER_HIGH
        if rel_score >= self.theta_part:
            return TIER_MID
        return TIER_LOW

    def render(self) -> str:
        """Rule list as numbered text, for prompts and inspection."""
        lines = [f"{i + 1}. {rule.describe()}" for i, rule in enumerate(self.rules)]
        lines.append(
            f"fallback: tier high (rel score >= {self.theta_full}) -> Accept; "
            f"tier mid (>= {self.theta_part}) -> Decompose, or Rewrite on a leaf; "
            "tier low -> Skip")
        return "\n".join(lines)


class RuleVerifier:
    """Deterministic verifier: first matching registry rule, tier fallback otherwise."""

    def __init__(self, registry: VerifierRegistry = VerifierRegistry()) -> None:
        self.registry = registry

    def decide(self, query: str, unit: SkillUnit, rel_score: float) -> RoutingAction:
        tier = self.registry.tier_of(rel_score)
        query_tokens = frozenset(tokenize(query))
        for rule in self.registry.rules:
            if rule.matches(unit, tier, query_tokens):
                return rule.action
        if tier == TIER_HIGH:
            return RoutingAction.ACCEPT
        if tier == TIER_MID:
            return RoutingAction.REWRITE if not unit.children else RoutingAction.DECOMPOSE
        return RoutingAction.SKIP


# ---------------------------------------------------------------------------
# configuration and provider bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdaptationConfig:
    trigger_threshold: float = math.inf  # skip retrieval only above this confidence
    max_visited: int = 64
    max_rewrites: int = 8
    seed_count: int = 5
    tiers: TierThresholds = TierThresholds()
    rwr: RwrConfig = RwrConfig()

    def __post_init__(self) -> None:
        for name in ("max_visited", "max_rewrites", "seed_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class CostConfig:
    lam: float = 0.1
    token_budget: int = 8192

    def __post_init__(self) -> None:
        if self.lam < 0.0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.token_budget < 1:
            raise ValueError(f"token_budget must be positive, got {self.token_budget}")


@dataclass
class ProviderBundle:
    """Everything a query pipeline needs, with deterministic in-process defaults.

    ``verifier_factory`` rebinds the verifier to a candidate routing registry
    during evolution; ``writer_factory`` lets callers supply per-task writers
    (e.g. task-specific substitution pairs).
    """

    embedder: EmbeddingProvider
    verifier: Verifier
    writer: Writer
    confidence: ConfidenceProvider = field(default_factory=ZeroConfidence)
    agent: object | None = None
    metric: object | None = None
    verifier_factory: Callable[[VerifierRegistry], Verifier] | None = None
    writer_factory: Callable[[object], Writer] | None = None

    def with_verifier(self, registry: VerifierRegistry) -> "ProviderBundle":
        factory = self.verifier_factory or RuleVerifier
        return replace(self, verifier=factory(registry))

    def writer_for(self, task: object) -> Writer:
        if self.writer_factory is not None:
            return self.writer_factory(task)
        return self.writer


# ---------------------------------------------------------------------------
# traces and contexts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceStep:
    unit_id: str
    action: RoutingAction
    rewritten: str | None = None
    flag: str | None = None


@dataclass(frozen=True)
class AdaptationTrace:
    """Per-query routing record; retained = accepted plus rewritten units."""

    steps: tuple[TraceStep, ...]
    retained: frozenset[str]
    rewritten: frozenset[str]
    budget_exhausted: bool
    token_estimate: int
    triggered: bool = True
    seed_ids: tuple[str, ...] = ()
    context_ids: tuple[str, ...] = ()

    @property
    def visited_count(self) -> int:
        return len(self.steps)

    @property
    def rewrite_count(self) -> int:
        return sum(1 for step in self.steps if step.action is RoutingAction.REWRITE)

    @classmethod
    def empty(cls, triggered: bool = True) -> "AdaptationTrace":
        return cls(steps=(), retained=frozenset(), rewritten=frozenset(),
                   budget_exhausted=False, token_estimate=0, triggered=triggered)


@dataclass(frozen=True)
class ContextEntry:
    unit_id: str
    content: str
    layer: int
    score: float


@dataclass(frozen=True)
class SkillContext:
    """Composed context, ordered coarse-to-fine, no duplicate unit ids."""

    entries: tuple[ContextEntry, ...]
    token_estimate: int

    @classmethod
    def empty(cls) -> "SkillContext":
        return cls(entries=(), token_estimate=0)

    def unit_ids(self) -> tuple[str, ...]:
        return tuple(entry.unit_id for entry in self.entries)

    def render(self) -> str:
        return "\n".join(entry.content for entry in self.entries)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def should_trigger(query: str, confidence_provider: ConfidenceProvider | None,
                   cfg: AdaptationConfig) -> bool:
    """False (skip retrieval entirely) only when confidence strictly exceeds the gate."""
    confidence = confidence_provider.confidence(query) if confidence_provider else 0.0
    return not confidence > cfg.trigger_threshold


def route(verifier: Verifier, query: str, unit: SkillUnit,
          score: float) -> RoutingAction:
    """One routing decision; a would-be Decompose on a leaf becomes Rewrite.

    ``score`` is the unit's walk score relative to the query's top score.
    Provider failures propagate and are downgraded by the traversal.
    """
    action = verifier.decide(query, unit, score)
    if action is RoutingAction.DECOMPOSE and not unit.children:
        return RoutingAction.REWRITE
    return action


def rewrite(writer: Writer, query: str, unit: SkillUnit) -> str:
    """Adapted content for this query only; never written back to the registry."""
    return writer.rewrite(query, unit)


def trace_token_estimate(graph: SkillGraph, steps: Iterable[TraceStep]) -> int:
    """Whitespace tokens of all visited content plus all rewritten output."""
    total = 0
    for step in steps:
        unit = graph.units.get(step.unit_id)
        if unit is not None:
            total += whitespace_token_count(unit.content)
        if step.rewritten is not None:
            total += whitespace_token_count(step.rewritten)
    return total


def traverse(graph: SkillGraph, roots: Sequence[str], verifier: Verifier,
             writer: Writer, query: str, cfg: AdaptationConfig,
             scores: ScoreVector | None = None) -> AdaptationTrace:
    """Depth-first verifier-driven walk over the partial candidates' subtrees.

    Children are pushed in reverse order so document order is preserved on
    pop. A unit already decided in this query is never re-visited (shared
    children decide once). Once either budget is exhausted the remaining
    frontier is recorded as flagged Skips instead of failing.
    """
    for root in roots:
        if root not in graph.units:
            raise KeyError(f"traversal root {root!r} is not in the graph")
    s_max = scores.max_score() if scores is not None else 0.0

    def rel(uid: str) -> float:
        if scores is None or s_max <= 0.0:
            return 0.0
        return scores.entries.get(uid, 0.0) / s_max

    steps: list[TraceStep] = []
    decided: set[str] = set()
    retained: set[str] = set()
    rewritten: set[str] = set()
    stack: list[str] = list(reversed(list(roots)))
    decisions = 0
    n_rw = 0
    budget_exhausted = False

    while stack:
        if decisions >= cfg.max_visited or n_rw >= cfg.max_rewrites:
            while stack:
                uid = stack.pop()
                if uid in decided:
                    continue
                decided.add(uid)
                budget_exhausted = True
                steps.append(TraceStep(uid, RoutingAction.SKIP, flag="budget-exhausted"))
            break
        uid = stack.pop()
        if uid in decided:
            continue
        decided.add(uid)
        unit = graph.unit(uid)
        decisions += 1
        try:
            action = route(verifier, query, unit, rel(uid))
        except ProviderError as exc:
            steps.append(TraceStep(uid, RoutingAction.SKIP, flag=exc.flag))
            continue
        if action is RoutingAction.ACCEPT:
            retained.add(uid)
            steps.append(TraceStep(uid, RoutingAction.ACCEPT))
        elif action is RoutingAction.SKIP:
            steps.append(TraceStep(uid, RoutingAction.SKIP))
        elif action is RoutingAction.DECOMPOSE:
            steps.append(TraceStep(uid, RoutingAction.DECOMPOSE))
            for child in reversed(unit.children):
                stack.append(child)
        else:  # REWRITE
            try:
                text = rewrite(writer, query, unit)
            except ProviderError:
                steps.append(TraceStep(uid, RoutingAction.SKIP, flag="writer-error"))
                continue
            retained.add(uid)
            rewritten.add(uid)
            n_rw += 1
            steps.append(TraceStep(uid, RoutingAction.REWRITE, rewritten=text))

    step_tuple = tuple(steps)
    return AdaptationTrace(steps=step_tuple, retained=frozenset(retained),
                           rewritten=frozenset(rewritten),
                           budget_exhausted=budget_exhausted,
                           token_estimate=trace_token_estimate(graph, step_tuple))


def compose(full: Iterable[str], trace: AdaptationTrace, scores: ScoreVector,
            graph: SkillGraph) -> SkillContext:
    """Consolidate fully compatible, accepted, and rewritten units into the context.

    Deduplicated by id with rewritten content winning, ordered by layer
    ascending, then score descending, then id; independent of the traversal
    discovery order.
    """
    rewrite_text = {step.unit_id: step.rewritten for step in trace.steps
                    if step.action is RoutingAction.REWRITE and step.rewritten is not None}
    contents: dict[str, str] = {}
    for uid in full:
        contents[uid] = graph.unit(uid).content
    for uid in trace.retained:
        contents[uid] = graph.unit(uid).content
    for uid, text in rewrite_text.items():
        contents[uid] = text

    def order_key(uid: str):
        return (graph.unit(uid).layer, -scores.entries.get(uid, 0.0), uid)

    entries = tuple(
        ContextEntry(unit_id=uid, content=contents[uid],
                     layer=graph.unit(uid).layer,
                     score=scores.entries.get(uid, 0.0))
        for uid in sorted(contents, key=order_key))
    tokens = sum(whitespace_token_count(entry.content) for entry in entries)
    return SkillContext(entries=entries, token_estimate=tokens)


def retrieve_candidates(query: str, graph: SkillGraph, embedder: EmbeddingProvider,
                        cfg: AdaptationConfig
                        ) -> tuple[SeedDistribution, ScoreVector, CompatibilityPartition]:
    """Stage 1 of the pipeline: seeds, walk scores, and the tier partition."""
    seeds = seed_retrieve(query, graph, cfg.seed_count, embedder)
    scores = degree_corrected_rwr(graph, seeds, cfg.rwr)
    parts = partition(scores, cfg.tiers)
    return seeds, scores, parts


def adapt(query: str, graph: SkillGraph, providers: ProviderBundle,
          cfg: AdaptationConfig = AdaptationConfig()
          ) -> tuple[SkillContext, AdaptationTrace]:
    """End-to-end mixed-granularity adaptation for one query.

    When the trigger declines (or the graph is empty) the result is an empty
    context and an empty trace. Provider failures surface as flagged trace
    degradations, never as partial corruption.
    """
    if not should_trigger(query, providers.confidence, cfg):
        return SkillContext.empty(), AdaptationTrace.empty(triggered=False)
    if graph.is_empty():
        return SkillContext.empty(), AdaptationTrace.empty(triggered=True)
    seeds, scores, parts = retrieve_candidates(query, graph, providers.embedder, cfg)
    roots = sorted(parts.partial,
                   key=lambda uid: (-scores.entries.get(uid, 0.0), uid))
    trace = traverse(graph, roots, providers.verifier, providers.writer,
                     query, cfg, scores=scores)
    context = compose(parts.full, trace, scores, graph)
    trace = replace(trace, seed_ids=tuple(sorted(seeds.entries)),
                    context_ids=context.unit_ids())
    return context, trace


def adaptation_cost(trace: AdaptationTrace, cfg: CostConfig = CostConfig()) -> float:
    """Normalized cost in [0, 1], monotone in visited and rewritten volume."""
    if trace.token_estimate <= 0:
        return 0.0
    return min(1.0, cfg.lam * trace.token_estimate / cfg.token_budget)
