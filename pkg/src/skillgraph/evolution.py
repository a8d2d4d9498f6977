"""Dual-registry refinement driven by gap reports from failed runs.

Each iteration builds failure reports over the evolution split, lets the
writer propose single-operator edits to the routing registry, derives the
coupled agent registry for every candidate by replaying adaptation under the
candidate routing, and commits the pair with the highest objective. The
unedited pair always participates as a do-nothing fallback, which makes the
objective sequence non-decreasing and guarantees convergence to a pair no
single atomic edit can improve.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace
from typing import Protocol, Sequence

from .adaptation import (
    AdaptationConfig,
    AdaptationTrace,
    CostConfig,
    ProviderBundle,
    ProviderError,
    RoutingAction,
    RoutingRule,
    SkillContext,
    SubstitutionWriter,
    VerifierRegistry,
    adapt,
    adaptation_cost,
)
from .embeddings import EmbeddingProvider, tokenize
from .graph import (
    EDIT_OPS,
    LAYER_MAX,
    LAYER_NAMES,
    EditOperation,
    EditRejected,
    OP_ADD,
    OP_DELETE,
    OP_MERGE,
    OP_UPDATE,
    SkillGraph,
    SkillUnit,
    apply_edit,
)


# ---------------------------------------------------------------------------
# tasks, reports, registry pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Task:
    """One split entry: a query, its reference answer, and optional hints.

    ``required_tags`` names the capability universe used by synthetic
    utilities; ``substitutions`` parameterize the per-task mock writer.
    """

    query: str
    ground_truth: str
    required_tags: frozenset[str] = frozenset()
    substitutions: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class GapReport:
    """Structured failure record: error type, trajectory, routing, invoked units."""

    error_type: str
    query: str
    failed_output: str
    ground_truth: str
    retrieved_ids: tuple[str, ...]
    traversal_path: tuple[str, ...]
    routing_actions: tuple[RoutingAction, ...]
    invoked_ids: tuple[str, ...]
    rewritten_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.traversal_path) != len(self.routing_actions):
            raise ValueError("routing actions must correspond 1:1 to path entries")


@dataclass(frozen=True)
class RegistryPair:
    """The coupled agent registry (skills) and verifier registry (routing rules)."""

    agent: SkillGraph
    verifier: VerifierRegistry
    version: int = 0


@dataclass(frozen=True)
class TaskScore:
    query: str
    metric: float
    cost: float
    flag: str | None = None


@dataclass(frozen=True)
class ObjectiveValue:
    """Mean metric minus mean cost over a split, with the per-task breakdown."""

    J: float
    mean_metric: float
    mean_cost: float
    per_task: tuple[TaskScore, ...]


@dataclass(frozen=True)
class StepResult:
    pair: RegistryPair
    objective: ObjectiveValue
    candidate_count: int
    report_count: int


@dataclass(frozen=True)
class EvolveResult:
    pair: RegistryPair
    history: tuple[float, ...]
    committed: tuple[RegistryPair, ...]


class AgentProvider(Protocol):
    def complete(self, query: str, context: SkillContext) -> str: ...


class MetricProvider(Protocol):
    def score(self, task: Task, output: str) -> float: ...

    def classify(self, task: Task, output: str, trace: AdaptationTrace) -> str: ...


def classify_failure(task: Task, output: str, trace: AdaptationTrace) -> str:
    """Built-in error taxonomy: no-retrieval / no-output / wrong-output."""
    if not trace.triggered:
        return "no-retrieval"
    if not output.strip():
        return "no-output"
    return "wrong-output"


# ---------------------------------------------------------------------------
# verifier-registry edits
# ---------------------------------------------------------------------------

def apply_verifier_edit(registry: VerifierRegistry, edit: EditOperation) -> VerifierRegistry:
    """Apply one routing-registry edit, returning a new registry."""
    if edit.target_registry != "verifier":
        raise EditRejected("wrong-registry",
                           f"expected a verifier edit, got {edit.target_registry!r}")
    rules = list(registry.rules)
    if edit.op == OP_ADD:
        if not isinstance(edit.rule, RoutingRule):
            raise EditRejected("malformed-edit", "add requires a rule payload")
        index = 0 if edit.rule_index is None else edit.rule_index
        if not 0 <= index <= len(rules):
            raise EditRejected("bad-index", f"rule index {index} out of range")
        rules.insert(index, edit.rule)
    elif edit.op == OP_DELETE:
        if edit.rule_index is None or not 0 <= edit.rule_index < len(rules):
            raise EditRejected("bad-index", f"rule index {edit.rule_index} out of range")
        del rules[edit.rule_index]
    elif edit.op == OP_UPDATE:
        if not isinstance(edit.rule, RoutingRule):
            raise EditRejected("malformed-edit", "update requires a rule payload")
        if edit.rule_index is None or not 0 <= edit.rule_index < len(rules):
            raise EditRejected("bad-index", f"rule index {edit.rule_index} out of range")
        rules[edit.rule_index] = edit.rule
    elif edit.op == OP_MERGE:
        if edit.rule_merge is None:
            raise EditRejected("malformed-edit", "merge requires two rule indices")
        i, j = sorted(edit.rule_merge)
        if i == j or not 0 <= i < len(rules) or not 0 <= j < len(rules):
            raise EditRejected("bad-index", f"cannot merge rule indices {edit.rule_merge}")
        first, second = rules[i], rules[j]
        if first.action is not second.action:
            raise EditRejected("action-mismatch", "merged rules must share an action")
        merged = RoutingRule(
            action=first.action,
            layer=first.layer if first.layer == second.layer else None,
            tags=first.tags & second.tags,
            tier=first.tier if first.tier == second.tier else None,
            query_tags=first.query_tags & second.query_tags)
        del rules[j]
        rules[i] = merged
    else:
        raise EditRejected("unknown-op", f"unsupported operator {edit.op!r}")
    return VerifierRegistry(rules=tuple(rules), theta_full=registry.theta_full,
                            theta_part=registry.theta_part)


# ---------------------------------------------------------------------------
# the mechanical writer
# ---------------------------------------------------------------------------

class EditProposer(Protocol):
    def propose_verifier_edit(self, op: str, report: GapReport,
                              pair: RegistryPair) -> VerifierRegistry | None: ...

    def propose_agent_edits(self, report: GapReport,
                            graph: SkillGraph) -> list[EditOperation]: ...


def _stable_index(key: str, length: int) -> int:
    return zlib.crc32(key.encode("utf-8")) % length


class MechanicalWriter(SubstitutionWriter):
    """Deterministic writer: substitution rewrites plus report-driven proposals.

    Proposals only redistribute capabilities the registry already carries
    (re-route, re-expose, retag, or prune); they never invent capability
    tags without an existing carrier, so a genuinely absent capability stays
    a persistent failure instead of being fabricated.
    """

    def __init__(self, substitutions: Sequence[tuple[str, str]] = (),
                 embedder: EmbeddingProvider | None = None) -> None:
        super().__init__(substitutions)
        self.embedder = embedder

    # -- shared report analysis -------------------------------------------

    @staticmethod
    def _required(report: GapReport) -> set[str]:
        return set(tokenize(report.ground_truth))

    @staticmethod
    def _covered(report: GapReport, graph: SkillGraph) -> set[str]:
        covered: set[str] = set()
        for uid in report.invoked_ids:
            unit = graph.units.get(uid)
            if unit is not None:
                covered |= unit.tags
        return covered

    def _uncovered_carrier(self, report: GapReport,
                           graph: SkillGraph) -> tuple[str, SkillUnit] | None:
        """Smallest uncovered required tag that some registry unit carries."""
        uncovered = sorted(self._required(report) - self._covered(report, graph))
        for tag in uncovered:
            for uid in sorted(graph.units):
                if tag in graph.units[uid].tags:
                    return tag, graph.units[uid]
        return None

    # -- verifier-side proposals -------------------------------------------

    def propose_verifier_edit(self, op: str, report: GapReport,
                              pair: RegistryPair) -> VerifierRegistry | None:
        registry = pair.verifier
        rules = registry.rules
        edit: EditOperation | None = None
        if op == OP_ADD:
            found = self._uncovered_carrier(report, pair.agent)
            if found is not None:
                tag, _ = found
                edit = EditOperation(op=OP_ADD, target_registry="verifier",
                                     rule=RoutingRule(action=RoutingAction.ACCEPT,
                                                      tags=frozenset({tag})),
                                     rule_index=0)
            else:
                # No retrievable capability is missing: mute a unit that was
                # accepted on the failed trajectory.
                for uid, action in zip(report.traversal_path, report.routing_actions):
                    unit = pair.agent.units.get(uid)
                    if action is RoutingAction.ACCEPT and unit is not None:
                        edit = EditOperation(op=OP_ADD, target_registry="verifier",
                                             rule=RoutingRule(action=RoutingAction.SKIP,
                                                              layer=unit.layer,
                                                              tags=unit.tags),
                                             rule_index=0)
                        break
        elif op == OP_DELETE and rules:
            edit = EditOperation(op=OP_DELETE, target_registry="verifier",
                                 rule_index=_stable_index(report.query, len(rules)))
        elif op == OP_UPDATE and rules:
            index = _stable_index(report.query, len(rules))
            old = rules[index]
            flipped = (RoutingAction.SKIP if old.action is RoutingAction.ACCEPT
                       else RoutingAction.ACCEPT)
            edit = EditOperation(op=OP_UPDATE, target_registry="verifier",
                                 rule=replace(old, action=flipped), rule_index=index)
        elif op == OP_MERGE and len(rules) >= 2:
            for i in range(len(rules)):
                for j in range(i + 1, len(rules)):
                    if rules[i].action is rules[j].action:
                        edit = EditOperation(op=OP_MERGE, target_registry="verifier",
                                             rule_merge=(i, j))
                        break
                if edit is not None:
                    break
        if edit is None:
            return None
        try:
            return apply_verifier_edit(registry, edit)
        except EditRejected:
            return None

    # -- agent-side proposals ------------------------------------------------

    def propose_agent_edits(self, report: GapReport,
                            graph: SkillGraph) -> list[EditOperation]:
        edits: list[EditOperation] = []
        required = self._required(report)
        found = self._uncovered_carrier(report, graph)
        if found is not None:
            tag, carrier = found
            target_id = None
            for uid in report.rewritten_ids + report.invoked_ids:
                if uid in graph.units:
                    target_id = uid
                    break
            if target_id is not None:
                # Retag a unit the pipeline already surfaces with the missing
                # capability, keeping content and tags in step.
                old = graph.units[target_id]
                edits.append(EditOperation(
                    op=OP_UPDATE, unit_id=target_id,
                    content=f"{old.content} {tag}",
                    tags=old.tags | {tag}))
            else:
                parent = self._attachment_point(report, graph)
                if parent is not None:
                    new_id = (f"{parent.id}.x"
                              f"{zlib.crc32((report.query + tag).encode()) % 10000:04d}")
                    layer = parent.layer + 1
                    tags = carrier.tags | {tag}
                    content = (f"{LAYER_NAMES[layer]} skill {new_id} handles "
                               f"{' '.join(sorted(tags))}")
                    embedding = None
                    if self.embedder is not None:
                        embedding = tuple(float(x) for x in self.embedder.embed(content))
                    edits.append(EditOperation(
                        op=OP_ADD,
                        unit=SkillUnit(id=new_id, layer=layer, content=content,
                                       tags=tags, embedding=embedding),
                        parent_id=parent.id))
        for uid in report.invoked_ids:
            unit = graph.units.get(uid)
            if unit is not None and not unit.children and not unit.tags & required:
                edits.append(EditOperation(op=OP_DELETE, unit_id=uid))
                break
        return edits

    @staticmethod
    def _attachment_point(report: GapReport, graph: SkillGraph) -> SkillUnit | None:
        for uid, action in zip(report.traversal_path, report.routing_actions):
            unit = graph.units.get(uid)
            if action is RoutingAction.DECOMPOSE and unit is not None \
                    and unit.layer < LAYER_MAX:
                return unit
        for uid in report.invoked_ids:
            unit = graph.units.get(uid)
            if unit is not None and unit.layer < LAYER_MAX:
                return unit
        return None


# ---------------------------------------------------------------------------
# one evolution iteration
# ---------------------------------------------------------------------------

def _run_task(task: Task, graph: SkillGraph, bundle: ProviderBundle,
              providers: ProviderBundle, cfg: AdaptationConfig):
    task_bundle = replace(bundle, writer=providers.writer_for(task))
    context, trace = adapt(task.query, graph, task_bundle, cfg)
    flag = None
    try:
        output = providers.agent.complete(task.query, context)
    except ProviderError as exc:
        output = ""
        flag = exc.flag
    return context, trace, output, flag


def build_gap_report(task: Task, output: str, trace: AdaptationTrace,
                     metric_provider: MetricProvider) -> GapReport | None:
    """A report exists exactly when the metric falls short of 1."""
    if metric_provider.score(task, output) >= 1.0:
        return None
    return GapReport(
        error_type=metric_provider.classify(task, output, trace),
        query=task.query,
        failed_output=output,
        ground_truth=task.ground_truth,
        retrieved_ids=trace.seed_ids,
        traversal_path=tuple(step.unit_id for step in trace.steps),
        routing_actions=tuple(step.action for step in trace.steps),
        invoked_ids=trace.context_ids,
        rewritten_ids=tuple(sorted(trace.rewritten)))


def _collect_reports(pair: RegistryPair, split: Sequence[Task],
                     providers: ProviderBundle,
                     cfg: AdaptationConfig) -> list[GapReport]:
    bundle = providers.with_verifier(pair.verifier)
    reports: list[GapReport] = []
    for task in split:
        _, trace, output, _ = _run_task(task, pair.agent, bundle, providers, cfg)
        report = build_gap_report(task, output, trace, providers.metric)
        if report is not None:
            reports.append(report)
    return reports


def propose_edits(reports: Sequence[GapReport], writer: EditProposer,
                  pair: RegistryPair, budget: int) -> list[VerifierRegistry]:
    """Candidate routing registries; element 0 is always the unedited registry.

    One single-operator proposal per (operator, report), round-robin over
    reports, capped at ``budget`` total candidates. A writer failure skips
    that proposal only.
    """
    if budget < 1:
        raise ValueError(f"candidate budget must be at least 1, got {budget}")
    candidates: list[VerifierRegistry] = [pair.verifier]
    for op in EDIT_OPS:
        for report in reports:
            if len(candidates) >= budget:
                return candidates
            try:
                proposal = writer.propose_verifier_edit(op, report, pair)
            except ProviderError:
                continue
            if proposal is not None:
                candidates.append(proposal)
    return candidates


def induce_agent_registry(graph: SkillGraph, candidate: VerifierRegistry,
                          split: Sequence[Task], providers: ProviderBundle,
                          cfg: AdaptationConfig = AdaptationConfig()) -> SkillGraph:
    """Derive the agent registry coupled to a candidate routing registry.

    Replays adaptation over the split under the candidate routing, collects
    the writer's agent-side edits from the resulting gap reports, and applies
    them; rejected edits are dropped, so the map is total. With no failures
    the input graph is returned unchanged.
    """
    bundle = providers.with_verifier(candidate)
    reports: list[GapReport] = []
    for task in split:
        _, trace, output, _ = _run_task(task, graph, bundle, providers, cfg)
        report = build_gap_report(task, output, trace, providers.metric)
        if report is not None:
            reports.append(report)
    edits: list[EditOperation] = []
    for report in reports:
        try:
            edits.extend(providers.writer.propose_agent_edits(report, graph))
        except ProviderError:
            continue
    current = graph
    for edit in edits:
        try:
            current = apply_edit(current, edit)
        except EditRejected:
            continue
    return current


def evaluate_objective(pair: RegistryPair, split: Sequence[Task],
                       providers: ProviderBundle,
                       cost_cfg: CostConfig = CostConfig(),
                       cfg: AdaptationConfig = AdaptationConfig()) -> ObjectiveValue:
    """Mean metric minus mean adaptation cost over the split.

    Agent failures count as metric 0 with a flag. Means use compensated
    summation, so the value is invariant to task order.
    """
    if not split:
        raise ValueError("cannot evaluate the objective on an empty split")
    bundle = providers.with_verifier(pair.verifier)
    scores: list[TaskScore] = []
    for task in split:
        context, trace, output, flag = _run_task(task, pair.agent, bundle, providers, cfg)
        if flag is None:
            metric = float(providers.metric.score(task, output))
        else:
            metric = 0.0
        scores.append(TaskScore(query=task.query, metric=metric,
                                cost=adaptation_cost(trace, cost_cfg), flag=flag))
    n = len(scores)
    mean_metric = math.fsum(s.metric for s in scores) / n
    mean_cost = math.fsum(s.cost for s in scores) / n
    return ObjectiveValue(J=mean_metric - mean_cost, mean_metric=mean_metric,
                          mean_cost=mean_cost, per_task=tuple(scores))


def evolve_step(pair: RegistryPair, split: Sequence[Task], providers: ProviderBundle,
                budget: int = 16, cfg: AdaptationConfig = AdaptationConfig(),
                cost_cfg: CostConfig = CostConfig()) -> StepResult:
    """One refinement iteration; the returned objective never falls below the input's.

    Ties break in favor of the do-nothing fallback, then by candidate index,
    so the committed sequence is maximally stable.
    """
    reports = _collect_reports(pair, split, providers, cfg)
    proposals = propose_edits(reports, providers.writer, pair, budget)
    pairs: list[RegistryPair] = [pair]
    for candidate in proposals[1:]:
        induced = induce_agent_registry(pair.agent, candidate, split, providers, cfg)
        pairs.append(RegistryPair(agent=induced, verifier=candidate,
                                  version=pair.version + 1))
    objectives = [evaluate_objective(p, split, providers, cost_cfg, cfg) for p in pairs]
    best = 0
    for index in range(1, len(pairs)):
        if objectives[index].J > objectives[best].J:
            best = index
    return StepResult(pair=pairs[best], objective=objectives[best],
                      candidate_count=len(pairs), report_count=len(reports))


def evolve(pair: RegistryPair, split: Sequence[Task], providers: ProviderBundle,
           max_iterations: int = 10, patience: int = 3, budget: int = 16,
           cfg: AdaptationConfig = AdaptationConfig(),
           cost_cfg: CostConfig = CostConfig()) -> EvolveResult:
    """Iterate refinement steps; the objective history is non-decreasing.

    Stops early once nothing is proposed (no failures) or after ``patience``
    consecutive iterations without improvement.
    """
    if max_iterations < 1:
        raise ValueError(f"max_iterations must be at least 1, got {max_iterations}")
    if patience < 1:
        raise ValueError(f"patience must be at least 1, got {patience}")
    base = evaluate_objective(pair, split, providers, cost_cfg, cfg)
    history = [base.J]
    committed = [pair]
    current = pair
    stall = 0
    for _ in range(max_iterations):
        result = evolve_step(current, split, providers, budget, cfg, cost_cfg)
        if result.candidate_count <= 1:
            break
        history.append(result.objective.J)
        committed.append(result.pair)
        stall = 0 if result.objective.J > history[-2] else stall + 1
        current = result.pair
        if stall >= patience:
            break
    return EvolveResult(pair=current, history=tuple(history), committed=tuple(committed))
