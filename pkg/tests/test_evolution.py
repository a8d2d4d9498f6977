"""Gap reports, edit proposals, the induced registry map, and refinement steps."""

from __future__ import annotations

import pytest

from skillgraph.adaptation import (
    AdaptationTrace,
    RoutingAction,
    RoutingRule,
    VerifierRegistry,
)
from skillgraph.evolution import (
    GapReport,
    MechanicalWriter,
    Task,
    apply_verifier_edit,
    build_gap_report,
    evaluate_objective,
    evolve,
    evolve_step,
    induce_agent_registry,
    propose_edits,
)
from skillgraph.graph import EditOperation, EditRejected
from skillgraph.harness import EVOLUTION_ADAPTATION, evolution_setup
from skillgraph.synthetic import TagMetric


def setup(seed=0):
    return evolution_setup(seed)


def run_one(task, graph, providers, cfg=EVOLUTION_ADAPTATION):
    from skillgraph.adaptation import adapt
    from dataclasses import replace as dc_replace
    bundle = dc_replace(providers, writer=providers.writer_for(task))
    ctx, trace = adapt(task.query, graph, bundle, cfg)
    output = providers.agent.complete(task.query, ctx)
    return ctx, trace, output


# ---------------------------------------------------------------------------
# gap reports
# ---------------------------------------------------------------------------

def test_no_report_when_metric_is_perfect():
    task = Task(query="q", ground_truth="cap01")
    trace = AdaptationTrace.empty()
    assert build_gap_report(task, "cap01", trace, TagMetric()) is None


def test_report_emitted_for_partial_metric():
    task = Task(query="q", ground_truth="cap01 cap02")
    trace = AdaptationTrace.empty()
    report = build_gap_report(task, "cap01", trace, TagMetric())
    assert report is not None
    assert report.error_type == "wrong-output"


def test_declined_trigger_reports_no_retrieval():
    task = Task(query="q", ground_truth="cap01")
    trace = AdaptationTrace.empty(triggered=False)
    report = build_gap_report(task, "", trace, TagMetric())
    assert report.error_type == "no-retrieval"
    assert report.traversal_path == ()


def test_report_fields_align_with_trace():
    graph, tasks, providers, _ = setup(4)
    failing = [t for t in tasks
               if TagMetric().score(t, run_one(t, graph, providers)[2]) < 1.0]
    assert failing, "setup should produce at least one failing task"
    task = failing[0]
    _, trace, output = run_one(task, graph, providers)
    report = build_gap_report(task, output, trace, providers.metric)
    assert report is not None
    assert len(report.traversal_path) == len(report.routing_actions)
    assert report.retrieved_ids == trace.seed_ids
    assert report.retrieved_ids  # non-empty whenever retrieval triggered
    assert set(report.rewritten_ids) == set(trace.rewritten)


def test_report_rejects_mismatched_actions():
    with pytest.raises(ValueError):
        GapReport(error_type="wrong-output", query="q", failed_output="",
                  ground_truth="g", retrieved_ids=(), traversal_path=("a",),
                  routing_actions=(), invoked_ids=(), rewritten_ids=())


# ---------------------------------------------------------------------------
# verifier-registry edits
# ---------------------------------------------------------------------------

def test_apply_verifier_edit_roundtrip_ops():
    registry = VerifierRegistry()
    rule = RoutingRule(action=RoutingAction.ACCEPT, tags=frozenset({"cap01"}))
    added = apply_verifier_edit(registry, EditOperation(
        op="add", target_registry="verifier", rule=rule, rule_index=0))
    assert added.rules == (rule,)
    updated = apply_verifier_edit(added, EditOperation(
        op="update", target_registry="verifier",
        rule=RoutingRule(action=RoutingAction.SKIP, tags=frozenset({"cap01"})),
        rule_index=0))
    assert updated.rules[0].action is RoutingAction.SKIP
    second = apply_verifier_edit(updated, EditOperation(
        op="add", target_registry="verifier",
        rule=RoutingRule(action=RoutingAction.SKIP, layer=2), rule_index=1))
    merged = apply_verifier_edit(second, EditOperation(
        op="merge", target_registry="verifier", rule_merge=(0, 1)))
    assert len(merged.rules) == 1
    assert merged.rules[0].action is RoutingAction.SKIP
    emptied = apply_verifier_edit(merged, EditOperation(
        op="delete", target_registry="verifier", rule_index=0))
    assert emptied.rules == ()


def test_apply_verifier_edit_rejects_bad_payloads():
    registry = VerifierRegistry()
    with pytest.raises(EditRejected):
        apply_verifier_edit(registry, EditOperation(op="delete",
                                                    target_registry="verifier",
                                                    rule_index=0))
    with pytest.raises(EditRejected):
        apply_verifier_edit(registry, EditOperation(op="add",
                                                    target_registry="agent"))


# ---------------------------------------------------------------------------
# propose_edits
# ---------------------------------------------------------------------------

def make_report(query="q", ground_truth="cap00 cap01"):
    return GapReport(error_type="wrong-output", query=query, failed_output="",
                     ground_truth=ground_truth, retrieved_ids=("s1-000",),
                     traversal_path=("s1-000",),
                     routing_actions=(RoutingAction.ACCEPT,),
                     invoked_ids=("s1-000",), rewritten_ids=())


def test_propose_edits_no_reports_is_fallback_only():
    graph, _, providers, pair = setup(0)
    candidates = propose_edits([], providers.writer, pair, budget=16)
    assert candidates == [pair.verifier]


def test_propose_edits_one_report_at_most_five_candidates():
    graph, _, providers, pair = setup(0)
    candidates = propose_edits([make_report()], providers.writer, pair, budget=16)
    assert candidates[0] == pair.verifier
    assert len(candidates) <= 5


def test_propose_edits_budget_caps_with_fallback_first():
    graph, _, providers, pair = setup(0)
    reports = [make_report(query=f"q{i}") for i in range(6)]
    candidates = propose_edits(reports, providers.writer, pair, budget=2)
    assert len(candidates) == 2
    assert candidates[0] == pair.verifier
    with pytest.raises(ValueError):
        propose_edits(reports, providers.writer, pair, budget=0)


def test_writer_failure_skips_that_proposal_only():
    graph, _, providers, pair = setup(0)

    class FlakyWriter(MechanicalWriter):
        def propose_verifier_edit(self, op, report, p):
            if op == "add":
                from skillgraph.adaptation import TransportError
                raise TransportError("writer down")
            return super().propose_verifier_edit(op, report, p)

    reports = [make_report(query=f"q{i}") for i in range(2)]
    flaky = propose_edits(reports, FlakyWriter(), pair, budget=16)
    steady = propose_edits(reports, MechanicalWriter(), pair, budget=16)
    assert flaky[0] == pair.verifier
    assert len(flaky) < len(steady)  # only the failing op's proposals are missing


def test_mechanical_writer_never_invents_uncarried_tags():
    graph, _, providers, pair = setup(0)
    report = make_report(ground_truth="nonexistent-tag-xyz")
    writer = MechanicalWriter()
    proposal = writer.propose_verifier_edit("add", report, pair)
    if proposal is not None:
        # without a carrier, the only add proposal is a mute rule
        assert proposal.rules[0].action is RoutingAction.SKIP
    assert all(e.op != "add" or e.unit is None or
               not {"nonexistent-tag-xyz"} & e.unit.tags
               for e in writer.propose_agent_edits(report, graph))


# ---------------------------------------------------------------------------
# induced agent registry
# ---------------------------------------------------------------------------

def test_induce_identity_when_no_failures():
    graph, tasks, providers, pair = setup(1)
    solvable = [t for t in tasks
                if TagMetric().score(t, run_one(t, graph, providers)[2]) >= 1.0]
    if not solvable:
        pytest.skip("seed produced no immediately-solved tasks")
    result = induce_agent_registry(graph, pair.verifier, solvable, providers,
                                   EVOLUTION_ADAPTATION)
    assert result == graph


def test_induce_applies_scripted_update():
    graph, tasks, providers, pair = setup(0)

    class OneUpdateWriter(MechanicalWriter):
        def propose_agent_edits(self, report, g):
            target = sorted(g.units)[0]
            return [EditOperation(op="update", unit_id=target,
                                  content="patched content")]

    from dataclasses import replace as dc_replace
    providers = dc_replace(providers, writer=OneUpdateWriter(),
                           writer_factory=None)
    result = induce_agent_registry(graph, pair.verifier, tasks, providers,
                                   EVOLUTION_ADAPTATION)
    target = sorted(graph.units)[0]
    assert result.units[target].content == "patched content"
    others = {uid: u.content for uid, u in result.units.items() if uid != target}
    assert others == {uid: u.content for uid, u in graph.units.items()
                      if uid != target}


def test_induce_drops_rejected_edits_and_stays_total():
    from dataclasses import replace as dc_replace
    from skillgraph.graph import SkillUnit

    graph, tasks, providers, pair = setup(0)

    class BrokenEditWriter(MechanicalWriter):
        def propose_agent_edits(self, report, g):
            return [EditOperation(op="add",
                                  unit=SkillUnit(id="bad", layer=3, content="x"),
                                  parent_id="s1-000")]  # layer 3 under layer 1

    providers = dc_replace(providers, writer=BrokenEditWriter(),
                           writer_factory=None)
    result = induce_agent_registry(graph, pair.verifier, tasks, providers,
                                   EVOLUTION_ADAPTATION)
    assert result == graph  # every proposal rejected, map still total


def test_induce_is_deterministic():
    graph, tasks, providers, pair = setup(2)
    a = induce_agent_registry(graph, pair.verifier, tasks, providers,
                              EVOLUTION_ADAPTATION)
    b = induce_agent_registry(graph, pair.verifier, tasks, providers,
                              EVOLUTION_ADAPTATION)
    assert a == b


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def test_objective_bounds_and_identity():
    graph, tasks, providers, pair = setup(3)
    value = evaluate_objective(pair, tasks, providers, cfg=EVOLUTION_ADAPTATION)
    assert -1.0 <= value.J <= 1.0
    assert value.J == value.mean_metric - value.mean_cost
    assert 0.0 <= value.mean_metric <= 1.0
    assert value.mean_cost >= 0.0
    assert len(value.per_task) == len(tasks)


def test_objective_perfect_tasks_reach_upper_range():
    graph, tasks, providers, pair = setup(0)

    class PerfectMetric(TagMetric):
        def score(self, task, output):
            return 1.0

    from dataclasses import replace as dc_replace
    providers = dc_replace(providers, metric=PerfectMetric())
    value = evaluate_objective(pair, tasks, providers, cfg=EVOLUTION_ADAPTATION)
    assert value.mean_metric == 1.0
    assert value.J == pytest.approx(1.0 - value.mean_cost)


def test_objective_agent_failure_counts_zero_with_flag():
    graph, tasks, providers, pair = setup(0)

    class DownAgent:
        def complete(self, query, context):
            from skillgraph.adaptation import TransportError
            raise TransportError("down")

    from dataclasses import replace as dc_replace
    providers = dc_replace(providers, agent=DownAgent())
    value = evaluate_objective(pair, tasks, providers, cfg=EVOLUTION_ADAPTATION)
    assert value.mean_metric == 0.0
    assert all(s.flag == "transport-error" for s in value.per_task)


def test_objective_is_permutation_invariant():
    graph, tasks, providers, pair = setup(5)
    forward = evaluate_objective(pair, tasks, providers, cfg=EVOLUTION_ADAPTATION)
    backward = evaluate_objective(pair, list(reversed(tasks)), providers,
                                  cfg=EVOLUTION_ADAPTATION)
    assert forward.J == backward.J
    assert forward.mean_metric == backward.mean_metric


def test_objective_rejects_empty_split():
    graph, _, providers, pair = setup(0)
    with pytest.raises(ValueError):
        evaluate_objective(pair, [], providers)


# ---------------------------------------------------------------------------
# evolve_step / evolve
# ---------------------------------------------------------------------------

def test_step_never_decreases_objective_and_ties_keep_fallback():
    for seed in range(6):
        graph, tasks, providers, pair = setup(seed)
        base = evaluate_objective(pair, tasks, providers, cfg=EVOLUTION_ADAPTATION)
        result = evolve_step(pair, tasks, providers, budget=6,
                             cfg=EVOLUTION_ADAPTATION)
        assert result.objective.J >= base.J
        if result.objective.J == base.J:
            assert result.pair is pair


def test_step_with_improving_candidate_commits_it():
    improved = None
    for seed in range(8):
        graph, tasks, providers, pair = setup(seed)
        base = evaluate_objective(pair, tasks, providers, cfg=EVOLUTION_ADAPTATION)
        result = evolve_step(pair, tasks, providers, budget=6,
                             cfg=EVOLUTION_ADAPTATION)
        if result.objective.J > base.J:
            improved = result
            break
    assert improved is not None, "no seed produced an improving candidate"
    assert improved.pair.version >= 1


def test_evolve_single_iteration_runs_exactly_one_step():
    graph, tasks, providers, pair = setup(0)
    result = evolve(pair, tasks, providers, max_iterations=1, patience=1,
                    budget=6, cfg=EVOLUTION_ADAPTATION)
    assert len(result.history) <= 2


def test_evolve_with_no_failures_stops_with_single_history_entry():
    graph, tasks, providers, pair = setup(0)

    class PerfectMetric(TagMetric):
        def score(self, task, output):
            return 1.0

    from dataclasses import replace as dc_replace
    providers = dc_replace(providers, metric=PerfectMetric())
    result = evolve(pair, tasks, providers, max_iterations=5, patience=3,
                    budget=6, cfg=EVOLUTION_ADAPTATION)
    assert len(result.history) == 1
    assert result.pair is pair


def test_evolve_history_is_non_decreasing_across_seeds():
    for seed in range(10):
        graph, tasks, providers, pair = setup(seed)
        result = evolve(pair, tasks, providers, max_iterations=6, patience=6,
                        budget=6, cfg=EVOLUTION_ADAPTATION)
        assert all(b >= a for a, b in zip(result.history, result.history[1:])), \
            f"seed {seed}: {result.history}"


def test_evolve_patience_stops_after_stalls():
    graph, tasks, providers, pair = setup(2)
    result = evolve(pair, tasks, providers, max_iterations=20, patience=2,
                    budget=6, cfg=EVOLUTION_ADAPTATION)
    # after the last strict improvement at most `patience` flat entries follow
    flat_tail = 0
    for a, b in zip(result.history, result.history[1:]):
        flat_tail = flat_tail + 1 if b == a else 0
    assert flat_tail <= 2
