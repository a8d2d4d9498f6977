"""Acceptance gate: every exit criterion at its stated tolerance.

Each test prints one pass/fail line (run with ``pytest tests/test_acceptance.py
-v -s``). Tolerances are pinned here, not calibrated elsewhere: objective
monotonicity is exact, walk-oracle agreement is 1e-6 sup-norm, the greedy
floor is (1 - 1/e) * OPT exactly and (1 - 1/e) * OPT - 2*K*eps under noise,
traversal means stay at or below 4 with at most 2x growth across sizes.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from skillgraph.adaptation import RoutingAction, adapt
from skillgraph.embeddings import HashingEmbedder
from skillgraph.evolution import RegistryPair
from skillgraph.graph import SkillGraph, SkillUnit, validate_graph
from skillgraph.harness import (
    EVOLUTION_ADAPTATION,
    run_evolution_suite,
    run_rewrite_ablation,
    run_selection_bounds,
)
from skillgraph.oracle import measure_visited, rwr_linear_solve
from skillgraph.retrieval import RwrConfig, SeedDistribution, degree_corrected_rwr
from skillgraph.storage import canonical_bytes, load_registry, save_registry
from skillgraph.synthetic import (
    SimConfig,
    gen_random_graph,
    gen_synthetic_library,
    gen_tasks,
    mock_providers,
)

GREEDY_FLOOR = 1.0 - 1.0 / math.e


def report(label: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance] {label}: {status}{suffix}")
    assert ok, f"{label}{suffix}"


@pytest.fixture(scope="module")
def evolution_records():
    records, _, _ = run_evolution_suite(runs=100, iterations=20, seed=0, budget=6)
    return records


def test_objective_monotonicity_over_100_runs(evolution_records):
    """J never decreases across 20 committed iterations, zero tolerance."""
    violations = 0
    steps = 0
    for record in evolution_records:
        for before, after in zip(record.history, record.history[1:]):
            steps += 1
            if after < before:
                violations += 1
    report("monotone objective over 100 seeded runs", violations == 0,
           f"{steps} steps checked, {violations} decreases")


def test_fixed_point_registries_are_byte_identical(evolution_records):
    """After the last strict improvement every committed pair is byte-identical."""
    bad_runs = []
    plateau_runs = 0
    for record in evolution_records:
        last_gain = 0
        for index in range(1, len(record.history)):
            if record.history[index] > record.history[index - 1]:
                last_gain = index
        tail = record.fingerprints[last_gain:]
        if len(tail) > 1:
            plateau_runs += 1
        if any(fp != tail[0] for fp in tail):
            bad_runs.append(record.run)
    report("fixed-point pairs byte-identical after last improvement",
           not bad_runs and plateau_runs > 0,
           f"{plateau_runs} runs reached a committed plateau; bad runs: {bad_runs}")


def test_greedy_selection_floor_exact_and_noisy():
    """Exact gains: floor met on 100% of 1000 instances; noisy: >= 99%."""
    rows, _ = run_selection_bounds(instances=1000, seed=12345,
                                   noise_levels=(0.0, 0.01, 0.05))
    by_eps: dict[float, list[int]] = {}
    for row in rows:
        by_eps.setdefault(row["eps"], []).append(row["ok"])
    exact_share = sum(by_eps[0.0]) / len(by_eps[0.0])
    noisy_shares = {eps: sum(oks) / len(oks) for eps, oks in by_eps.items()
                    if eps > 0.0}
    ok = exact_share == 1.0 and all(share >= 0.99 for share in noisy_shares.values())
    report("greedy floor (exact 100%, noisy >= 99%)", ok,
           f"exact {exact_share:.1%}, noisy " +
           ", ".join(f"eps={eps}: {share:.1%}" for eps, share in sorted(noisy_shares.items())))


def test_traversal_cost_is_sublinear_in_tree_size():
    """Mean visits <= 4 at n in {63, 1023, 65535}, growth <= 2x, rewrites bounded."""
    stats = measure_visited(SimConfig(seed=777, branching=2, decompose_prob=0.25,
                                      trials=1000, tree_sizes=(63, 1023, 65535)))
    means = [s.mean_visited for s in stats]
    growth = means[-1] / means[0]
    ok = all(m <= 4.0 for m in means) and growth <= 2.0 \
        and all(s.rewrites_bounded for s in stats)
    report("sublinear traversal cost", ok,
           f"means {[round(m, 3) for m in means]}, growth {growth:.3f}x")


def test_walk_matches_dense_solve_within_tolerance():
    """Iterative walk equals the dense solve within 1e-6 on 100 seeded graphs."""
    import random as _random
    worst = 0.0
    dangling_seen = 0
    for seed in range(100):
        graph = gen_random_graph(2024 + seed, max_nodes=50)
        ids = sorted(graph.units)
        incident = {uid for pair in
                    (graph.hierarchical_edges | graph.lateral_edges) for uid in pair}
        dangling_seen += any(uid not in incident for uid in ids)
        rng = _random.Random(seed)
        picks = rng.sample(ids, min(len(ids), rng.randint(1, 3)))
        p0 = SeedDistribution({uid: 1.0 / len(picks) for uid in picks})
        cfg = RwrConfig()
        iterative = degree_corrected_rwr(graph, p0, cfg)
        direct = rwr_linear_solve(graph, p0, cfg)
        worst = max(worst, max(abs(iterative.entries[uid] - direct.entries[uid])
                               for uid in ids))
    graph = gen_random_graph(1)
    uid = sorted(graph.units)[0]
    restart_only = degree_corrected_rwr(graph, SeedDistribution({uid: 1.0}),
                                        RwrConfig(alpha=1.0))
    exact_restart = restart_only.entries[uid] == 1.0 and all(
        v == 0.0 for node, v in restart_only.entries.items() if node != uid)
    ok = worst < 1e-6 and exact_restart and dangling_seen > 0
    report("walk/dense-solve agreement within 1e-6", ok,
           f"worst sup-norm {worst:.2e}, graphs with dangling nodes "
           f"{dangling_seen}/100")


def test_degree_correction_strictly_lowers_hub_score():
    """On a seeded hub graph the hub scores strictly lower at beta 0.5 than 0."""
    names = ["hub"] + [f"spoke{i}" for i in range(8)]
    lateral = {tuple(sorted(("hub", f"spoke{i}"))) for i in range(8)}
    lateral |= {tuple(sorted((f"spoke{i}", f"spoke{i+1}"))) for i in range(7)}
    units = {n: SkillUnit(id=n, layer=2, content=n) for n in names}
    graph = SkillGraph(units=units, hierarchical_edges=frozenset(),
                       lateral_edges=frozenset(lateral),
                       edge_weights={pair: 1.0 for pair in lateral})
    seeds = SeedDistribution({"spoke0": 1.0})
    plain = degree_corrected_rwr(graph, seeds,
                                 RwrConfig(alpha=0.15, beta=0.0, tol=1e-10))
    damped = degree_corrected_rwr(graph, seeds,
                                  RwrConfig(alpha=0.15, beta=0.5, tol=1e-10))
    ok = damped.entries["hub"] < plain.entries["hub"]
    report("degree correction damps the hub", ok,
           f"hub score {plain.entries['hub']:.4f} -> {damped.entries['hub']:.4f}")


def test_trace_contracts_over_200_seeded_runs():
    """B subset of R, frontier exclusivity, and cost monotone in trace volume."""
    from skillgraph.adaptation import adaptation_cost, trace_token_estimate
    from dataclasses import replace as dc_replace

    checked = 0
    for seed in range(40):
        sim = SimConfig(seed=seed)
        embedder = HashingEmbedder(sim.embed_dim)
        graph = gen_synthetic_library(sim, embedder)
        tasks = gen_tasks(sim, graph)
        providers = mock_providers(embedder=embedder)
        parent_of = {}
        for unit in graph.units.values():
            for child in unit.children:
                parent_of[child] = unit.id  # libraries are trees by construction
        for task in tasks:
            _, trace = adapt(task.query, graph, providers)
            checked += 1
            assert trace.rewritten <= trace.retained, "B must stay inside R"
            stepped = {s.unit_id: s.action for s in trace.steps}
            decomposed = {uid for uid, action in stepped.items()
                          if action is RoutingAction.DECOMPOSE}
            roots = {s.unit_id for s in trace.steps
                     if parent_of.get(s.unit_id) not in decomposed}
            for step in trace.steps:
                parent = parent_of.get(step.unit_id)
                assert step.unit_id in roots or parent in decomposed, \
                    "visited unit below a terminal decision"
            costs = []
            for cut in range(len(trace.steps) + 1):
                prefix = trace.steps[:cut]
                partial = dc_replace(trace, steps=prefix,
                                     token_estimate=trace_token_estimate(graph, prefix))
                costs.append(adaptation_cost(partial))
            assert all(b >= a for a, b in zip(costs, costs[1:])), \
                "cost must be monotone in visited/rewritten volume"
    report("trace contracts on seeded runs", checked >= 200,
           f"{checked} adapt runs checked")


def test_selective_rewriting_dominates_ablation_baselines():
    """Selective drill-down: coverage >= both baselines, strictly fewer rewrites."""
    rows, _ = run_rewrite_ablation(seed=0)
    by_task: dict[int, dict[str, dict]] = {}
    for row in rows:
        by_task.setdefault(row["task"], {})[row["mode"]] = row
    coverage_ok = all(
        modes["selective"]["coverage"] >= modes["parent-only"]["coverage"] - 1e-9
        and modes["selective"]["coverage"] >= modes["rewrite-all"]["coverage"] - 1e-9
        for modes in by_task.values())
    total = {mode: sum(r["rewrites"] for r in rows if r["mode"] == mode)
             for mode in ("selective", "rewrite-all", "parent-only")}
    mean_cov = {mode: math.fsum(r["coverage"] for r in rows if r["mode"] == mode)
                / len(by_task) for mode in ("selective", "rewrite-all", "parent-only")}
    ok = coverage_ok and total["selective"] < total["rewrite-all"]
    report("selective rewriting dominates ablations", ok,
           f"mean coverage {mean_cov['selective']:.3f} vs parent-only "
           f"{mean_cov['parent-only']:.3f} / rewrite-all {mean_cov['rewrite-all']:.3f}; "
           f"rewrites {total['selective']} vs {total['rewrite-all']}")


def test_persistence_roundtrip_and_cli_reproducibility(tmp_path):
    """Round-trip identity over the generated corpus; CLI runs byte-identical."""
    from skillgraph.adaptation import VerifierRegistry

    from skillgraph.evolution import evolve
    from skillgraph.harness import evolution_setup

    corpus_ok = True
    pairs = [RegistryPair(agent=gen_synthetic_library(SimConfig(seed=s)),
                          verifier=VerifierRegistry(), version=s)
             for s in range(6)]
    _, tasks, providers, pair = evolution_setup(11)
    evolved = evolve(pair, tasks, providers, max_iterations=4, patience=4,
                     budget=6, cfg=EVOLUTION_ADAPTATION)
    pairs.extend(evolved.committed)
    for index, candidate in enumerate(pairs):
        path = save_registry(candidate, tmp_path / f"corpus{index}.json")
        loaded = load_registry(path)
        corpus_ok = corpus_ok and loaded == candidate \
            and canonical_bytes(loaded) == canonical_bytes(candidate)

    skills, split = _cli_corpus(tmp_path)
    commands = [
        ["init", "--out", "."],
        ["ingest", str(skills), "--out", "registry.json"],
        ["query", "task needs cap01 cap03", "--registry", "registry.json"],
        ["inspect", "s1-000", "--registry", "registry.json"],
        ["evolve", str(split), "--registry", "registry.json",
         "--out", "evolved.json", "--seed", "2"],
        ["simulate", "prop1", "--out", "sim", "--trials", "20", "--sizes", "63"],
        ["simulate", "prop2", "--out", "sim", "--runs", "2", "--iters", "3"],
        ["simulate", "prop3", "--out", "sim", "--instances", "25"],
        ["simulate", "ablation", "--out", "sim", "--tasks", "3"],
    ]
    cli_ok = True
    outputs = {}
    for trial in ("a", "b"):
        workdir = tmp_path / trial
        workdir.mkdir()
        stdout = b""
        for command in commands:
            result = subprocess.run([sys.executable, "-m", "skillgraph"] + command,
                                    cwd=workdir, capture_output=True, timeout=300)
            cli_ok = cli_ok and result.returncode == 0
            stdout += result.stdout
        outputs[trial] = stdout
    cli_ok = cli_ok and outputs["a"] == outputs["b"]
    for name in ("registry.json", "evolved.json", "sim/prop1.csv",
                 "sim/prop2.csv", "sim/prop3.csv", "sim/ablation.csv"):
        cli_ok = cli_ok and (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()
    report("persistence round-trip and CLI byte reproducibility",
           corpus_ok and cli_ok,
           f"{len(pairs)} corpus pairs, {len(commands)} commands twice")


def _cli_corpus(tmp_path: Path):
    sim = SimConfig(seed=5, embed_dim=256)
    graph = gen_synthetic_library(sim, HashingEmbedder(256))
    skills = tmp_path / "skills.json"
    skills.write_text(json.dumps(
        [{"id": u.id, "layer": u.layer, "content": u.content,
          "children": list(u.children), "tags": sorted(u.tags)}
         for u in graph.units.values()]))
    tasks = gen_tasks(sim, graph)
    split = tmp_path / "split.json"
    split.write_text(json.dumps(
        [{"query": t.query, "ground_truth": t.ground_truth,
          "required_tags": sorted(t.required_tags),
          "substitutions": [list(p) for p in t.substitutions]} for t in tasks]))
    return skills, split


def test_structural_validation_names_each_violation():
    """Ten curated invalid graphs, each rejected with its named violation."""
    def bare(uid, layer, children=()):
        return SkillUnit(id=uid, layer=layer, content=uid,
                         children=tuple(children))

    def graph(units, hier=(), lateral=(), weights=None):
        return SkillGraph(units={u.id: u for u in units},
                          hierarchical_edges=frozenset(hier),
                          lateral_edges=frozenset(lateral),
                          edge_weights=weights if weights is not None else
                          {pair: 1.0 for pair in (*hier, *lateral)})

    valid_chain = [bare("a", 1, ["b"]), bare("b", 2)]
    cases = [
        ("edge-layer", graph([bare("a", 1), bare("c", 3)], hier=[("a", "c")])),
        ("primitive-children",
         graph([bare("p", 4, ["q"]), bare("q", 4)], hier=[("p", "q")])),
        ("cycle", graph([bare("a", 2, ["b"]), bare("b", 3, ["a"])],
                        hier=[("a", "b"), ("b", "a")])),
        ("missing-child", graph([bare("a", 2, ["ghost"])])),
        ("layer-range", graph([bare("a", 7)])),
        ("lateral-layer", graph([bare("a", 2), bare("b", 3)],
                                lateral=[("a", "b")])),
        ("weight-range", graph(valid_chain, hier=[("a", "b")],
                               weights={("a", "b"): 1.5})),
        ("weight-range", graph(valid_chain, hier=[("a", "b")],
                               weights={("a", "b"): -0.25})),
        ("child-layer", graph([bare("a", 1, ["b"]), bare("b", 3)],
                              hier=[("a", "b")])),
        ("edge-endpoint", graph([bare("a", 1)], hier=[("a", "ghost")])),
    ]
    failures = []
    for expected, bad_graph in cases:
        codes = {v.code for v in validate_graph(bad_graph)}
        if expected not in codes:
            failures.append((expected, sorted(codes)))
    report("structural validation names violations", not failures,
           f"{len(cases)} curated graphs; mismatches: {failures}")
