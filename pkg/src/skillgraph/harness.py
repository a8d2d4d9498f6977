"""Experiment harnesses behind the ``simulate`` CLI and the acceptance suite.

Each harness returns ``(rows, summary)``: rows are flat dicts ready for CSV
emission (schemas in the README), the summary is a short text block. All
randomness derives from one seed per run, so every harness is reproducible
byte for byte.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace

from .adaptation import (
    AdaptationConfig,
    CostConfig,
    SubstitutionWriter,
    VerifierRegistry,
    compose,
    retrieve_candidates,
    traverse,
)
from .embeddings import HashingEmbedder
from .evolution import RegistryPair, Task, evolve
from .graph import SkillUnit
from .oracle import VisitStats, brute_force_select, greedy_select, measure_visited
from .retrieval import RwrConfig
from .storage import fingerprint
from .synthetic import (
    OracleVerifier,
    ParentOnlyVerifier,
    RewriteAllVerifier,
    SimConfig,
    context_coverage,
    gen_synthetic_library,
    gen_tasks,
    mock_providers,
)

GREEDY_FLOOR = 1.0 - 1.0 / math.e

EVOLUTION_SIM = SimConfig(layer_sizes=(1, 3, 6, 12), tag_vocab=10, mismatch_tags=3,
                          task_count=4, embed_dim=64, substitution_rate=0.5,
                          impossible_rate=0.25)

EVOLUTION_ADAPTATION = AdaptationConfig(
    seed_count=4,
    rwr=RwrConfig(alpha=0.3, beta=0.5, tol=1e-6, max_iters=300))

ABLATION_SIM = SimConfig(layer_sizes=(2, 4, 8, 16), tag_vocab=12, mismatch_tags=4,
                         task_count=12, embed_dim=64, substitution_rate=0.7,
                         impossible_rate=0.0, keep_prob=0.5)


# ---------------------------------------------------------------------------
# evolution runs (objective monotonicity and fixed points)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvolutionRunRecord:
    run: int
    history: tuple[float, ...]
    fingerprints: tuple[str, ...]


def evolution_setup(seed: int, sim: SimConfig = EVOLUTION_SIM):
    """Library, tasks, providers, and an initial pair for one seeded run."""
    sim = replace(sim, seed=seed)
    embedder = HashingEmbedder(sim.embed_dim)
    graph = gen_synthetic_library(sim, embedder)
    tasks = gen_tasks(sim, graph)
    providers = mock_providers(embedder=embedder)
    pair = RegistryPair(agent=graph, verifier=VerifierRegistry())
    return graph, tasks, providers, pair


def run_evolution_suite(runs: int = 100, iterations: int = 20, seed: int = 0,
                        sim: SimConfig = EVOLUTION_SIM, budget: int = 6,
                        patience: int | None = None,
                        cfg: AdaptationConfig = EVOLUTION_ADAPTATION,
                        cost_cfg: CostConfig = CostConfig()
                        ) -> tuple[list[EvolutionRunRecord], list[dict], str]:
    """Seeded synthetic evolution runs with per-iteration objective values.

    ``patience`` defaults to the iteration count so plateaued runs keep
    committing (and re-checking) the fallback instead of stopping early.
    """
    patience = iterations if patience is None else patience
    records: list[EvolutionRunRecord] = []
    rows: list[dict] = []
    for run in range(runs):
        _, tasks, providers, pair = evolution_setup(seed + run, sim)
        result = evolve(pair, tasks, providers, max_iterations=iterations,
                        patience=patience, budget=budget, cfg=cfg, cost_cfg=cost_cfg)
        prints = tuple(fingerprint(p) for p in result.committed)
        records.append(EvolutionRunRecord(run=run, history=result.history,
                                          fingerprints=prints))
        for iteration, value in enumerate(result.history):
            rows.append({"run": run, "iteration": iteration, "J": value})
    monotone = sum(1 for r in records
                   if all(b >= a for a, b in zip(r.history, r.history[1:])))
    improved = sum(1 for r in records if r.history[-1] > r.history[0])
    summary = "\n".join([
        f"evolution runs: {len(records)} (iterations <= {iterations}, budget {budget})",
        f"monotone histories: {monotone}/{len(records)}",
        f"runs with strict improvement: {improved}/{len(records)}",
        f"mean final J: {math.fsum(r.history[-1] for r in records) / len(records):.4f}",
    ])
    return records, rows, summary


# ---------------------------------------------------------------------------
# traversal scaling
# ---------------------------------------------------------------------------

def run_traversal_scaling(sim: SimConfig | None = None) -> tuple[list[VisitStats], list[dict], str]:
    sim = sim if sim is not None else SimConfig()
    stats = measure_visited(sim)
    rows = [{
        "size": s.size, "depth": s.depth, "trials": s.trials,
        "mean_visited": s.mean_visited, "max_visited": s.max_visited,
        "mean_rewrites": s.mean_rewrites, "max_rewrites": s.max_rewrites,
        "series_bound": s.series_bound, "rewrites_bounded": int(s.rewrites_bounded),
    } for s in stats]
    lines = [f"traversal scaling: rho={sim.decompose_prob} b={sim.branching} "
             f"trials={sim.trials}"]
    for s in stats:
        lines.append(
            f"  n={s.size:>6}  mean visited {s.mean_visited:6.3f} "
            f"(max {s.max_visited}), mean rewrites {s.mean_rewrites:6.3f}, "
            f"series bound {s.series_bound:.3f}")
    if len(stats) > 1 and stats[0].mean_visited > 0:
        growth = stats[-1].mean_visited / stats[0].mean_visited
        lines.append(f"  growth smallest -> largest: {growth:.3f}x")
    return stats, rows, "\n".join(lines)


# ---------------------------------------------------------------------------
# selection bounds (greedy vs exhaustive optimum)
# ---------------------------------------------------------------------------

def _random_instance(rng: random.Random, max_candidates: int = 12):
    vocab = [f"t{j:02d}" for j in range(rng.randint(6, 10))]
    required = frozenset(rng.sample(vocab, rng.randint(3, min(6, len(vocab)))))
    units = []
    for j in range(rng.randint(3, max_candidates)):
        tags = frozenset(rng.sample(vocab, rng.randint(1, 3)))
        units.append(SkillUnit(id=f"u{j:02d}", layer=4, content=f"unit u{j:02d}",
                               tags=tags))
    k = rng.randint(2, 4)
    task = Task(query=f"instance {rng.random():.6f}",
                ground_truth=" ".join(sorted(required)), required_tags=required)
    return task, units, k


def run_selection_bounds(instances: int = 1000, seed: int = 12345,
                         noise_levels: tuple[float, ...] = (0.0, 0.01, 0.05),
                         max_candidates: int = 12) -> tuple[list[dict], str]:
    """Greedy selection against the exhaustive optimum, exact and noisy.

    With exact gains the greedy value must reach ``(1 - 1/e) * OPT``; with
    bounded per-evaluation noise ``eps`` the floor relaxes by ``2 * K * eps``.
    """
    rng = random.Random(seed)
    rows: list[dict] = []
    ok_counts: dict[float, int] = {eps: 0 for eps in noise_levels}
    for index in range(instances):
        task, units, k = _random_instance(rng, max_candidates)
        _, opt_value = brute_force_select(task, units, k)
        for noise_index, eps in enumerate(noise_levels):
            if eps == 0.0:
                estimator = None
            else:
                noise_rng = random.Random(f"{seed}:{index}:{noise_index}")

                def estimator(t, chosen_ids, unit, _rng=noise_rng, _eps=eps):
                    covered = set()
                    for cid in chosen_ids:
                        covered |= next(u.tags for u in units if u.id == cid)
                    exact = (len((unit.tags & t.required_tags) - covered)
                             / len(t.required_tags))
                    return exact + _rng.uniform(-_eps, _eps)

            _, achieved = greedy_select(task, units, k, estimator)
            floor = GREEDY_FLOOR * opt_value - 2.0 * k * eps
            ok = achieved >= floor - 1e-12
            ok_counts[eps] += ok
            rows.append({"instance": index, "candidates": len(units), "k": k,
                         "eps": eps, "opt": opt_value, "greedy": achieved,
                         "floor": floor, "ok": int(ok)})
    lines = [f"selection bounds: {instances} instances, <= {max_candidates} candidates"]
    for eps in noise_levels:
        share = ok_counts[eps] / instances
        lines.append(f"  eps={eps:<5} floor met in {ok_counts[eps]}/{instances} "
                     f"({share:.1%})")
    return rows, "\n".join(lines)


# ---------------------------------------------------------------------------
# rewrite-strategy ablation
# ---------------------------------------------------------------------------

ABLATION_MODES = ("selective", "parent-only", "rewrite-all")


def run_rewrite_ablation(seed: int = 0, sim: SimConfig = ABLATION_SIM
                         ) -> tuple[list[dict], str]:
    """Selective drill-down versus parent-only and rewrite-all strategies.

    All three modes share the same retrieval stage per task, so differences
    isolate the traversal policy: achieved coverage and rewrite counts.
    """
    sim = replace(sim, seed=seed)
    embedder = HashingEmbedder(sim.embed_dim)
    graph = gen_synthetic_library(sim, embedder)
    tasks = gen_tasks(sim, graph)
    cfg = AdaptationConfig(seed_count=4, max_visited=10 ** 6, max_rewrites=10 ** 6,
                           rwr=RwrConfig(alpha=0.3, beta=0.5, tol=1e-6, max_iters=300))
    rows: list[dict] = []
    for index, task in enumerate(tasks):
        _, scores, parts = retrieve_candidates(task.query, graph, embedder, cfg)
        roots = sorted(parts.partial,
                       key=lambda uid: (-scores.entries.get(uid, 0.0), uid))
        writer = SubstitutionWriter(task.substitutions)
        for mode in ABLATION_MODES:
            if mode == "selective":
                verifier = OracleVerifier(graph, task)
            elif mode == "parent-only":
                verifier = ParentOnlyVerifier()
            else:
                verifier = RewriteAllVerifier(roots)
            trace = traverse(graph, roots, verifier, writer, task.query, cfg,
                             scores=scores)
            context = compose(parts.full, trace, scores, graph)
            coverage = context_coverage(task, context, trace.rewritten, graph)
            rows.append({"task": index, "mode": mode, "coverage": coverage,
                         "rewrites": trace.rewrite_count,
                         "visited": trace.visited_count,
                         "context_units": len(context.entries)})
    lines = ["rewrite-strategy ablation (oracle utilities)"]
    for mode in ABLATION_MODES:
        mode_rows = [r for r in rows if r["mode"] == mode]
        mean_cov = math.fsum(r["coverage"] for r in mode_rows) / len(mode_rows)
        total_rw = sum(r["rewrites"] for r in mode_rows)
        total_vis = sum(r["visited"] for r in mode_rows)
        lines.append(f"  {mode:<12} mean coverage {mean_cov:.3f}, "
                     f"rewrites {total_rw}, visited {total_vis}")
    return rows, "\n".join(lines)
