"""Command-line surface: init, ingest, query, evolve, inspect, simulate.

Every command with mock providers and a fixed seed is byte-reproducible.
Exit codes: 0 success, 2 configuration problems (including usage errors),
3 data problems (registries, skills files, splits), 4 provider problems.
"""

from __future__ import annotations

import argparse
import csv
import json
import random
import sys
from dataclasses import replace
from pathlib import Path

from .adaptation import ProviderError, VerifierRegistry, adapt
from .config import ConfigError, RunConfig, load_config, save_config
from .embeddings import HashingEmbedder
from .evolution import RegistryPair, Task, evaluate_objective, evolve
from .graph import (
    GraphStructureError,
    SkillUnit,
    build_edges,
    decomposition_subtree,
    empty_graph,
    validate_graph,
)
from .harness import (
    run_evolution_suite,
    run_rewrite_ablation,
    run_selection_bounds,
    run_traversal_scaling,
)
from .http_providers import ProviderConfigError, build_http_providers
from .storage import RegistryIOError, load_registry, save_registry
from .synthetic import mock_providers

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PROVIDER = 4

SIM_MODES = ("prop1", "prop2", "prop3", "ablation")


class DataError(ValueError):
    """Malformed input data: skills files, split files, unknown ids."""


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, sim=replace(cfg.sim, seed=args.seed))
    if getattr(args, "provider", None):
        cfg = replace(cfg, providers={role: args.provider for role in cfg.providers})
    return cfg


def _build_providers(cfg: RunConfig, registry: VerifierRegistry):
    if any(kind == "http" for kind in cfg.providers.values()):
        return build_http_providers(cfg, registry)
    return mock_providers(embedder=HashingEmbedder(cfg.embed_dim), registry=registry)


def _default_registry(cfg: RunConfig) -> RegistryPair:
    tiers = cfg.adaptation.tiers
    return RegistryPair(
        agent=empty_graph(cfg.graph),
        verifier=VerifierRegistry(theta_full=tiers.theta_full,
                                  theta_part=tiers.theta_part))


def _load_tasks(path: str) -> list[Task]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read split file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"split file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DataError(f"split file {path} must hold a non-empty JSON array")
    tasks = []
    for index, item in enumerate(raw):
        try:
            tasks.append(Task(
                query=str(item["query"]),
                ground_truth=str(item["ground_truth"]),
                required_tags=frozenset(str(t) for t in item.get("required_tags", [])),
                substitutions=tuple((str(a), str(b))
                                    for a, b in item.get("substitutions", []))))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"split entry {index} is malformed: {exc}") from exc
    return tasks


def _trace_payload(trace) -> dict:
    return {
        "steps": [{"unit_id": step.unit_id, "action": step.action.value,
                   "rewritten": step.rewritten, "flag": step.flag}
                  for step in trace.steps],
        "visited": trace.visited_count,
        "rewrites": trace.rewrite_count,
        "retained": sorted(trace.retained),
        "rewritten": sorted(trace.rewritten),
        "budget_exhausted": trace.budget_exhausted,
        "token_estimate": trace.token_estimate,
        "triggered": trace.triggered,
        "seed_ids": list(trace.seed_ids),
    }


def _context_payload(context) -> dict:
    return {
        "entries": [{"unit_id": e.unit_id, "layer": e.layer, "score": e.score,
                     "content": e.content} for e in context.entries],
        "token_estimate": context.token_estimate,
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_init(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out or ".")
    config_path = save_config(cfg, out / "config.json")
    registry_path = save_registry(_default_registry(cfg), out / "registry.json")
    _emit({"config": str(config_path), "registry": str(registry_path)})
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _load_run_config(args)
    try:
        raw = json.loads(Path(args.skills_file).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read skills file {args.skills_file}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"skills file {args.skills_file} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DataError("skills file must hold a JSON array of units")
    units = []
    for index, item in enumerate(raw):
        try:
            units.append(SkillUnit(
                id=str(item["id"]), layer=int(item["layer"]),
                content=str(item["content"]),
                children=tuple(str(c) for c in item.get("children", [])),
                tags=frozenset(str(t) for t in item.get("tags", []))))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"skills entry {index} is malformed: {exc}") from exc
    providers = _build_providers(cfg, _default_registry(cfg).verifier)
    try:
        graph = build_edges(units, providers.embedder, cfg.graph)
    except GraphStructureError as exc:
        raise DataError(str(exc)) from exc
    violations = validate_graph(graph)
    if violations:
        raise DataError("ingested graph is invalid: "
                        + "; ".join(f"{v.code}: {v.message}" for v in violations))
    pair = replace(_default_registry(cfg), agent=graph)
    out = Path(args.out or "registry.json")
    save_registry(pair, out)
    _emit({"registry": str(out), "units": graph.n_units,
           "hierarchical_edges": len(graph.hierarchical_edges),
           "lateral_edges": len(graph.lateral_edges)})
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _load_run_config(args)
    pair = load_registry(args.registry)
    providers = _build_providers(cfg, pair.verifier)
    context, trace = adapt(args.text, pair.agent, providers, cfg.adaptation)
    _emit({"query": args.text, "context": _context_payload(context),
           "trace": _trace_payload(trace)})
    return EXIT_OK


def cmd_evolve(args) -> int:
    cfg = _load_run_config(args)
    pair = load_registry(args.registry)
    tasks = _load_tasks(args.split_file)
    providers = _build_providers(cfg, pair.verifier)
    evo = cfg.evolution
    out_path = Path(args.out or args.registry)

    if args.select_on_validation:
        if len(tasks) < 2:
            raise DataError("validation selection needs at least two tasks")
        order = list(tasks)
        random.Random(cfg.seed).shuffle(order)
        cut = max(1, min(len(order) - 1, round(len(order) * evo.split_ratio)))
        evolution_split, validation_split = order[:cut], order[cut:]
        result = evolve(pair, evolution_split, providers,
                        max_iterations=evo.max_iterations, patience=evo.patience,
                        budget=evo.candidate_budget, cfg=cfg.adaptation,
                        cost_cfg=cfg.cost)
        validation_scores = [
            evaluate_objective(candidate, validation_split, providers,
                               cfg.cost, cfg.adaptation).J
            for candidate in result.committed]
        best = max(range(len(validation_scores)), key=lambda i: (validation_scores[i], -i))
        chosen = result.committed[best]
        save_registry(chosen, out_path)
        _emit({"history": list(result.history),
               "validation_scores": validation_scores,
               "selected_iteration": best,
               "evolution_tasks": len(evolution_split),
               "validation_tasks": len(validation_split),
               "registry": str(out_path)})
        return EXIT_OK

    result = evolve(pair, tasks, providers, max_iterations=evo.max_iterations,
                    patience=evo.patience, budget=evo.candidate_budget,
                    cfg=cfg.adaptation, cost_cfg=cfg.cost)
    save_registry(result.pair, out_path)
    _emit({"history": list(result.history),
           "iterations": len(result.history) - 1,
           "final_version": result.pair.version,
           "registry": str(out_path)})
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = _load_run_config(args)
    del cfg  # config only validates flags here; inspection is read-only
    pair = load_registry(args.registry)
    graph = pair.agent
    if args.unit_id not in graph.units:
        raise DataError(f"unknown unit id {args.unit_id!r}")
    unit = graph.units[args.unit_id]
    edges = []
    for (a, b) in sorted(graph.hierarchical_edges):
        if args.unit_id in (a, b):
            edges.append({"kind": "hierarchical", "from": a, "to": b,
                          "weight": graph.edge_weights.get((a, b))})
    for (a, b) in sorted(graph.lateral_edges):
        if args.unit_id in (a, b):
            edges.append({"kind": "lateral", "from": a, "to": b,
                          "weight": graph.edge_weights.get((a, b))})
    view = decomposition_subtree(graph, args.unit_id)
    _emit({"unit": {"id": unit.id, "layer": unit.layer, "content": unit.content,
                    "children": list(unit.children), "tags": sorted(unit.tags),
                    "has_embedding": unit.embedding is not None},
           "parents": graph.parents_of(args.unit_id),
           "edges": edges,
           "subtree": {"size": view.size, "branching": view.branching,
                       "depth": view.depth}})
    return EXIT_OK


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out or "sim_out")
    sim = cfg.sim
    if args.trials:
        sim = replace(sim, trials=args.trials)
    if args.sizes:
        try:
            sizes = tuple(int(x) for x in args.sizes.split(","))
        except ValueError as exc:
            raise ConfigError(f"--sizes must be comma-separated integers: {exc}") from exc
        sim = replace(sim, tree_sizes=sizes)

    if args.mode == "prop1":
        _, rows, summary = run_traversal_scaling(sim)
        columns = ["size", "depth", "trials", "mean_visited", "max_visited",
                   "mean_rewrites", "max_rewrites", "series_bound",
                   "rewrites_bounded"]
    elif args.mode == "prop2":
        runs = args.runs or 20
        iterations = args.iters or cfg.evolution.max_iterations
        _, rows, summary = run_evolution_suite(runs=runs, iterations=iterations,
                                               seed=cfg.seed,
                                               budget=cfg.evolution.candidate_budget)
        columns = ["run", "iteration", "J"]
    elif args.mode == "prop3":
        rows, summary = run_selection_bounds(instances=args.instances or 1000,
                                             seed=cfg.seed or 12345)
        columns = ["instance", "candidates", "k", "eps", "opt", "greedy",
                   "floor", "ok"]
    elif args.mode == "ablation":
        ablation_sim = sim if args.tasks is None else replace(sim, task_count=args.tasks)
        rows, summary = run_rewrite_ablation(seed=cfg.seed, sim=ablation_sim)
        columns = ["task", "mode", "coverage", "rewrites", "visited",
                   "context_units"]
    else:
        raise ConfigError(f"unknown simulate mode {args.mode!r}; expected {SIM_MODES}")

    csv_path = out / f"{args.mode}.csv"
    _write_csv(csv_path, rows, columns)
    summary_path = out / f"{args.mode}_summary.txt"
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.write_text(summary + "\n", encoding="utf-8")
    print(summary)
    print(f"rows: {len(rows)} -> {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillgraph",
        description="Hierarchical skill-context engine: ingest skill libraries, "
                    "compose query contexts, evolve registries, run simulations.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a run-config JSON file")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--provider", choices=("mock", "http"),
                        help="force every provider role to this kind")

    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", parents=[common],
                            help="scaffold config.json and an empty registry")
    p_init.add_argument("--out", help="target directory (default: .)")
    p_init.set_defaults(func=cmd_init)

    p_ingest = sub.add_parser("ingest", parents=[common],
                              help="build a registry from a JSON skills file")
    p_ingest.add_argument("skills_file")
    p_ingest.add_argument("--out", help="registry output path (default: registry.json)")
    p_ingest.set_defaults(func=cmd_ingest)

    p_query = sub.add_parser("query", parents=[common],
                             help="compose a skill context for one query")
    p_query.add_argument("text")
    p_query.add_argument("--registry", default="registry.json")
    p_query.set_defaults(func=cmd_query)

    p_evolve = sub.add_parser("evolve", parents=[common],
                              help="refine the registries on a task split")
    p_evolve.add_argument("split_file")
    p_evolve.add_argument("--registry", default="registry.json")
    p_evolve.add_argument("--out", help="where to save the refined registry "
                                        "(default: overwrite --registry)")
    p_evolve.add_argument("--select-on-validation", action="store_true",
                          help="evolve on a 7:3 evolution/validation split and "
                               "keep the validation-best committed pair")
    p_evolve.set_defaults(func=cmd_evolve)

    p_inspect = sub.add_parser("inspect", parents=[common],
                               help="show one unit, its edges, and subtree stats")
    p_inspect.add_argument("unit_id")
    p_inspect.add_argument("--registry", default="registry.json")
    p_inspect.set_defaults(func=cmd_inspect)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="run a measurement harness and emit CSV + summary")
    p_sim.add_argument("mode", choices=SIM_MODES)
    p_sim.add_argument("--out", help="output directory (default: sim_out)")
    p_sim.add_argument("--trials", type=int, help="traversal trials per size")
    p_sim.add_argument("--sizes", help="comma-separated tree sizes")
    p_sim.add_argument("--runs", type=int, help="evolution runs")
    p_sim.add_argument("--iters", type=int, help="evolution iterations per run")
    p_sim.add_argument("--instances", type=int, help="selection-bound instances")
    p_sim.add_argument("--tasks", type=int, help="ablation task count")
    p_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, RegistryIOError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ProviderConfigError, ProviderError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
