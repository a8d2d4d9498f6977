"""Run configuration: one JSON file covering every module's knobs.

Cross-field constraints (tier threshold ordering, decompose probability
times branching below one) are enforced at load so misconfiguration fails
before any work starts. The API key is named by environment variable and
never stored in files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .adaptation import AdaptationConfig, CostConfig
from .embeddings import DEFAULT_EMBED_DIM
from .graph import GraphConfig
from .retrieval import RwrConfig, TierThresholds
from .synthetic import SimConfig

PROVIDER_ROLES = ("embedder", "verifier", "writer", "agent")
PROVIDER_KINDS = ("mock", "http")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class EvolutionConfig:
    candidate_budget: int = 16
    max_iterations: int = 10
    patience: int = 3
    split_ratio: float = 0.7  # evolution : validation

    def __post_init__(self) -> None:
        if self.candidate_budget < 1 or self.max_iterations < 1 or self.patience < 1:
            raise ValueError("evolution budgets and iteration counts must be positive")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")


@dataclass(frozen=True)
class HttpConfig:
    base_url: str = ""
    model: str = ""
    api_key_env: str = "SKILLGRAPH_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.timeout <= 0 or self.max_retries < 1 or self.backoff < 0:
            raise ValueError("http timeout/retry settings must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    embed_dim: int = DEFAULT_EMBED_DIM
    graph: GraphConfig = GraphConfig()
    adaptation: AdaptationConfig = AdaptationConfig()
    cost: CostConfig = CostConfig()
    evolution: EvolutionConfig = EvolutionConfig()
    sim: SimConfig = SimConfig()
    providers: dict = field(default_factory=lambda: {role: "mock" for role in PROVIDER_ROLES})
    http: HttpConfig = HttpConfig()


def _threshold_from_json(value) -> float:
    # null means "always trigger": the gate threshold sits at +infinity.
    return math.inf if value is None else float(value)


def _threshold_to_json(value: float):
    return None if math.isinf(value) else value


def config_to_dict(cfg: RunConfig) -> dict:
    adaptation = cfg.adaptation
    return {
        "seed": cfg.seed,
        "embed_dim": cfg.embed_dim,
        "graph": {"w_parent_child": cfg.graph.w_parent_child,
                  "w_sibling": cfg.graph.w_sibling},
        "adaptation": {
            "trigger_threshold": _threshold_to_json(adaptation.trigger_threshold),
            "max_visited": adaptation.max_visited,
            "max_rewrites": adaptation.max_rewrites,
            "seed_count": adaptation.seed_count,
            "theta_full": adaptation.tiers.theta_full,
            "theta_part": adaptation.tiers.theta_part,
            "rwr": {"alpha": adaptation.rwr.alpha, "beta": adaptation.rwr.beta,
                    "tol": adaptation.rwr.tol, "max_iters": adaptation.rwr.max_iters},
        },
        "cost": {"lam": cfg.cost.lam, "token_budget": cfg.cost.token_budget},
        "evolution": {"candidate_budget": cfg.evolution.candidate_budget,
                      "max_iterations": cfg.evolution.max_iterations,
                      "patience": cfg.evolution.patience,
                      "split_ratio": cfg.evolution.split_ratio},
        "sim": {
            "seed": cfg.sim.seed,
            "layer_sizes": list(cfg.sim.layer_sizes),
            "branching": cfg.sim.branching,
            "decompose_prob": cfg.sim.decompose_prob,
            "trials": cfg.sim.trials,
            "tree_sizes": list(cfg.sim.tree_sizes),
            "tag_vocab": cfg.sim.tag_vocab,
            "mismatch_tags": cfg.sim.mismatch_tags,
            "mismatch_rate": cfg.sim.mismatch_rate,
            "keep_prob": cfg.sim.keep_prob,
            "embed_dim": cfg.sim.embed_dim,
            "task_count": cfg.sim.task_count,
            "substitution_rate": cfg.sim.substitution_rate,
            "impossible_rate": cfg.sim.impossible_rate,
        },
        "providers": dict(cfg.providers),
        "http": {"base_url": cfg.http.base_url, "model": cfg.http.model,
                 "api_key_env": cfg.http.api_key_env, "timeout": cfg.http.timeout,
                 "max_retries": cfg.http.max_retries, "backoff": cfg.http.backoff},
    }


def config_from_dict(raw: dict) -> RunConfig:
    try:
        graph_raw = raw.get("graph", {})
        adapt_raw = raw.get("adaptation", {})
        rwr_raw = adapt_raw.get("rwr", {})
        cost_raw = raw.get("cost", {})
        evo_raw = raw.get("evolution", {})
        sim_raw = raw.get("sim", {})
        http_raw = raw.get("http", {})
        providers = {role: "mock" for role in PROVIDER_ROLES}
        providers.update({str(k): str(v) for k, v in raw.get("providers", {}).items()})
        for role, kind in providers.items():
            if role not in PROVIDER_ROLES:
                raise ValueError(f"unknown provider role {role!r}")
            if kind not in PROVIDER_KINDS:
                raise ValueError(f"provider for {role!r} must be mock or http, got {kind!r}")
        cfg = RunConfig(
            seed=int(raw.get("seed", 0)),
            embed_dim=int(raw.get("embed_dim", DEFAULT_EMBED_DIM)),
            graph=GraphConfig(
                w_parent_child=float(graph_raw.get("w_parent_child", 1.0)),
                w_sibling=float(graph_raw.get("w_sibling", 0.5))),
            adaptation=AdaptationConfig(
                trigger_threshold=_threshold_from_json(adapt_raw.get("trigger_threshold")),
                max_visited=int(adapt_raw.get("max_visited", 64)),
                max_rewrites=int(adapt_raw.get("max_rewrites", 8)),
                seed_count=int(adapt_raw.get("seed_count", 5)),
                tiers=TierThresholds(
                    theta_full=float(adapt_raw.get("theta_full", 0.7)),
                    theta_part=float(adapt_raw.get("theta_part", 0.2))),
                rwr=RwrConfig(
                    alpha=float(rwr_raw.get("alpha", 0.15)),
                    beta=float(rwr_raw.get("beta", 0.5)),
                    tol=float(rwr_raw.get("tol", 1e-8)),
                    max_iters=int(rwr_raw.get("max_iters", 200)))),
            cost=CostConfig(lam=float(cost_raw.get("lam", 0.1)),
                            token_budget=int(cost_raw.get("token_budget", 8192))),
            evolution=EvolutionConfig(
                candidate_budget=int(evo_raw.get("candidate_budget", 16)),
                max_iterations=int(evo_raw.get("max_iterations", 10)),
                patience=int(evo_raw.get("patience", 3)),
                split_ratio=float(evo_raw.get("split_ratio", 0.7))),
            sim=SimConfig(
                seed=int(sim_raw.get("seed", 0)),
                layer_sizes=tuple(int(x) for x in sim_raw.get("layer_sizes", (2, 4, 8, 16))),
                branching=int(sim_raw.get("branching", 2)),
                decompose_prob=float(sim_raw.get("decompose_prob", 0.25)),
                trials=int(sim_raw.get("trials", 1000)),
                tree_sizes=tuple(int(x) for x in sim_raw.get("tree_sizes", (63, 1023, 65535))),
                tag_vocab=int(sim_raw.get("tag_vocab", 12)),
                mismatch_tags=int(sim_raw.get("mismatch_tags", 4)),
                mismatch_rate=float(sim_raw.get("mismatch_rate", 0.35)),
                keep_prob=float(sim_raw.get("keep_prob", 0.7)),
                embed_dim=int(sim_raw.get("embed_dim", 64)),
                task_count=int(sim_raw.get("task_count", 5)),
                substitution_rate=float(sim_raw.get("substitution_rate", 0.5)),
                impossible_rate=float(sim_raw.get("impossible_rate", 0.25))),
            providers=providers,
            http=HttpConfig(
                base_url=str(http_raw.get("base_url", "")),
                model=str(http_raw.get("model", "")),
                api_key_env=str(http_raw.get("api_key_env", "SKILLGRAPH_API_KEY")),
                timeout=float(http_raw.get("timeout", 30.0)),
                max_retries=int(http_raw.get("max_retries", 3)),
                backoff=float(http_raw.get("backoff", 0.5))))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if cfg.sim.decompose_prob * cfg.sim.branching >= 1.0:
        raise ConfigError(
            "sim.decompose_prob * sim.branching must stay below 1 "
            f"(got {cfg.sim.decompose_prob} * {cfg.sim.branching})")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path
