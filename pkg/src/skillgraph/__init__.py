"""Hierarchical skill-context engine.

Skills live in a four-layer graph (Policy, Strategy, Procedure, Primitive).
Queries retrieve seed units by embedding similarity, spread relevance with a
degree-corrected restart walk, partition candidates into compatibility
tiers, and walk partially relevant subtrees under a routing verifier that
accepts, decomposes, rewrites, or skips each unit. Failed runs produce gap
reports that drive coupled refinement of the skill registry and the routing
registry, with a do-nothing fallback keeping the objective non-decreasing.
"""

from .adaptation import (
    AdaptationConfig,
    AdaptationTrace,
    CostConfig,
    ProviderBundle,
    RoutingAction,
    RoutingRule,
    RuleVerifier,
    SkillContext,
    SubstitutionWriter,
    VerifierRegistry,
    adapt,
    adaptation_cost,
    compose,
    retrieve_candidates,
    route,
    should_trigger,
    traverse,
)
from .embeddings import HashingEmbedder, cosine_similarity
from .evolution import (
    GapReport,
    MechanicalWriter,
    ObjectiveValue,
    RegistryPair,
    Task,
    apply_verifier_edit,
    build_gap_report,
    evaluate_objective,
    evolve,
    evolve_step,
    induce_agent_registry,
    propose_edits,
)
from .graph import (
    EditOperation,
    EditRejected,
    GraphConfig,
    SkillGraph,
    SkillUnit,
    Violation,
    apply_edit,
    build_edges,
    decomposition_subtree,
    empty_graph,
    validate_graph,
)
from .oracle import (
    ErrorEstimates,
    brute_force_select,
    greedy_select,
    measure_errors,
    measure_visited,
    rwr_linear_solve,
)
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
from .storage import load_registry, save_registry
from .synthetic import (
    SimConfig,
    coverage_utility,
    gen_synthetic_library,
    gen_tasks,
    make_scripted_verifier,
    mock_providers,
    rewrite_gain,
)

__version__ = "0.1.0"
