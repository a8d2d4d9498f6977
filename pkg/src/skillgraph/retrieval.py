"""Seed retrieval, degree-corrected random walk with restart, and tier partition.

The walk treats both edge families as traversable in either direction, so
seed mass on fine units can surface coarse ancestors and vice versa. Flow
into a node is penalized by its total weighted degree raised to ``beta``,
which damps collapse into dense similarity clusters; ``beta = 0`` recovers
the standard restart walk. All operations are pure functions of their
inputs and safe to call concurrently across queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embeddings import (  # noqa: F401  (re-exported provider surface)
    DEFAULT_EMBED_DIM,
    EmbeddingProvider,
    HashingEmbedder,
    clamped_cosine,
    cosine_similarity,
    is_sentinel,
)
from .graph import SkillGraph


@dataclass(frozen=True)
class SeedDistribution:
    """Restart distribution over unit ids; masses are nonnegative and sum to 1."""

    entries: dict[str, float]
    query: str = ""

    def total(self) -> float:
        return math.fsum(self.entries.values())


@dataclass(frozen=True)
class RwrConfig:
    alpha: float = 0.15   # restart probability
    beta: float = 0.5     # degree-correction exponent
    tol: float = 1e-8     # sup-norm convergence tolerance
    max_iters: int = 200

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")


@dataclass(frozen=True)
class ScoreVector:
    """Walk scores per unit plus solver diagnostics."""

    entries: dict[str, float]
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True

    def max_score(self) -> float:
        return max(self.entries.values(), default=0.0)


@dataclass(frozen=True)
class TierThresholds:
    """Per-query relative thresholds on the top score; scale-invariant by design."""

    theta_full: float = 0.7
    theta_part: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_part < self.theta_full <= 1.0:
            raise ValueError(
                f"need 0 < theta_part < theta_full <= 1, got "
                f"({self.theta_full}, {self.theta_part})")


@dataclass(frozen=True)
class CompatibilityPartition:
    """Three disjoint tiers covering every candidate with nonzero score."""

    full: frozenset[str]
    partial: frozenset[str]
    mismatched: frozenset[str]
    thresholds: TierThresholds


def seed_retrieve(query: str, graph: SkillGraph, k: int,
                  embedder: EmbeddingProvider) -> SeedDistribution:
    """Top-``k`` units by clamped cosine to the query, mass proportional to similarity.

    Ties break by id. When every similarity is zero the mass falls back to
    uniform over the ``k`` lexicographically smallest ids.
    """
    if k <= 0:
        raise ValueError(f"seed count must be positive, got {k}")
    if graph.is_empty():
        raise ValueError("cannot retrieve seeds from an empty graph")
    query_vec = embedder.embed(query)
    sims: list[tuple[float, str]] = []
    for uid in graph.ids():
        emb = graph.units[uid].embedding
        sim = 0.0 if emb is None else clamped_cosine(query_vec, np.asarray(emb))
        sims.append((sim, uid))
    sims.sort(key=lambda pair: (-pair[0], pair[1]))
    top = sims[:k]
    total = math.fsum(sim for sim, _ in top)
    if total <= 0.0:
        fallback = sorted(uid for _, uid in sims)[:k]
        return SeedDistribution(entries={uid: 1.0 / len(fallback) for uid in fallback},
                                query=query)
    entries = {uid: sim / total for sim, uid in top if sim > 0.0}
    return SeedDistribution(entries=entries, query=query)


def build_transition(graph: SkillGraph, beta: float):
    """Row-stochastic transition structure shared by the walk and its oracle.

    Returns ``(ids, P, dangling)`` where ``P[i, j]`` is the normalized mass
    from unit ``i`` to ``j`` and ``dangling`` marks rows with no outgoing
    mass; callers route those rows' full mass to the restart distribution.
    Raw mass is ``weight / deg(target) ** beta`` with ``deg`` the total
    weighted degree, applied in both directions of every edge.
    """
    def _build():
        ids = graph.ids()
        index = {uid: i for i, uid in enumerate(ids)}
        n = len(ids)
        deg = np.zeros(n)
        edges = []
        # Sorted iteration keeps the float accumulation order fixed, so scores
        # are byte-identical across processes regardless of hash seeding.
        for (a, b) in sorted(graph.hierarchical_edges | graph.lateral_edges):
            w = graph.edge_weights.get((a, b), 0.0)
            ia, ib = index[a], index[b]
            deg[ia] += w
            deg[ib] += w
            edges.append((ia, ib, w))
        mass = np.zeros((n, n))
        for ia, ib, w in edges:
            if w <= 0.0:
                continue
            mass[ia, ib] += w / deg[ib] ** beta
            mass[ib, ia] += w / deg[ia] ** beta
        out = mass.sum(axis=1)
        dangling = out <= 0.0
        p = np.zeros_like(mass)
        np.divide(mass, out[:, None], out=p, where=~dangling[:, None])
        return ids, p, dangling

    return graph.cached(("transition", float(beta)), _build)


def seed_vector(ids: list[str], p0: SeedDistribution) -> np.ndarray:
    vec = np.zeros(len(ids))
    index = {uid: i for i, uid in enumerate(ids)}
    for uid, mass in p0.entries.items():
        if uid not in index:
            raise KeyError(f"seed unit {uid!r} is not in the graph")
        vec[index[uid]] = mass
    return vec


def degree_corrected_rwr(graph: SkillGraph, p0: SeedDistribution,
                         cfg: RwrConfig = RwrConfig()) -> ScoreVector:
    """Fixed point of ``s <- (1 - alpha) * P_hat^T s + alpha * p0`` by power iteration.

    Dangling rows teleport their mass to ``p0``. Non-convergence within
    ``max_iters`` is reported through the ``converged`` flag, never raised.
    """
    ids, p, dangling = build_transition(graph, cfg.beta)
    p0_vec = seed_vector(ids, p0)
    alpha = cfg.alpha
    s = p0_vec.copy()
    residual = 0.0
    iterations = 0
    converged = False
    for iterations in range(1, cfg.max_iters + 1):
        dangling_mass = float(s[dangling].sum())
        s_next = (1.0 - alpha) * (p.T @ s + dangling_mass * p0_vec) + alpha * p0_vec
        residual = float(np.max(np.abs(s_next - s)))
        s = s_next
        if residual <= cfg.tol:
            converged = True
            break
    entries = {uid: float(s[i]) for i, uid in enumerate(ids)}
    return ScoreVector(entries=entries, iterations=iterations,
                       residual=residual, converged=converged)


def partition(scores: ScoreVector,
              cfg: TierThresholds = TierThresholds()) -> CompatibilityPartition:
    """Split nonzero-scored candidates into full / partial / mismatched tiers.

    Thresholds are relative to the top score, so scaling every score by a
    positive constant leaves the partition unchanged.
    """
    if not scores.entries:
        raise ValueError("cannot partition an empty score vector")
    s_max = scores.max_score()
    full: set[str] = set()
    partial: set[str] = set()
    mismatched: set[str] = set()
    for uid, score in scores.entries.items():
        if score <= 0.0:
            continue
        if score >= cfg.theta_full * s_max:
            full.add(uid)
        elif score >= cfg.theta_part * s_max:
            partial.add(uid)
        else:
            mismatched.add(uid)
    return CompatibilityPartition(full=frozenset(full), partial=frozenset(partial),
                                  mismatched=frozenset(mismatched), thresholds=cfg)
