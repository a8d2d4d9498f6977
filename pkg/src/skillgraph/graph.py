"""Layered skill units, the weighted skill graph, and the registry edit operators.

Skills live on four abstraction layers (1=Policy, 2=Strategy, 3=Procedure,
4=Primitive). Hierarchical edges connect adjacent layers along each unit's
ordered children; lateral edges connect siblings that share a parent. Every
edge weight combines a semantic term (clamped embedding cosine) with a
structural factor, so all weights are usable as nonnegative walk masses.

Graphs are immutable values: :func:`apply_edit` returns a new graph and never
mutates its input, which makes concurrent read-only queries safe by
construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .embeddings import EmbeddingProvider, clamped_cosine

LAYER_MIN = 1
LAYER_MAX = 4
LAYER_NAMES = {1: "Policy", 2: "Strategy", 3: "Procedure", 4: "Primitive"}

MERGE_SEPARATOR = "\n\n"

OP_ADD = "add"
OP_DELETE = "delete"
OP_UPDATE = "update"
OP_MERGE = "merge"
EDIT_OPS = (OP_ADD, OP_DELETE, OP_UPDATE, OP_MERGE)


@dataclass(frozen=True)
class SkillUnit:
    """One node of the skill hierarchy.

    ``children`` is an ordered tuple of unit ids one layer below; primitives
    (layer 4) have none. ``tags`` are capability labels consumed by the
    synthetic utilities, and ``embedding`` is an optional fixed-dimension
    vector stored as a plain tuple so units stay hashable and serializable.
    """

    id: str
    layer: int
    content: str
    children: tuple[str, ...] = ()
    tags: frozenset[str] = frozenset()
    embedding: tuple[float, ...] | None = None


@dataclass(frozen=True)
class GraphConfig:
    """Structural edge factors; the semantic term is the clamped cosine."""

    w_parent_child: float = 1.0
    w_sibling: float = 0.5

    def __post_init__(self) -> None:
        for name in ("w_parent_child", "w_sibling"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class Violation:
    """One broken structural invariant, naming the offending unit ids."""

    code: str
    message: str
    unit_ids: tuple[str, ...] = ()


ValidationReport = list  # list[Violation]; empty iff the graph is valid


class GraphStructureError(ValueError):
    """Raised when a build input is structurally unusable (e.g. missing child id)."""


class EditRejected(ValueError):
    """Raised when an edit would break a structural invariant."""

    def __init__(self, violation: str, message: str) -> None:
        super().__init__(f"{violation}: {message}")
        self.violation = violation


@dataclass(frozen=True)
class SkillGraph:
    """Immutable skill registry: units plus weighted hierarchical/lateral edges.

    ``edge_weights`` covers both edge families; lateral keys are normalized to
    ``(min_id, max_id)``. The private cache holds derived matrices keyed per
    graph instance and never participates in equality.
    """

    units: dict[str, SkillUnit]
    hierarchical_edges: frozenset[tuple[str, str]]
    lateral_edges: frozenset[tuple[str, str]]
    edge_weights: dict[tuple[str, str], float]
    cfg: GraphConfig = GraphConfig()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def ids(self) -> list[str]:
        return sorted(self.units)

    def unit(self, unit_id: str) -> SkillUnit:
        try:
            return self.units[unit_id]
        except KeyError:
            raise KeyError(f"unknown unit id {unit_id!r}") from None

    def parents_of(self, unit_id: str) -> list[str]:
        return sorted(p for (p, c) in self.hierarchical_edges if c == unit_id)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def is_empty(self) -> bool:
        return not self.units

    def cached(self, key, builder: Callable):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]


def empty_graph(cfg: GraphConfig = GraphConfig()) -> SkillGraph:
    return SkillGraph(units={}, hierarchical_edges=frozenset(),
                      lateral_edges=frozenset(), edge_weights={}, cfg=cfg)


def _semantic_similarity(a: SkillUnit, b: SkillUnit) -> float:
    # Units without embeddings fall back to the pure structural weight.
    if a.embedding is None or b.embedding is None:
        return 1.0
    return clamped_cosine(np.asarray(a.embedding), np.asarray(b.embedding))


def _assemble(units: Mapping[str, SkillUnit], cfg: GraphConfig) -> SkillGraph:
    """Derive both edge families and their weights from the children lists.

    Shared by build and edit paths so edges can never drift out of sync with
    the unit structure. Lateral edges connect exactly the siblings that share
    a parent.
    """
    hier: set[tuple[str, str]] = set()
    lateral: set[tuple[str, str]] = set()
    weights: dict[tuple[str, str], float] = {}
    for parent in units.values():
        for child_id in parent.children:
            child = units.get(child_id)
            if child is None:
                raise GraphStructureError(
                    f"unit {parent.id!r} references missing child {child_id!r}")
            hier.add((parent.id, child_id))
            weights[(parent.id, child_id)] = (
                _semantic_similarity(parent, child) * cfg.w_parent_child)
        for a, b in itertools.combinations(parent.children, 2):
            if a == b:
                continue
            key = (a, b) if a < b else (b, a)
            if key in lateral:
                continue
            lateral.add(key)
            weights[key] = _semantic_similarity(units[key[0]], units[key[1]]) * cfg.w_sibling
    return SkillGraph(units=dict(units), hierarchical_edges=frozenset(hier),
                      lateral_edges=frozenset(lateral), edge_weights=weights, cfg=cfg)


def build_edges(units: Iterable[SkillUnit], embedder: EmbeddingProvider | None,
                cfg: GraphConfig = GraphConfig()) -> SkillGraph:
    """Assemble a skill graph from bare units.

    Units missing an embedding are embedded from their content when an
    embedder is supplied. Per-unit invariants are enforced up front; a child
    id that resolves nowhere raises :class:`GraphStructureError` naming it.
    """
    unit_map: dict[str, SkillUnit] = {}
    for unit in units:
        if unit.id in unit_map:
            raise GraphStructureError(f"duplicate unit id {unit.id!r}")
        if not LAYER_MIN <= unit.layer <= LAYER_MAX:
            raise GraphStructureError(
                f"unit {unit.id!r} has layer {unit.layer}, expected {LAYER_MIN}..{LAYER_MAX}")
        if unit.layer == LAYER_MAX and unit.children:
            raise GraphStructureError(
                f"primitive unit {unit.id!r} must not declare children")
        if unit.embedding is None and embedder is not None:
            unit = SkillUnit(id=unit.id, layer=unit.layer, content=unit.content,
                             children=unit.children, tags=unit.tags,
                             embedding=tuple(float(x) for x in embedder.embed(unit.content)))
        unit_map[unit.id] = unit
    for unit in unit_map.values():
        for child_id in unit.children:
            child = unit_map.get(child_id)
            if child is None:
                raise GraphStructureError(
                    f"unit {unit.id!r} references missing child {child_id!r}")
            if child.layer != unit.layer + 1:
                raise GraphStructureError(
                    f"child {child_id!r} of {unit.id!r} sits on layer {child.layer}, "
                    f"expected {unit.layer + 1}")
    return _assemble(unit_map, cfg)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_graph(graph: SkillGraph) -> ValidationReport:
    """Check every structural invariant; violations are data, not errors.

    Returns one :class:`Violation` per broken invariant with the offending
    ids. An empty report means the graph is valid.
    """
    report: list[Violation] = []
    units = graph.units

    for unit in units.values():
        if not LAYER_MIN <= unit.layer <= LAYER_MAX:
            report.append(Violation("layer-range",
                                    f"unit {unit.id!r} has layer {unit.layer}",
                                    (unit.id,)))
        if unit.layer == LAYER_MAX and unit.children:
            report.append(Violation("primitive-children",
                                    f"primitive unit {unit.id!r} has children",
                                    (unit.id,) + tuple(unit.children)))
        seen: set[str] = set()
        for child_id in unit.children:
            if child_id in seen:
                report.append(Violation("duplicate-child",
                                        f"unit {unit.id!r} lists child {child_id!r} twice",
                                        (unit.id, child_id)))
                continue
            seen.add(child_id)
            child = units.get(child_id)
            if child is None:
                report.append(Violation("missing-child",
                                        f"unit {unit.id!r} references missing child {child_id!r}",
                                        (unit.id, child_id)))
            elif child.layer != unit.layer + 1:
                report.append(Violation("child-layer",
                                        f"child {child_id!r} of {unit.id!r} is on layer "
                                        f"{child.layer}, expected {unit.layer + 1}",
                                        (unit.id, child_id)))

    derived = {(u.id, c) for u in units.values() for c in u.children if c in units}
    for parent_id, child_id in sorted(graph.hierarchical_edges):
        if parent_id not in units or child_id not in units:
            report.append(Violation("edge-endpoint",
                                    f"hierarchical edge ({parent_id!r}, {child_id!r}) "
                                    "references a missing unit",
                                    (parent_id, child_id)))
            continue
        if units[child_id].layer != units[parent_id].layer + 1:
            report.append(Violation("edge-layer",
                                    f"hierarchical edge ({parent_id!r}, {child_id!r}) skips "
                                    f"layers {units[parent_id].layer}->{units[child_id].layer}",
                                    (parent_id, child_id)))
        if (parent_id, child_id) not in derived:
            report.append(Violation("edge-children-mismatch",
                                    f"hierarchical edge ({parent_id!r}, {child_id!r}) has no "
                                    "matching children entry",
                                    (parent_id, child_id)))
    for pair in sorted(derived - set(graph.hierarchical_edges)):
        report.append(Violation("edge-children-mismatch",
                                f"children entry {pair!r} has no matching hierarchical edge",
                                pair))

    for a, b in sorted(graph.lateral_edges):
        if a not in units or b not in units:
            report.append(Violation("edge-endpoint",
                                    f"lateral edge ({a!r}, {b!r}) references a missing unit",
                                    (a, b)))
        elif units[a].layer != units[b].layer:
            report.append(Violation("lateral-layer",
                                    f"lateral edge ({a!r}, {b!r}) connects layers "
                                    f"{units[a].layer} and {units[b].layer}",
                                    (a, b)))

    all_edges = set(graph.hierarchical_edges) | set(graph.lateral_edges)
    for key in sorted(all_edges):
        weight = graph.edge_weights.get(key)
        if weight is None:
            report.append(Violation("missing-weight",
                                    f"edge {key!r} has no weight", key))
        elif not 0.0 <= weight <= 1.0:
            report.append(Violation("weight-range",
                                    f"edge {key!r} has weight {weight} outside [0, 1]", key))
    for key in sorted(set(graph.edge_weights) - all_edges):
        report.append(Violation("stray-weight",
                                f"weight entry {key!r} matches no edge", key))

    report.extend(_find_cycles(graph))
    return report


def _find_cycles(graph: SkillGraph) -> list[Violation]:
    # Kahn's algorithm over the union of explicit edges and children links;
    # anything left after peeling sits on a cycle.
    succ: dict[str, set[str]] = {uid: set() for uid in graph.units}
    indeg: dict[str, int] = {uid: 0 for uid in graph.units}
    links = {(p, c) for (p, c) in graph.hierarchical_edges if p in succ and c in succ}
    links |= {(u.id, c) for u in graph.units.values() for c in u.children if c in succ}
    for parent, child in links:
        if child not in succ[parent]:
            succ[parent].add(child)
            indeg[child] += 1
    queue = [uid for uid, d in indeg.items() if d == 0]
    while queue:
        uid = queue.pop()
        for nxt in succ[uid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    trapped = sorted(uid for uid, d in indeg.items() if d > 0)
    if trapped:
        return [Violation("cycle",
                          f"hierarchical edges form a cycle through {trapped}",
                          tuple(trapped))]
    return []


# ---------------------------------------------------------------------------
# decomposition subtrees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubtreeView:
    """Preorder view of a unit and its hierarchical descendants.

    ``size``/``branching``/``depth`` summarize the decomposition subtree; a
    shared child (DAG) appears exactly once, at its first visit.
    """

    root: str
    unit_ids: tuple[str, ...]
    size: int
    branching: int
    depth: int


def decomposition_subtree(graph: SkillGraph, root: str) -> SubtreeView:
    """Every unit reachable from ``root`` via children links, in document order."""
    if root not in graph.units:
        raise KeyError(f"unknown root id {root!r}")
    order: list[str] = []
    seen: set[str] = set()
    max_depth = 0
    branching = 0
    stack: list[tuple[str, int]] = [(root, 0)]
    while stack:
        uid, depth = stack.pop()
        if uid in seen:
            continue
        seen.add(uid)
        order.append(uid)
        max_depth = max(max_depth, depth)
        children = graph.unit(uid).children
        branching = max(branching, len(children))
        for child in reversed(children):
            if child in graph.units:
                stack.append((child, depth + 1))
    return SubtreeView(root=root, unit_ids=tuple(order), size=len(order),
                       branching=branching, depth=max_depth)


# ---------------------------------------------------------------------------
# edit operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EditOperation:
    """One atomic registry edit; unused payload fields stay None.

    add:    ``unit`` (+ optional ``parent_id`` attachment point)
    delete: ``unit_id``
    update: ``unit_id`` + any of ``content``/``tags``/``embedding``
    merge:  ``merge_ids`` (the lexicographically smaller id survives)

    Verifier-registry edits reuse the same shape with ``rule``/``rule_index``
    payloads and are applied by :func:`skillgraph.evolution.apply_verifier_edit`.
    """

    op: str
    target_registry: str = "agent"
    unit: SkillUnit | None = None
    parent_id: str | None = None
    unit_id: str | None = None
    content: str | None = None
    tags: frozenset[str] | None = None
    embedding: tuple[float, ...] | None = None
    merge_ids: tuple[str, str] | None = None
    rule: object | None = None
    rule_index: int | None = None
    rule_merge: tuple[int, int] | None = None


def apply_edit(graph: SkillGraph, edit: EditOperation) -> SkillGraph:
    """Apply one agent-registry edit, returning a new valid graph.

    Rejections raise :class:`EditRejected` with a named violation; accepted
    edits always produce a graph with an empty validation report. Lateral
    edges are re-derived from the shared-parent sibling rule.
    """
    if edit.target_registry != "agent":
        raise EditRejected("wrong-registry",
                           f"apply_edit handles agent edits, got {edit.target_registry!r}")
    if edit.op not in EDIT_OPS:
        raise EditRejected("unknown-op", f"unsupported operator {edit.op!r}")
    handler = {OP_ADD: _apply_add, OP_DELETE: _apply_delete,
               OP_UPDATE: _apply_update, OP_MERGE: _apply_merge}[edit.op]
    new_units = handler(graph, edit)
    try:
        result = _assemble(new_units, graph.cfg)
    except GraphStructureError as exc:
        raise EditRejected("missing-child", str(exc)) from exc
    violations = validate_graph(result)
    if violations:
        first = violations[0]
        raise EditRejected(first.code, first.message)
    return result


def _apply_add(graph: SkillGraph, edit: EditOperation) -> dict[str, SkillUnit]:
    unit = edit.unit
    if unit is None:
        raise EditRejected("malformed-edit", "add requires a unit payload")
    if unit.id in graph.units:
        raise EditRejected("duplicate-id", f"unit {unit.id!r} already exists")
    if not LAYER_MIN <= unit.layer <= LAYER_MAX:
        raise EditRejected("layer-range", f"layer {unit.layer} outside {LAYER_MIN}..{LAYER_MAX}")
    if unit.layer == LAYER_MAX and unit.children:
        raise EditRejected("primitive-children", f"primitive {unit.id!r} declares children")
    units = dict(graph.units)
    for child_id in unit.children:
        child = units.get(child_id)
        if child is None:
            raise EditRejected("missing-child", f"child {child_id!r} does not exist")
        if child.layer != unit.layer + 1:
            raise EditRejected("child-layer",
                               f"child {child_id!r} is on layer {child.layer}, "
                               f"expected {unit.layer + 1}")
    units[unit.id] = unit
    if edit.parent_id is not None:
        parent = units.get(edit.parent_id)
        if parent is None:
            raise EditRejected("missing-parent", f"parent {edit.parent_id!r} does not exist")
        if unit.layer != parent.layer + 1:
            raise EditRejected("layer-adjacency",
                               f"cannot attach layer-{unit.layer} unit {unit.id!r} under "
                               f"layer-{parent.layer} parent {parent.id!r}")
        units[parent.id] = SkillUnit(id=parent.id, layer=parent.layer, content=parent.content,
                                     children=parent.children + (unit.id,), tags=parent.tags,
                                     embedding=parent.embedding)
    return units


def _apply_delete(graph: SkillGraph, edit: EditOperation) -> dict[str, SkillUnit]:
    target = edit.unit_id
    if target is None or target not in graph.units:
        raise EditRejected("unknown-unit", f"cannot delete missing unit {target!r}")
    units = dict(graph.units)
    parent_count: dict[str, int] = {}
    for unit in units.values():
        for child in unit.children:
            parent_count[child] = parent_count.get(child, 0) + 1

    # Hard-prune: removing a unit also removes descendants left parentless,
    # so unreachable nodes never distort walk degree statistics.
    doomed = {target}
    frontier = [target]
    while frontier:
        uid = frontier.pop()
        for child in units[uid].children:
            if child in doomed or child not in units:
                continue
            parent_count[child] -= 1
            if parent_count[child] == 0:
                doomed.add(child)
                frontier.append(child)

    remaining: dict[str, SkillUnit] = {}
    for uid, unit in units.items():
        if uid in doomed:
            continue
        if any(c in doomed for c in unit.children):
            unit = SkillUnit(id=unit.id, layer=unit.layer, content=unit.content,
                             children=tuple(c for c in unit.children if c not in doomed),
                             tags=unit.tags, embedding=unit.embedding)
        remaining[uid] = unit
    return remaining


def _apply_update(graph: SkillGraph, edit: EditOperation) -> dict[str, SkillUnit]:
    target = edit.unit_id
    if target is None or target not in graph.units:
        raise EditRejected("unknown-unit", f"cannot update missing unit {target!r}")
    old = graph.units[target]
    units = dict(graph.units)
    units[target] = SkillUnit(
        id=old.id, layer=old.layer,
        content=old.content if edit.content is None else edit.content,
        children=old.children,
        tags=old.tags if edit.tags is None else frozenset(edit.tags),
        embedding=old.embedding if edit.embedding is None else tuple(edit.embedding))
    return units


def _apply_merge(graph: SkillGraph, edit: EditOperation) -> dict[str, SkillUnit]:
    if edit.merge_ids is None:
        raise EditRejected("malformed-edit", "merge requires two unit ids")
    first, second = edit.merge_ids
    if first == second:
        raise EditRejected("malformed-edit", f"cannot merge unit {first!r} with itself")
    for uid in (first, second):
        if uid not in graph.units:
            raise EditRejected("unknown-unit", f"cannot merge missing unit {uid!r}")
    keep_id, drop_id = (first, second) if first < second else (second, first)
    keep, drop = graph.units[keep_id], graph.units[drop_id]
    if keep.layer != drop.layer:
        raise EditRejected("layer-mismatch",
                           f"cannot merge layer-{keep.layer} {keep_id!r} with "
                           f"layer-{drop.layer} {drop_id!r}")

    merged_children = keep.children + tuple(
        c for c in drop.children if c not in keep.children)
    merged = SkillUnit(id=keep_id, layer=keep.layer,
                       content=keep.content + MERGE_SEPARATOR + drop.content,
                       children=merged_children,
                       tags=keep.tags | drop.tags,
                       embedding=keep.embedding)
    units: dict[str, SkillUnit] = {}
    for uid, unit in graph.units.items():
        if uid == drop_id:
            continue
        if uid == keep_id:
            units[uid] = merged
            continue
        if drop_id in unit.children:
            # Re-point incoming edges at the surviving unit.
            children = tuple(c for c in unit.children if c != drop_id)
            if keep_id not in children:
                children = children[:unit.children.index(drop_id)] + (keep_id,) + \
                    children[unit.children.index(drop_id):]
            unit = SkillUnit(id=unit.id, layer=unit.layer, content=unit.content,
                             children=children, tags=unit.tags, embedding=unit.embedding)
        units[uid] = unit
    return units
