"""Canonical registry persistence: sorted keys, checksums, atomic writes.

Equal registry pairs serialize to byte-identical files, so diffs between
evolution iterations show exactly what a commit changed. Loading verifies
the format version, the checksum, and every structural invariant before any
registry object is returned; a truncated or tampered file never yields a
partial registry.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

from .adaptation import RoutingAction, RoutingRule, VerifierRegistry
from .evolution import RegistryPair
from .graph import GraphConfig, SkillGraph, SkillUnit, validate_graph

FORMAT_VERSION = 1


class RegistryIOError(ValueError):
    """Base for registry persistence failures."""


class ChecksumError(RegistryIOError):
    """Unreadable, truncated, or tampered registry file."""


class FormatVersionError(RegistryIOError):
    """Registry file written by an incompatible format version."""


class RegistryInvariantError(RegistryIOError):
    """Registry file parsed but violates structural invariants."""


def _graph_payload(graph: SkillGraph) -> dict:
    units = []
    for uid in graph.ids():
        unit = graph.units[uid]
        units.append({
            "id": unit.id,
            "layer": unit.layer,
            "content": unit.content,
            "children": list(unit.children),
            "tags": sorted(unit.tags),
            "embedding": None if unit.embedding is None else list(unit.embedding),
        })
    hier = sorted([a, b, graph.edge_weights.get((a, b), 0.0)]
                  for (a, b) in graph.hierarchical_edges)
    lateral = sorted([a, b, graph.edge_weights.get((a, b), 0.0)]
                     for (a, b) in graph.lateral_edges)
    return {
        "cfg": {"w_parent_child": graph.cfg.w_parent_child,
                "w_sibling": graph.cfg.w_sibling},
        "units": units,
        "hierarchical_edges": hier,
        "lateral_edges": lateral,
    }


def _verifier_payload(registry: VerifierRegistry) -> dict:
    rules = []
    for rule in registry.rules:
        rules.append({
            "action": rule.action.value,
            "layer": rule.layer,
            "tags": sorted(rule.tags),
            "tier": rule.tier,
            "query_tags": sorted(rule.query_tags),
        })
    return {"theta_full": registry.theta_full, "theta_part": registry.theta_part,
            "rules": rules}


def _body_payload(pair: RegistryPair) -> dict:
    return {"version": pair.version,
            "agent": _graph_payload(pair.agent),
            "verifier": _verifier_payload(pair.verifier)}


def _checksum(body: dict) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"),
                           ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def canonical_bytes(pair: RegistryPair) -> bytes:
    """Deterministic file image of a registry pair."""
    body = _body_payload(pair)
    document = {"format_version": FORMAT_VERSION, "checksum": _checksum(body),
                "body": body}
    return (json.dumps(document, sort_keys=True, indent=2, ensure_ascii=True)
            + "\n").encode("utf-8")


def fingerprint(pair: RegistryPair) -> str:
    return hashlib.sha256(canonical_bytes(pair)).hexdigest()


def save_registry(pair: RegistryPair, path: str | Path) -> Path:
    """Write the pair atomically (temp file + rename in the target directory)."""
    path = Path(path)
    data = canonical_bytes(pair)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def _parse_graph(payload: dict) -> SkillGraph:
    cfg_raw = payload.get("cfg", {})
    cfg = GraphConfig(w_parent_child=float(cfg_raw.get("w_parent_child", 1.0)),
                      w_sibling=float(cfg_raw.get("w_sibling", 0.5)))
    units: dict[str, SkillUnit] = {}
    for raw in payload.get("units", []):
        embedding = raw.get("embedding")
        unit = SkillUnit(
            id=str(raw["id"]), layer=int(raw["layer"]), content=str(raw["content"]),
            children=tuple(str(c) for c in raw.get("children", [])),
            tags=frozenset(str(t) for t in raw.get("tags", [])),
            embedding=None if embedding is None else tuple(float(x) for x in embedding))
        units[unit.id] = unit
    hier = set()
    lateral = set()
    weights: dict[tuple[str, str], float] = {}
    for a, b, w in payload.get("hierarchical_edges", []):
        hier.add((str(a), str(b)))
        weights[(str(a), str(b))] = float(w)
    for a, b, w in payload.get("lateral_edges", []):
        lateral.add((str(a), str(b)))
        weights[(str(a), str(b))] = float(w)
    return SkillGraph(units=units, hierarchical_edges=frozenset(hier),
                      lateral_edges=frozenset(lateral), edge_weights=weights, cfg=cfg)


def _parse_verifier(payload: dict) -> VerifierRegistry:
    rules = []
    for raw in payload.get("rules", []):
        action_token = str(raw.get("action"))
        try:
            action = RoutingAction(action_token)
        except ValueError:
            raise RegistryInvariantError(
                f"rule action {action_token!r} is not a routing action") from None
        layer = raw.get("layer")
        rules.append(RoutingRule(
            action=action,
            layer=None if layer is None else int(layer),
            tags=frozenset(str(t) for t in raw.get("tags", [])),
            tier=raw.get("tier"),
            query_tags=frozenset(str(t) for t in raw.get("query_tags", []))))
    return VerifierRegistry(rules=tuple(rules),
                            theta_full=float(payload.get("theta_full", 0.7)),
                            theta_part=float(payload.get("theta_part", 0.2)))


def load_registry(path: str | Path) -> RegistryPair:
    """Parse, verify, and validate a registry file.

    Failures are reported distinctly: :class:`ChecksumError` for unreadable
    or tampered content, :class:`FormatVersionError` for version skew, and
    :class:`RegistryInvariantError` when the parsed registries are invalid.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RegistryIOError(f"cannot read registry file {path}: {exc}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"registry file {path} is truncated or corrupt: {exc}") from exc
    if not isinstance(document, dict) or "body" not in document:
        raise ChecksumError(f"registry file {path} has no body")
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"registry file {path} has format_version {version!r}, "
            f"expected {FORMAT_VERSION}")
    body = document["body"]
    if document.get("checksum") != _checksum(body):
        raise ChecksumError(f"registry file {path} fails its checksum")
    try:
        graph = _parse_graph(body.get("agent", {}))
        verifier = _parse_verifier(body.get("verifier", {}))
    except RegistryInvariantError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise RegistryInvariantError(f"registry file {path} is malformed: {exc}") from exc
    violations = validate_graph(graph)
    if violations:
        codes = ", ".join(sorted({v.code for v in violations}))
        raise RegistryInvariantError(
            f"registry file {path} violates structural invariants: {codes}")
    return RegistryPair(agent=graph, verifier=verifier,
                        version=int(body.get("version", 0)))
