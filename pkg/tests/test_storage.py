"""Canonical serialization, checksums, atomicity, and round-trip identity."""

from __future__ import annotations

import json

import pytest

from skillgraph.adaptation import RoutingAction, RoutingRule, VerifierRegistry
from skillgraph.embeddings import HashingEmbedder
from skillgraph.evolution import RegistryPair
from skillgraph.graph import SkillUnit, build_edges
from skillgraph.storage import (
    ChecksumError,
    FormatVersionError,
    RegistryInvariantError,
    canonical_bytes,
    load_registry,
    save_registry,
)
from skillgraph.synthetic import SimConfig, gen_synthetic_library

EMB = HashingEmbedder(32)


def sample_pair(seed=0, with_rules=True) -> RegistryPair:
    graph = gen_synthetic_library(SimConfig(seed=seed, embed_dim=32),
                                  HashingEmbedder(32))
    rules = ()
    if with_rules:
        rules = (RoutingRule(action=RoutingAction.ACCEPT,
                             tags=frozenset({"cap01"})),
                 RoutingRule(action=RoutingAction.SKIP, layer=4, tier="low"))
    return RegistryPair(agent=graph, verifier=VerifierRegistry(rules=rules),
                        version=3)


def test_round_trip_structural_identity(tmp_path):
    pair = sample_pair()
    path = save_registry(pair, tmp_path / "registry.json")
    loaded = load_registry(path)
    assert loaded == pair


def test_equal_pairs_serialize_byte_identically(tmp_path):
    first = sample_pair(seed=7)
    second = sample_pair(seed=7)
    assert first == second
    assert canonical_bytes(first) == canonical_bytes(second)
    p1 = save_registry(first, tmp_path / "a.json")
    p2 = save_registry(second, tmp_path / "b.json")
    assert p1.read_bytes() == p2.read_bytes()


def test_round_trip_over_generated_corpus(tmp_path):
    for seed in range(8):
        pair = sample_pair(seed=seed, with_rules=seed % 2 == 0)
        path = save_registry(pair, tmp_path / f"r{seed}.json")
        assert load_registry(path) == pair


def test_truncated_file_raises_checksum_error_without_partial_result(tmp_path):
    pair = sample_pair()
    path = save_registry(pair, tmp_path / "registry.json")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ChecksumError):
        load_registry(path)


def test_tampered_body_raises_checksum_error(tmp_path):
    pair = sample_pair()
    path = save_registry(pair, tmp_path / "registry.json")
    doc = json.loads(path.read_text())
    doc["body"]["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ChecksumError):
        load_registry(path)


def test_format_version_mismatch_raises_distinct_error(tmp_path):
    pair = sample_pair()
    path = save_registry(pair, tmp_path / "registry.json")
    doc = json.loads(path.read_text())
    doc["format_version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatVersionError):
        load_registry(path)


def test_invariant_violation_on_load_raises_distinct_error(tmp_path):
    graph = build_edges([
        SkillUnit(id="a", layer=1, content="a", children=("b",)),
        SkillUnit(id="b", layer=2, content="b"),
    ], EMB)
    pair = RegistryPair(agent=graph, verifier=VerifierRegistry())
    path = save_registry(pair, tmp_path / "registry.json")
    doc = json.loads(path.read_text())
    # corrupt a unit layer, then re-seal the checksum so only validation trips
    doc["body"]["agent"]["units"][0]["layer"] = 9
    from skillgraph.storage import _checksum
    doc["checksum"] = _checksum(doc["body"])
    path.write_text(json.dumps(doc))
    with pytest.raises(RegistryInvariantError):
        load_registry(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    save_registry(sample_pair(), tmp_path / "registry.json")
    assert [p.name for p in tmp_path.iterdir()] == ["registry.json"]


def test_embeddings_round_trip_exactly(tmp_path):
    pair = sample_pair(seed=2)
    loaded = load_registry(save_registry(pair, tmp_path / "r.json"))
    for uid, unit in pair.agent.units.items():
        assert loaded.agent.units[uid].embedding == unit.embedding
