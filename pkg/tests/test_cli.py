"""CLI surface: commands, exit codes, structured output, byte reproducibility."""

from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

from skillgraph.cli import EXIT_CONFIG, EXIT_DATA, main
from skillgraph.embeddings import HashingEmbedder
from skillgraph.synthetic import SimConfig, gen_synthetic_library, gen_tasks

RUN = [sys.executable, "-m", "skillgraph"]


def run_cli(args, cwd):
    return subprocess.run(RUN + args, cwd=cwd, capture_output=True, timeout=300)


def write_corpus(tmp_path: Path, seed=5, embed_dim=256):
    cfg = SimConfig(seed=seed, embed_dim=embed_dim)
    graph = gen_synthetic_library(cfg, HashingEmbedder(embed_dim))
    units = [{"id": u.id, "layer": u.layer, "content": u.content,
              "children": list(u.children), "tags": sorted(u.tags)}
             for u in graph.units.values()]
    skills = tmp_path / "skills.json"
    skills.write_text(json.dumps(units))
    tasks = gen_tasks(cfg, graph)
    split = tmp_path / "split.json"
    split.write_text(json.dumps([
        {"query": t.query, "ground_truth": t.ground_truth,
         "required_tags": sorted(t.required_tags),
         "substitutions": [list(p) for p in t.substitutions]} for t in tasks]))
    return skills, split


def test_init_scaffolds_config_and_empty_registry(tmp_path):
    result = run_cli(["init", "--out", "."], tmp_path)
    assert result.returncode == 0
    assert (tmp_path / "config.json").exists()
    assert (tmp_path / "registry.json").exists()
    payload = json.loads(result.stdout)
    assert payload["registry"].endswith("registry.json")


def test_ingest_query_inspect_cycle(tmp_path):
    skills, _ = write_corpus(tmp_path)
    assert run_cli(["init", "--out", "."], tmp_path).returncode == 0
    ingest = run_cli(["ingest", str(skills), "--out", "registry.json"], tmp_path)
    assert ingest.returncode == 0
    assert json.loads(ingest.stdout)["units"] == 30

    query = run_cli(["query", "task needs cap01 cap02",
                     "--registry", "registry.json"], tmp_path)
    assert query.returncode == 0
    payload = json.loads(query.stdout)
    assert payload["context"]["entries"]
    assert payload["trace"]["seed_ids"]

    inspect = run_cli(["inspect", "s1-000", "--registry", "registry.json"], tmp_path)
    assert inspect.returncode == 0
    info = json.loads(inspect.stdout)
    assert info["unit"]["layer"] == 1
    assert info["subtree"]["size"] >= 1


def test_cli_commands_are_byte_reproducible(tmp_path):
    skills, split = write_corpus(tmp_path)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    commands = [
        ["init", "--out", "."],
        ["ingest", str(skills), "--out", "registry.json"],
        ["query", "task needs cap01 cap03", "--registry", "registry.json"],
        ["inspect", "s2-001", "--registry", "registry.json"],
        ["evolve", str(split), "--registry", "registry.json",
         "--out", "evolved.json", "--seed", "3"],
        ["simulate", "prop1", "--out", "sim", "--trials", "25",
         "--sizes", "63,255"],
        ["simulate", "prop3", "--out", "sim3", "--instances", "40"],
    ]
    for workdir in (tmp_path / "a", tmp_path / "b"):
        for command in commands:
            result = run_cli(command, workdir)
            assert result.returncode == 0, (command, result.stderr)
            (workdir / "stdout.log").open("ab").write(result.stdout)
    for name in ("stdout.log", "registry.json", "evolved.json", "config.json",
                 "sim/prop1.csv", "sim3/prop3.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), name


def test_outputs_are_stable_across_hash_seeds(tmp_path):
    """Walk scores and serialization must not depend on PYTHONHASHSEED."""
    skills, split = write_corpus(tmp_path)
    outputs = {}
    for hash_seed in ("1", "2"):
        workdir = tmp_path / f"h{hash_seed}"
        workdir.mkdir()
        env = {"PATH": "/usr/bin:/bin", "PYTHONHASHSEED": hash_seed}
        stdout = b""
        for command in (["init", "--out", "."],
                        ["ingest", str(skills), "--out", "registry.json"],
                        ["query", "task needs cap02 cap05",
                         "--registry", "registry.json"],
                        ["evolve", str(split), "--registry", "registry.json",
                         "--out", "evolved.json"]):
            result = subprocess.run(RUN + command, cwd=workdir, env=env,
                                    capture_output=True, timeout=300)
            assert result.returncode == 0, (command, result.stderr)
            stdout += result.stdout
        outputs[hash_seed] = (stdout, (workdir / "registry.json").read_bytes(),
                              (workdir / "evolved.json").read_bytes())
    assert outputs["1"] == outputs["2"]


def test_evolve_without_failures_leaves_registry_unchanged(tmp_path):
    skills, _ = write_corpus(tmp_path)
    run_cli(["init", "--out", "."], tmp_path)
    run_cli(["ingest", str(skills), "--out", "registry.json"], tmp_path)
    # single trivially-satisfied task: its reference tokens sit in every unit
    split = tmp_path / "easy.json"
    split.write_text(json.dumps([{"query": "task needs cap01", "ground_truth":
                                  "skill"}]))
    before = (tmp_path / "registry.json").read_bytes()
    result = run_cli(["evolve", str(split), "--registry", "registry.json"], tmp_path)
    assert result.returncode == 0
    payload = json.loads(result.stdout)
    assert len(payload["history"]) == 1
    assert (tmp_path / "registry.json").read_bytes() == before


def test_evolve_select_on_validation_mode(tmp_path):
    skills, split = write_corpus(tmp_path, seed=6)
    run_cli(["init", "--out", "."], tmp_path)
    run_cli(["ingest", str(skills), "--out", "registry.json"], tmp_path)
    result = run_cli(["evolve", str(split), "--registry", "registry.json",
                      "--out", "picked.json", "--select-on-validation",
                      "--seed", "1"], tmp_path)
    assert result.returncode == 0, result.stderr
    payload = json.loads(result.stdout)
    assert len(payload["validation_scores"]) == len(payload["history"])
    assert payload["evolution_tasks"] + payload["validation_tasks"] >= 2
    assert (tmp_path / "picked.json").exists()


def test_simulate_prop2_emits_non_decreasing_objective_column(tmp_path):
    result = run_cli(["simulate", "prop2", "--out", "sim2", "--runs", "4",
                      "--iters", "6"], tmp_path)
    assert result.returncode == 0, result.stderr
    with (tmp_path / "sim2" / "prop2.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    by_run: dict[str, list[float]] = {}
    for row in rows:
        by_run.setdefault(row["run"], []).append(float(row["J"]))
    assert by_run
    for run, history in by_run.items():
        assert all(b >= a for a, b in zip(history, history[1:])), (run, history)


def test_simulate_ablation_emits_rows(tmp_path):
    result = run_cli(["simulate", "ablation", "--out", "sima", "--tasks", "4"],
                     tmp_path)
    assert result.returncode == 0, result.stderr
    with (tmp_path / "sima" / "ablation.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 12  # 4 tasks x 3 modes
    assert {row["mode"] for row in rows} == \
        {"selective", "parent-only", "rewrite-all"}


def test_exit_codes_for_usage_data_and_provider_failures(tmp_path, monkeypatch):
    assert main(["no-such-command"]) == EXIT_CONFIG
    assert main(["query", "text", "--registry", "missing.json"]) == EXIT_DATA

    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(["query", "text", "--registry", str(bad)]) == EXIT_DATA

    # http selected with no base URL is a provider failure
    run_cli(["init", "--out", "."], tmp_path)
    monkeypatch.chdir(tmp_path)
    assert main(["query", "text", "--registry", "registry.json",
                 "--provider", "http"]) == 4


def test_no_secret_material_in_outputs(tmp_path, monkeypatch):
    monkeypatch.setenv("SKILLGRAPH_API_KEY", "sk-super-secret-value")
    skills, split = write_corpus(tmp_path)
    env_results = []
    for command in (["init", "--out", "."],
                    ["ingest", str(skills), "--out", "registry.json"],
                    ["query", "task needs cap01", "--registry", "registry.json"],
                    ["evolve", str(split), "--registry", "registry.json",
                     "--out", "evolved.json"]):
        result = subprocess.run(RUN + command, cwd=tmp_path, capture_output=True,
                                env={"PATH": "/usr/bin:/bin",
                                     "SKILLGRAPH_API_KEY": "sk-super-secret-value"},
                                timeout=300)
        env_results.append(result)
        assert result.returncode == 0, result.stderr
    blobs = [p.read_bytes() for p in tmp_path.rglob("*") if p.is_file()]
    blobs += [r.stdout + r.stderr for r in env_results]
    assert all(b"sk-super-secret-value" not in blob for blob in blobs)
