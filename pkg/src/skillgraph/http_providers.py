"""HTTP-backed providers speaking a chat-completion style JSON protocol.

Each role sends a versioned system prompt (text assets under ``prompts/``)
plus a user message carrying the query and unit payload. Transport errors
retry with exponential backoff and then degrade per the adaptation
contracts; a verifier reply that is not exactly one of the four action
tokens is a malformed reply, mapped to Skip upstream. The API key comes
from an environment variable and is never logged or persisted.
"""

from __future__ import annotations

import json
import os
import time
from importlib import resources
from typing import Callable, Sequence

import httpx
import numpy as np

from .adaptation import (
    ACTION_TOKENS,
    MalformedReplyError,
    ProviderBundle,
    RoutingAction,
    RoutingRule,
    SkillContext,
    TransportError,
    VerifierRegistry,
)
from .config import HttpConfig, RunConfig
from .evolution import (
    GapReport,
    MechanicalWriter,
    RegistryPair,
    Task,
    apply_verifier_edit,
    classify_failure,
)
from .graph import EDIT_OPS, EditOperation, SkillUnit


class ProviderConfigError(ValueError):
    """HTTP provider selected without a usable base URL / key."""


def load_prompt(name: str) -> str:
    return (resources.files(__package__) / "prompts" / f"{name}.txt").read_text("utf-8")


class ChatClient:
    """Minimal chat/embeddings client with bounded retry and backoff."""

    def __init__(self, cfg: HttpConfig, api_key: str,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        if not cfg.base_url:
            raise ProviderConfigError("http provider selected but base_url is empty")
        self.cfg = cfg
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=cfg.base_url, timeout=cfg.timeout, transport=transport,
            headers={"Authorization": f"Bearer {api_key}"} if api_key else {})

    def _post(self, path: str, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries):
            try:
                response = self._client.post(path, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if response.status_code < 500:
                    if response.status_code != 200:
                        raise TransportError(
                            f"provider returned status {response.status_code}")
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise MalformedReplyError(f"non-JSON provider reply: {exc}") from exc
                last_error = TransportError(f"provider returned status {response.status_code}")
            if attempt + 1 < self.cfg.max_retries:
                self._sleep(self.cfg.backoff * 2 ** attempt)
        raise TransportError(f"provider unreachable after {self.cfg.max_retries} "
                             f"attempts: {last_error}")

    def chat(self, system: str, user: str) -> str:
        payload = {"model": self.cfg.model,
                   "messages": [{"role": "system", "content": system},
                                {"role": "user", "content": user}]}
        reply = self._post("/chat/completions", payload)
        try:
            return str(reply["choices"][0]["message"]["content"])
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedReplyError(f"chat reply missing content: {exc}") from exc

    def embed(self, text: str) -> list[float]:
        reply = self._post("/embeddings", {"model": self.cfg.model, "input": text})
        try:
            return [float(x) for x in reply["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedReplyError(f"embedding reply malformed: {exc}") from exc


class HttpEmbedder:
    def __init__(self, client: ChatClient, dim: int = 0) -> None:
        self._client = client
        self.dim = dim
        self._memo: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._memo.get(text)
        if cached is not None:
            return cached
        vec = np.asarray(self._client.embed(text), dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec = vec / norm
        if not self.dim:
            self.dim = int(vec.shape[0])
        vec.setflags(write=False)
        self._memo[text] = vec
        return vec


def _unit_payload(query: str, unit: SkillUnit, rel_score: float) -> str:
    return json.dumps({"query": query, "layer": unit.layer,
                       "tags": sorted(unit.tags), "relative_score": round(rel_score, 6),
                       "content": unit.content}, sort_keys=True)


class HttpVerifier:
    """Routes via a remote model; replies must be exactly one action token."""

    def __init__(self, client: ChatClient, registry: VerifierRegistry) -> None:
        self._client = client
        self.registry = registry
        self._system = load_prompt("verifier").replace("{rules}", registry.render())

    def decide(self, query: str, unit: SkillUnit, rel_score: float) -> RoutingAction:
        reply = self._client.chat(self._system, _unit_payload(query, unit, rel_score))
        token = reply.strip()
        if token not in ACTION_TOKENS:
            raise MalformedReplyError(f"verifier reply {token!r} is not an action token")
        return ACTION_TOKENS[token]


def _parse_rule(raw: dict) -> RoutingRule:
    action = RoutingAction(str(raw["action"]))
    layer = raw.get("layer")
    return RoutingRule(action=action,
                       layer=None if layer is None else int(layer),
                       tags=frozenset(str(t) for t in raw.get("tags", [])),
                       tier=raw.get("tier"),
                       query_tags=frozenset(str(t) for t in raw.get("query_tags", [])))


def _report_payload(report: GapReport) -> dict:
    return {"error_type": report.error_type, "query": report.query,
            "ground_truth": report.ground_truth,
            "failed_output": report.failed_output,
            "retrieved": list(report.retrieved_ids),
            "path": [[uid, action.value] for uid, action in
                     zip(report.traversal_path, report.routing_actions)],
            "invoked": list(report.invoked_ids),
            "rewritten": list(report.rewritten_ids)}


class HttpWriter(MechanicalWriter):
    """Remote rewrites and edit proposals; parse failures skip the proposal only."""

    def __init__(self, client: ChatClient,
                 substitutions: Sequence[tuple[str, str]] = ()) -> None:
        super().__init__(substitutions)
        self._client = client
        self._rewrite_prompt = load_prompt("writer_rewrite")
        self._edits_prompt = load_prompt("writer_edits")

    def rewrite(self, query: str, unit: SkillUnit) -> str:
        user = json.dumps({"query": query, "content": unit.content}, sort_keys=True)
        return self._client.chat(self._rewrite_prompt, user)

    def propose_verifier_edit(self, op: str, report: GapReport,
                              pair: RegistryPair) -> VerifierRegistry | None:
        user = json.dumps({"operator": op, "target": "routing-rules",
                           "report": _report_payload(report),
                           "rules": pair.verifier.render()}, sort_keys=True)
        try:
            raw = json.loads(self._client.chat(self._edits_prompt, user))
            if raw.get("op") != op:
                return None
            merge = raw.get("merge")
            edit = EditOperation(
                op=op, target_registry="verifier",
                rule=_parse_rule(raw["rule"]) if raw.get("rule") else None,
                rule_index=raw.get("index"),
                rule_merge=None if merge is None else (int(merge[0]), int(merge[1])))
            return apply_verifier_edit(pair.verifier, edit)
        except (ValueError, KeyError, TypeError, IndexError):
            return None

    def propose_agent_edits(self, report: GapReport, graph) -> list[EditOperation]:
        user = json.dumps({"target": "skills", "report": _report_payload(report)},
                          sort_keys=True)
        try:
            raw = json.loads(self._client.chat(self._edits_prompt, user))
            edits = []
            for item in raw:
                op = str(item.get("op"))
                if op not in EDIT_OPS:
                    continue
                unit = None
                if item.get("unit"):
                    u = item["unit"]
                    unit = SkillUnit(id=str(u["id"]), layer=int(u["layer"]),
                                     content=str(u.get("content", "")),
                                     tags=frozenset(str(t) for t in u.get("tags", [])))
                merge_ids = item.get("merge_ids")
                edits.append(EditOperation(
                    op=op, unit=unit, parent_id=item.get("parent_id"),
                    unit_id=item.get("unit_id"), content=item.get("content"),
                    tags=None if item.get("tags") is None else
                    frozenset(str(t) for t in item["tags"]),
                    merge_ids=None if merge_ids is None else
                    (str(merge_ids[0]), str(merge_ids[1]))))
            return edits
        except (ValueError, KeyError, TypeError, IndexError):
            return []


class HttpAgent:
    def __init__(self, client: ChatClient) -> None:
        self._client = client
        self._system = load_prompt("agent")

    def complete(self, query: str, context: SkillContext) -> str:
        user = json.dumps({"task": query, "skill_context": context.render()},
                          sort_keys=True)
        return self._client.chat(self._system, user)


class HttpMetric:
    """Metric stays a local contract: token overlap with the reference answer."""

    def score(self, task: Task, output: str) -> float:
        from .embeddings import tokenize
        reference = set(tokenize(task.ground_truth))
        if not reference:
            return 1.0
        return len(reference & set(tokenize(output))) / len(reference)

    def classify(self, task: Task, output: str, trace) -> str:
        return classify_failure(task, output, trace)


def build_http_providers(run_cfg: RunConfig, registry: VerifierRegistry,
                         transport: httpx.BaseTransport | None = None,
                         sleep: Callable[[float], None] = time.sleep) -> ProviderBundle:
    """Provider bundle for the roles configured as http (mock elsewhere)."""
    from .embeddings import HashingEmbedder
    from .synthetic import TagAgent, TagMetric

    http_cfg = run_cfg.http
    api_key = os.environ.get(http_cfg.api_key_env, "")
    roles = run_cfg.providers
    needs_http = [role for role in roles if roles[role] == "http"]
    if needs_http and not http_cfg.base_url:
        raise ProviderConfigError(
            f"roles {needs_http} use http but http.base_url is empty")
    client = ChatClient(http_cfg, api_key, transport=transport, sleep=sleep) \
        if needs_http else None

    embedder = (HttpEmbedder(client, run_cfg.embed_dim)
                if roles.get("embedder") == "http"
                else HashingEmbedder(run_cfg.embed_dim))
    verifier = (HttpVerifier(client, registry) if roles.get("verifier") == "http"
                else None)
    writer = (HttpWriter(client) if roles.get("writer") == "http"
              else MechanicalWriter(embedder=embedder))
    agent = HttpAgent(client) if roles.get("agent") == "http" else TagAgent()
    metric = HttpMetric() if roles.get("agent") == "http" else TagMetric()

    def verifier_factory(reg: VerifierRegistry):
        if roles.get("verifier") == "http":
            return HttpVerifier(client, reg)
        from .adaptation import RuleVerifier
        return RuleVerifier(reg)

    def writer_factory(task):
        substitutions = getattr(task, "substitutions", ())
        if roles.get("writer") == "http":
            return HttpWriter(client, substitutions)
        return MechanicalWriter(substitutions=substitutions, embedder=embedder)

    bundle = ProviderBundle(embedder=embedder,
                            verifier=verifier if verifier is not None
                            else verifier_factory(registry),
                            writer=writer, agent=agent, metric=metric,
                            verifier_factory=verifier_factory,
                            writer_factory=writer_factory)
    return bundle
