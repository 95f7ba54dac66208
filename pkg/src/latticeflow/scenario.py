"""Scenario files: a program, a cluster shape, a workload, and fault
injections, bundled with the seed that makes the run reproducible.

The program is referenced either by bundled pattern name or inline in the
program JSON format. Nodes can be listed explicitly or synthesized from the
availability annotations over a failure-domain topology.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dfield
from typing import Optional

from .facets import make_topology, replication_plan
from .ir import Program
from .progjson import program_from_json
from .sim import Cluster, NetworkModel, NodeSpec


class ScenarioError(Exception):
    """The scenario file is malformed or inconsistent."""


@dataclass
class Scenario:
    program: Program
    seed: int
    network: NetworkModel = NetworkModel()
    nodes: Optional[list] = None            # explicit NodeSpec list
    failure_domains: Optional[list] = None  # slot paths for synthesis
    workload: list = dfield(default_factory=list)
    failures: list = dfield(default_factory=list)   # (tick, domain prefix)
    max_ticks: int = 10000


def _require(cond, msg):
    if not cond:
        raise ScenarioError(msg)


def load_program(ref) -> Program:
    """Program by bundled pattern name, inline dict, or path to a JSON file."""
    from .patterns import get_pattern, pattern_names
    if isinstance(ref, str):
        if ref in pattern_names():
            return get_pattern(ref).program
        try:
            with open(ref) as f:
                ref = json.load(f)
        except OSError as exc:
            raise ScenarioError(
                f"program {ref!r} is neither a bundled pattern nor a "
                f"readable file ({exc})") from exc
    _require(isinstance(ref, dict), "program must be a name or an object")
    try:
        return program_from_json(ref)
    except Exception as exc:
        raise ScenarioError(f"bad inline program: {exc}") from exc


def load_scenario(source) -> Scenario:
    """Parse a scenario from a dict, JSON text, or file path."""
    if isinstance(source, str):
        if source.lstrip().startswith("{"):
            raw = json.loads(source)
        else:
            with open(source) as f:
                raw = json.load(f)
    else:
        raw = source
    _require(isinstance(raw, dict), "scenario must be an object")
    _require("program" in raw, "scenario needs a 'program'")
    _require("seed" in raw, "scenario needs an explicit 'seed'")
    _require(isinstance(raw["seed"], int), "'seed' must be an integer")

    program = load_program(raw["program"])

    net = raw.get("network", {})
    try:
        network = NetworkModel(
            delay_min=net.get("delay_min", 1),
            delay_max=net.get("delay_max", 20),
            dup_prob=net.get("dup_prob", 0.0))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    nodes = None
    if "nodes" in raw:
        nodes = []
        for n in raw["nodes"]:
            _require("id" in n and "domain" in n,
                     "each node needs 'id' and 'domain'")
            nodes.append(NodeSpec(n["id"], role=n.get("role", "main"),
                                  domain=tuple(n["domain"]),
                                  behavior=n.get("behavior", "worker")))

    workload = []
    item_keys = {"tick", "client", "mailbox", "handler", "payload", "fields",
                 "message_id"}
    for i, item in enumerate(raw.get("workload", [])):
        unknown = set(item) - item_keys
        _require(not unknown,
                 f"workload[{i}]: unknown keys {sorted(unknown)}")
        mailbox = item.get("mailbox", item.get("handler"))
        _require(mailbox is not None, f"workload[{i}] needs a 'mailbox'")
        _require(mailbox in program.handler_map,
                 f"workload[{i}]: no handler {mailbox!r}")
        payload = item.get("payload", item.get("fields", {}))
        params = set(program.handler_map[mailbox].param_names)
        extra = set(payload) - params
        _require(not extra,
                 f"workload[{i}]: unknown fields {sorted(extra)} for {mailbox!r}")
        workload.append({
            "tick": int(item.get("tick", 0)),
            "client": item.get("client", "client"),
            "handler": mailbox,
            "fields": dict(payload),
            "message_id": item.get("message_id"),
        })

    failures = []
    for i, item in enumerate(raw.get("failures", [])):
        _require("tick" in item and "domain" in item,
                 f"failures[{i}] needs 'tick' and 'domain'")
        failures.append((int(item["tick"]), tuple(item["domain"])))

    return Scenario(
        program=program,
        seed=raw["seed"],
        network=network,
        nodes=nodes,
        failure_domains=[tuple(d) for d in raw["failure_domains"]]
        if "failure_domains" in raw else None,
        workload=workload,
        failures=failures,
        max_ticks=int(raw.get("max_ticks", 10000)),
    )


def build_scenario_cluster(sc: Scenario, backend: str = "graph",
                           seed: Optional[int] = None,
                           trace_path=None) -> Cluster:
    """Materialize the cluster and schedule workload and failures."""
    if sc.nodes is not None:
        workers = [n for n in sc.nodes if n.behavior == "worker"]
        groups = {}
        for h in sc.program.handlers:
            groups[h.name] = sorted(n.node_id for n in workers
                                    if n.role == h.role)
        proxy_ids = sorted(n.node_id for n in sc.nodes if n.behavior == "proxy")
        proxies = {}
        if proxy_ids:
            for h, g in groups.items():
                if len(g) > 1:
                    proxies[h] = proxy_ids[0]
        cluster = Cluster(sc.program, sc.nodes, groups, network=sc.network,
                          seed=seed if seed is not None else sc.seed,
                          backend=backend, proxies=proxies,
                          trace_path=trace_path)
    else:
        slots = sc.failure_domains or make_topology()
        plan = replication_plan(sc.program, slots)
        cluster = Cluster(sc.program, plan.nodes, plan.groups,
                          network=sc.network,
                          seed=seed if seed is not None else sc.seed,
                          backend=backend, proxies=plan.proxies,
                          trace_path=trace_path)
    for req in sc.workload:
        cluster.schedule_request(req["tick"], req["client"], req["handler"],
                                 req["fields"], message_id=req["message_id"])
    for tick, prefix in sc.failures:
        cluster.schedule_failure(tick, prefix)
    return cluster


def run_scenario(sc: Scenario, backend: str = "graph",
                 seed: Optional[int] = None, trace_path=None) -> Cluster:
    cluster = build_scenario_cluster(sc, backend=backend, seed=seed,
                                     trace_path=trace_path)
    try:
        cluster.run_to_quiescence(max_ticks=sc.max_ticks)
    finally:
        cluster.close()
    return cluster
