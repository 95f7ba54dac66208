"""Deterministic multi-node simulator.

A cluster runs one transducer per worker node over a simulated network with
seeded random delays and optional duplication. Messages are never lost to a
live node; nodes fail crash-stop, taking queued and in-flight messages with
them. Reruns with the same seed and scenario are byte-identical, including
the emitted trace.

Replicated handlers fan requests out to every replica. Serializable
handlers are sequenced: only the lowest-numbered live replica processes
client requests; accepted requests are forwarded to the other replicas as
ordered commit records which they apply in sequence order.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field as dfield
from typing import Optional

from .ir import MESSAGE_ID, Program, response_mailbox
from .state import Row, canonical_state, encode_value
from .transducer import Transducer

ORDERED = "_ordered"

DOMAIN_LEVELS = ("dc", "az", "rack", "vm")


class NoQuiescence(Exception):
    """The cluster still had activity at the tick limit."""


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    role: str = "main"            # worker role, or "proxy"
    domain: tuple = ()            # failure-domain path, dc/az/rack/vm order
    behavior: str = "worker"      # "worker" | "proxy"


@dataclass
class TraceEvent:
    tick: int
    kind: str
    node: Optional[str]
    detail: dict

    def to_json(self) -> str:
        return json.dumps(
            {"tick": self.tick, "kind": self.kind, "node": self.node,
             "detail": self.detail},
            sort_keys=True)


@dataclass(frozen=True)
class NetworkModel:
    delay_min: int = 1
    delay_max: int = 20
    dup_prob: float = 0.0

    def __post_init__(self):
        if self.delay_min < 1 or self.delay_max < self.delay_min:
            raise ValueError("delays must satisfy 1 <= min <= max")


@dataclass
class _InFlight:
    deliver_tick: int
    seq: int
    dest: str                      # node id or "client:<id>"
    mailbox: str
    payload: Row


def domain_prefix_matches(domain: tuple, prefix: tuple) -> bool:
    return tuple(domain[:len(prefix)]) == tuple(prefix)


class _ProxyState:
    """Client-facing fan-out node: forwards each request id to the replica
    group, retransmits when every recipient has crashed, and forwards the
    first response per request id back to the client."""

    def __init__(self):
        self.inbox: list = []
        self.seen_requests: set = set()
        self.seen_responses: set = set()
        self.pending: dict = {}  # mid -> {"mailbox", "payload", "dests", "dead_logged"}


class Cluster:
    def __init__(self, program: Program, nodes, groups, network=None,
                 seed: int = 0, backend: str = "graph",
                 proxies=None, trace_path=None, max_rounds: int = 10000):
        """groups: handler name -> ordered list of worker node ids.
        proxies: handler name -> proxy node id (optional per handler)."""
        self.program = program
        self.network = network or NetworkModel()
        self.rng = random.Random(seed)
        self.backend = backend
        self.groups = {h: list(ids) for h, ids in groups.items()}
        self.proxies = dict(proxies or {})
        self.specs = {s.node_id: s for s in nodes}
        self.nodes: dict = {}
        self.proxy_state: dict = {}
        for s in nodes:
            if s.behavior == "proxy":
                self.proxy_state[s.node_id] = _ProxyState()
            else:
                self.nodes[s.node_id] = Transducer(
                    program, role=s.role, backend=backend, max_rounds=max_rounds)
        self.alive = {s.node_id: True for s in nodes}
        self.tick = 0
        self.in_flight: list = []
        self._seq = 0
        self._mid = 0
        self.trace: list = []
        self.trace_path = trace_path
        self._trace_file = open(trace_path, "w") if trace_path else None
        self.pending_injections: list = []   # (tick, order, client, mailbox, payload)
        self.pending_failures: list = []     # (tick, domain prefix)
        self.client_of: dict = {}            # message_id -> client id
        self.responses: dict = {}            # client -> {message_id: payload}
        self.response_log: list = []         # every response delivery, in order
        self.sink_outputs: dict = {}         # sink mailbox -> payload list
        self.request_payload: dict = {}      # message_id -> (mailbox, payload)
        self._commit_seq: dict = {}          # handler -> next seq to assign
        self._expect_seq: dict = {}          # (node, handler) -> next seq to apply
        self._held: dict = {}                # (node, handler) -> {seq: payload}
        self._serial_seen: dict = {}         # node -> set of message ids
        self._committed: dict = {}           # message id -> accepted/rejected
        self._handler_names = {h.name for h in program.handlers}
        self._serializable = {h.name for h in program.handlers
                              if h.consistency.level == "serializable"}
        self._reply_of = {response_mailbox(h.name): h.name
                          for h in program.handlers}
        self._sinks = set(program.sinks)

    # --- bookkeeping --------------------------------------------------------
    def _emit(self, kind, node, **detail):
        ev = TraceEvent(self.tick, kind, node, detail)
        self.trace.append(ev)
        if self._trace_file:
            self._trace_file.write(ev.to_json() + "\n")

    def close(self):
        if self._trace_file:
            self._trace_file.close()
            self._trace_file = None

    def new_message_id(self) -> str:
        self._mid += 1
        return f"m{self._mid:06d}"

    def live_group(self, handler: str) -> list:
        return [n for n in self.groups.get(handler, []) if self.alive.get(n)]

    def sequencer(self, handler: str) -> Optional[str]:
        live = self.live_group(handler)
        return min(live) if live else None

    # --- workload -----------------------------------------------------------
    def schedule_request(self, tick: int, client: str, handler: str, fields: dict,
                         message_id: Optional[str] = None):
        mid = message_id or self.new_message_id()
        payload = Row(dict(fields, **{MESSAGE_ID: mid}))
        self.client_of[mid] = client
        self.request_payload[mid] = (handler, payload)
        self.pending_injections.append(
            (tick, len(self.pending_injections), client, handler, payload))
        return mid

    def inject_failure(self, domain_prefix):
        """Crash-stop every node under the failure-domain prefix."""
        prefix = tuple(domain_prefix)
        matched = False
        for nid, spec in sorted(self.specs.items()):
            if domain_prefix_matches(spec.domain, prefix):
                matched = True
                if self.alive.get(nid):
                    self.alive[nid] = False
                    self._emit("Crashed", nid, domain=list(spec.domain))
        if not matched:
            raise KeyError(f"no node under failure domain {prefix!r}")
        # in-flight messages to crashed nodes are lost
        self.in_flight = [m for m in self.in_flight
                          if m.dest in ("sink",)
                          or m.dest.startswith("client:")
                          or self.alive.get(m.dest)]

    def schedule_failure(self, tick: int, domain_prefix):
        self.pending_failures.append((tick, tuple(domain_prefix)))

    def recover(self, node_id: str):
        """Crash-stop recovery: the node rejoins with empty state."""
        spec = self.specs[node_id]
        if spec.behavior == "proxy":
            self.proxy_state[node_id] = _ProxyState()
        else:
            self.nodes[node_id] = Transducer(
                self.program, role=spec.role, backend=self.backend)
        self.alive[node_id] = True
        self._serial_seen.pop(node_id, None)
        self._emit("Recovered", node_id, domain=list(spec.domain))

    # --- message routing ----------------------------------------------------
    def _dests(self, mailbox: str, payload: Row, sender: Optional[str]) -> list:
        if mailbox in self._handler_names:
            proxy = self.proxies.get(mailbox)
            from_client = sender is None
            if proxy is not None and from_client and self.alive.get(proxy):
                return [proxy]
            if mailbox in self._serializable and ORDERED not in payload:
                seq = self.sequencer(mailbox)
                return [seq] if seq else []
            group = self.live_group(mailbox)
            if group:
                return list(group)
            # unreplicated handler: any live worker hosting the role
            role = self.program.handler_map[mailbox].role
            cands = sorted(n for n, s in self.specs.items()
                           if s.behavior == "worker" and s.role == role
                           and self.alive.get(n))
            return cands[:1]
        if mailbox in self._reply_of:
            handler = self._reply_of[mailbox]
            proxy = self.proxies.get(handler)
            if proxy is not None and sender != proxy and self.alive.get(proxy):
                return [proxy]
            mid = payload.get(MESSAGE_ID)
            client = self.client_of.get(mid)
            return [f"client:{client}"] if client is not None else []
        if mailbox in self._sinks:
            return ["sink"]
        return []

    def _post(self, dest: str, mailbox: str, payload: Row):
        delay = self.rng.randint(self.network.delay_min, self.network.delay_max)
        self._seq += 1
        self.in_flight.append(_InFlight(self.tick + delay, self._seq,
                                        dest, mailbox, payload))
        self._emit("Sent", None, dest=dest, mailbox=mailbox,
                   deliver_tick=self.tick + delay,
                   message_id=payload.get(MESSAGE_ID))
        if self.network.dup_prob and self.rng.random() < self.network.dup_prob:
            delay2 = self.rng.randint(self.network.delay_min, self.network.delay_max)
            self._seq += 1
            self.in_flight.append(_InFlight(self.tick + delay2, self._seq,
                                            dest, mailbox, payload))
            self._emit("Duplicated", None, dest=dest, mailbox=mailbox,
                       deliver_tick=self.tick + delay2,
                       message_id=payload.get(MESSAGE_ID))

    def _route(self, mailbox: str, payload: Row, sender: Optional[str]):
        for dest in self._dests(mailbox, payload, sender):
            self._post(dest, mailbox, payload)

    # --- delivery -----------------------------------------------------------
    def _deliver_due(self):
        due = sorted((m for m in self.in_flight if m.deliver_tick <= self.tick),
                     key=lambda m: (m.deliver_tick, m.seq))
        self.in_flight = [m for m in self.in_flight if m.deliver_tick > self.tick]
        for m in due:
            if m.dest == "sink":
                self.sink_outputs.setdefault(m.mailbox, []).append(m.payload)
                self._emit("Delivered", "sink", mailbox=m.mailbox)
                continue
            if m.dest.startswith("client:"):
                self._deliver_client(m)
                continue
            if not self.alive.get(m.dest):
                self._emit("Dropped", m.dest, mailbox=m.mailbox,
                           message_id=m.payload.get(MESSAGE_ID))
                continue
            if m.dest in self.proxy_state:
                self.proxy_state[m.dest].inbox.append((m.mailbox, m.payload))
                self._emit("Delivered", m.dest, mailbox=m.mailbox,
                           message_id=m.payload.get(MESSAGE_ID))
                continue
            self._deliver_worker(m)

    def _deliver_client(self, m: _InFlight):
        client = m.dest.split(":", 1)[1]
        mid = m.payload.get(MESSAGE_ID)
        box = self.responses.setdefault(client, {})
        fresh = mid not in box
        if fresh:
            box[mid] = m.payload
        self.response_log.append((self.tick, client, mid, m.payload, fresh))
        self._emit("Response", None, client=client, message_id=mid,
                   duplicate=not fresh)

    def _deliver_worker(self, m: _InFlight):
        node = self.nodes[m.dest]
        payload = m.payload
        if m.mailbox in self._serializable:
            if ORDERED in payload:
                # commit records apply strictly in sequence order
                seq = payload[ORDERED]
                key = (m.dest, m.mailbox)
                self._held.setdefault(key, {})[seq] = payload
                self._drain_held(key)
                return
            seen = self._serial_seen.setdefault(m.dest, set())
            mid = payload.get(MESSAGE_ID)
            # a retransmission may reach a new sequencer after the original
            # already decided; the decided outcome must not run twice
            if mid in seen or mid in self._committed:
                self._emit("Deduplicated", m.dest, mailbox=m.mailbox,
                           message_id=mid)
                return
            seen.add(mid)
        node.deliver(m.mailbox, payload)
        self._emit("Delivered", m.dest, mailbox=m.mailbox,
                   message_id=payload.get(MESSAGE_ID))

    def _drain_held(self, key):
        node_id, handler = key
        expect = self._expect_seq.setdefault(key, 0)
        held = self._held.get(key, {})
        while expect in held:
            payload = held.pop(expect)
            self.nodes[node_id].deliver(handler, payload)
            self._emit("Delivered", node_id, mailbox=handler, ordered=expect,
                       message_id=payload.get(MESSAGE_ID))
            expect += 1
        self._expect_seq[key] = expect

    # --- tick ---------------------------------------------------------------
    def step(self) -> bool:
        """One global tick. Returns True if anything happened."""
        active = False
        for (t, prefix) in sorted(self.pending_failures):
            if t == self.tick:
                self.inject_failure(prefix)
                active = True
        self.pending_failures = [x for x in self.pending_failures
                                 if x[0] > self.tick]
        for (t, _, client, mailbox, payload) in sorted(self.pending_injections):
            if t == self.tick:
                self._emit("Injected", None, client=client, mailbox=mailbox,
                           message_id=payload.get(MESSAGE_ID))
                self._route(mailbox, payload, sender=None)
                active = True
        self.pending_injections = [x for x in self.pending_injections
                                   if x[0] > self.tick]
        self._deliver_due()

        for nid in sorted(self.proxy_state):
            if not self.alive.get(nid):
                continue
            if self._proxy_tick(nid):
                active = True
            if self._proxy_retry(nid):
                active = True

        for nid in sorted(self.nodes):
            if not self.alive.get(nid):
                continue
            node = self.nodes[nid]
            if not node.has_pending_input():
                continue
            result = node.tick()
            if result.fired or result.sends:
                active = True
            for out in result.sends:
                self._route(out.mailbox, out.payload, sender=nid)
            self._serial_results(nid, result)
        self._emit("TickCompleted", None, active=active)
        self.tick += 1
        return active

    def _proxy_tick(self, nid: str) -> bool:
        st = self.proxy_state[nid]
        if not st.inbox:
            return False
        inbox, st.inbox = st.inbox, []
        for mailbox, payload in inbox:
            mid = payload.get(MESSAGE_ID)
            if mailbox in self._handler_names:
                if mid in st.seen_requests:
                    continue
                st.seen_requests.add(mid)
                dests = self._proxy_dests(mailbox)
                for dest in dests:
                    self._post(dest, mailbox, payload)
                st.pending[mid] = {"mailbox": mailbox, "payload": payload,
                                   "dests": tuple(dests), "dead_logged": False}
            elif mailbox in self._reply_of:
                st.pending.pop(mid, None)
                if mid in st.seen_responses:
                    continue
                st.seen_responses.add(mid)
                client = self.client_of.get(mid)
                if client is not None:
                    self._post(f"client:{client}", mailbox, payload)
        return True

    def _proxy_dests(self, mailbox: str) -> list:
        if mailbox in self._serializable:
            seq = self.sequencer(mailbox)
            return [seq] if seq else []
        return self.live_group(mailbox)

    def _proxy_retry(self, nid: str) -> bool:
        """Retransmit pending requests whose recipients have all crashed."""
        st = self.proxy_state[nid]
        active = False
        for mid in sorted(st.pending):
            entry = st.pending[mid]
            if any(self.alive.get(d) for d in entry["dests"]):
                continue
            dests = self._proxy_dests(entry["mailbox"])
            if not dests:
                if not entry["dead_logged"]:
                    entry["dead_logged"] = True
                    self._emit("NoLiveReplica", nid, mailbox=entry["mailbox"],
                               message_id=mid)
                    active = True
                continue
            for dest in dests:
                self._post(dest, entry["mailbox"], entry["payload"])
            entry["dests"] = tuple(dests)
            entry["dead_logged"] = False
            self._emit("Retransmitted", nid, mailbox=entry["mailbox"],
                       message_id=mid, dests=list(dests))
            active = True
        return active

    def _serial_results(self, nid: str, result):
        for mid, status in sorted(result.statuses.items()):
            entry = self.request_payload.get(mid)
            if entry is None:
                continue  # commit record applied at a backup
            handler, payload = entry
            if self.sequencer(handler) != nid:
                continue
            self._committed[mid] = status
            if status == "accepted":
                seq = self._commit_seq.get(handler, 0)
                self._commit_seq[handler] = seq + 1
                record = Row(dict(payload, **{ORDERED: seq}))
                for backup in self.live_group(handler):
                    if backup != nid:
                        self._post(backup, handler, record)
            reply = Row({MESSAGE_ID: mid, "status": status})
            self._route(response_mailbox(handler), reply, sender=nid)

    # --- run loop -----------------------------------------------------------
    def _has_work(self) -> bool:
        if self.in_flight or self.pending_injections:
            return True
        if any(st.inbox for st in self.proxy_state.values()):
            return True
        return False

    def run_to_quiescence(self, max_ticks: int = 10000) -> int:
        idle_streak = 0
        while self.tick < max_ticks:
            # idle fast-forward: nothing can happen until the next delivery
            due = ([m.deliver_tick for m in self.in_flight]
                   + [x[0] for x in self.pending_injections]
                   + [x[0] for x in self.pending_failures])
            if due and min(due) > self.tick and idle_streak > 0:
                self.tick = min(due)
            active = self.step()
            if active:
                idle_streak = 0
            else:
                idle_streak += 1
                if not self._has_work():
                    return self.tick
        if self._has_work():
            raise NoQuiescence(f"still active after {max_ticks} ticks")
        return self.tick

    # --- inspection ---------------------------------------------------------
    def node_state(self, node_id: str, **kw) -> dict:
        return canonical_state(self.nodes[node_id].state, **kw)

    def dump_states(self) -> dict:
        out = {}
        for nid in sorted(self.nodes):
            out[nid] = self.node_state(nid)
        return out

    def record_state_dump(self):
        for nid in sorted(self.nodes):
            if self.alive.get(nid):
                self._emit("StateDump", nid, state=self.node_state(nid))


def trace_text(cluster: Cluster) -> str:
    return "\n".join(ev.to_json() for ev in cluster.trace) + "\n"
