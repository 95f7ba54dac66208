"""Tick execution for one logical node.

Each tick reads an immutable snapshot, evaluates all handler bodies against
it, buffers the resulting effects, and commits them atomically at the end of
the tick. Sends buffered during a tick become visible no earlier than the
next tick, even to the sending node itself.

Handlers marked serializable process at most one request per tick: the
request runs against a forked copy of the state, the handler's invariants
are checked on the outcome, and the fork is either adopted (accepted) or
discarded (rejected).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Optional

from .eval import MISSING, _order_key, bind, eval_expr, truthy
from .interp import InterpContext
from .ir import (
    Assign, Comp, Delete, Field, ForEach, Handler, MergeMutation, Program,
    Send, UdfCall, Var, _MSG, MESSAGE_ID, REPLY_TO, desugar_handler,
    response_mailbox, subst,
)
from .runtime import GraphContext, compile_queries
from .state import Effects, NodeState, OutMsg, Row

ACCEPTED = "accepted"
REJECTED = "rejected"


@dataclass
class TickResult:
    tick: int
    fired: list = dfield(default_factory=list)        # handler names that consumed input
    sends: list = dfield(default_factory=list)        # OutMsg
    statuses: dict = dfield(default_factory=dict)     # message_id -> accepted/rejected
    rounds: dict = dfield(default_factory=dict)       # fixpoint group -> iterations
    op_rows: dict = dfield(default_factory=dict)      # operator id -> rows produced
    udf_invocations: int = 0


def _param_mapping(h: Handler):
    m = {p: Field(Var(_MSG), p) for p in h.param_names}
    m[MESSAGE_ID] = Field(Var(_MSG), MESSAGE_ID)
    m[REPLY_TO] = Field(Var(_MSG), REPLY_TO)
    return m


class Transducer:
    """Single-node executor; `backend` picks the evaluation strategy."""

    def __init__(self, program: Program, role: str = "main",
                 backend: str = "graph", max_rounds: int = 10000):
        if backend not in ("graph", "interp"):
            raise ValueError(f"unknown backend {backend!r}")
        self.program = program
        self.role = role
        self.backend = backend
        self.max_rounds = max_rounds
        self.state = NodeState(program)
        self.handlers = sorted(
            (h for h in program.handlers if role is None or h.role == role),
            key=lambda h: h.name)
        self.desugared = {h.name: desugar_handler(h) for h in self.handlers}
        self.guards = {h.name: (subst(h.guard, _param_mapping(h))
                                if h.guard is not None else None)
                       for h in self.handlers}
        self.invariants = {h.name: tuple(subst(inv, _param_mapping(h))
                                         for inv in h.consistency.invariants)
                           for h in self.handlers}
        self.compiled = compile_queries(program) if backend == "graph" else None
        self.request_status: dict = {}
        self.outputs: dict = {}   # non-handler mailbox -> delivered payloads

    # --- context construction -----------------------------------------------
    def _context(self, snapshot):
        if self.backend == "graph":
            return GraphContext(self.program, snapshot, self.compiled,
                                max_rounds=self.max_rounds)
        return InterpContext(self.program, snapshot, max_rounds=self.max_rounds)

    # --- message intake -----------------------------------------------------
    def deliver(self, mailbox: str, payload: Row):
        self.state.deliver(mailbox, payload)

    def has_pending_input(self) -> bool:
        return any(self.state.mailboxes.get(h.name) for h in self.handlers)

    def _eligible(self, h: Handler, ctx) -> list:
        """Pending messages whose guard passes, in arrival order."""
        pending = self.state.mailboxes.get(h.name, [])
        guard = self.guards[h.name]
        if guard is None:
            return list(pending)
        out = []
        for msg in pending:
            if truthy(eval_expr(guard, {_MSG: msg}, ctx)):
                out.append(msg)
        return out

    # --- tick ---------------------------------------------------------------
    def tick(self) -> TickResult:
        snap = self.state.snapshot()
        ctx = self._context(snap)
        result = TickResult(tick=self.state.tick)
        eff = Effects()
        serializable = []
        for h in self.handlers:
            if h.consistency.level == "serializable":
                serializable.append(h)
                continue
            self._run_eventual(h, ctx, eff, result)
        self.state.commit(eff, advance=False)
        result.sends.extend(eff.sends)

        for h in serializable:
            self._run_serializable(h, ctx, result)

        self.state.tick += 1
        result.rounds = dict(ctx.rounds)
        result.op_rows = dict(getattr(ctx, "op_rows", {}))
        result.udf_invocations = ctx.udf_invocations
        result.statuses = {k: v for k, v in result.statuses.items()}
        return result

    def _run_eventual(self, h: Handler, ctx, eff: Effects, result: TickResult):
        msgs = self._eligible(h, ctx)
        stmts = self.desugared[h.name]
        ctx.firing[h.name] = tuple(msgs)
        try:
            for s in stmts:
                if isinstance(s, ForEach):
                    for msg in msgs:
                        self._run_body(s.body, {s.binder: msg}, ctx, eff, msg)
                else:
                    self._run_stmt(s, {}, ctx, eff, None)
        finally:
            ctx.firing.pop(h.name, None)
        if msgs:
            eff.consumed.setdefault(h.name, []).extend(msgs)
            result.fired.append(h.name)

    def _run_serializable(self, h: Handler, ctx, result: TickResult):
        msgs = self._eligible(h, ctx)
        if not msgs:
            return
        msg = msgs[0]
        stmts = self.desugared[h.name]
        fork = self.state.fork()
        eff = Effects()
        fctx = self._context(fork.snapshot())
        fctx.firing[h.name] = (msg,)
        env = {_MSG: msg}
        for s in stmts:
            if isinstance(s, ForEach):
                self._run_body(s.body, dict(env), fctx, eff, msg)
            else:
                self._run_stmt(s, {}, fctx, eff, msg)
        eff.consumed.setdefault(h.name, []).append(msg)
        fork.commit(eff, advance=False)

        check = self._context(fork.snapshot())
        ok = all(truthy(eval_expr(inv, {_MSG: msg}, check))
                 for inv in self.invariants[h.name])
        mid = msg.get(MESSAGE_ID)
        if ok:
            self.state.tables = fork.tables
            self.state.vars = fork.vars
            self.state.mailboxes = fork.mailboxes
            result.sends.extend(eff.sends)
            status = ACCEPTED
        else:
            # reject: consume the request, discard everything else
            drop = Effects(consumed={h.name: [msg]})
            self.state.commit(drop, advance=False)
            status = REJECTED
        result.fired.append(h.name)
        if mid is not None:
            self.request_status[mid] = status
            result.statuses[mid] = status

    # --- statement execution ------------------------------------------------
    def _run_body(self, body, env: dict, ctx, eff: Effects, msg: Optional[Row]):
        env = dict(env)
        for s in body:
            self._run_stmt(s, env, ctx, eff, msg)

    def _run_stmt(self, s, env: dict, ctx, eff: Effects, msg: Optional[Row]):
        when = getattr(s, "when", None)
        if when is not None and not truthy(eval_expr(when, env, ctx)):
            return
        if isinstance(s, MergeMutation):
            self._do_merge(s, env, ctx, eff)
        elif isinstance(s, Assign):
            self._do_assign(s, env, ctx, eff)
        elif isinstance(s, Delete):
            key = None
            if s.target.key is not None:
                key = _as_key(eval_expr(s.target.key, env, ctx))
                if key is MISSING:
                    return
            eff.deletes.append((s.target.data, key))
        elif isinstance(s, Send):
            self._do_send(s, env, ctx, eff, msg)
        elif isinstance(s, UdfCall):
            args = tuple(eval_expr(a, env, ctx) for a in s.args)
            if any(a is MISSING for a in args):
                return
            value = ctx.call_udf(s.udf, args)
            if s.binder is not None:
                env[s.binder] = value
        elif isinstance(s, ForEach):
            for m in ctx.snapshot.mailboxes.get(s.mailbox, []):
                self._run_body(s.body, bind(env, s.binder, m), ctx, eff, m)
        else:
            raise TypeError(f"unknown statement: {s!r}")

    def _do_merge(self, s: MergeMutation, env, ctx, eff: Effects):
        value = eval_expr(s.expr, env, ctx)
        if value is MISSING:
            return
        d = self.program.data_map[s.target.data]
        if d.kind == "table":
            if s.target.key is not None:
                key = _as_key(eval_expr(s.target.key, env, ctx))
                if key is MISSING:
                    return
                eff.field_merges.append((s.target.data, key, s.target.field, value))
            else:
                rows = value if isinstance(value, frozenset) else frozenset([value])
                for row in sorted(rows, key=_order_key):
                    if not isinstance(row, Row):
                        raise TypeError(
                            f"merge into table {s.target.data!r} needs rows, got {row!r}")
                    eff.table_merges.append((s.target.data, row))
        else:
            if isinstance(value, frozenset) and d.shape != "set":
                for v in sorted(value, key=_order_key):
                    eff.var_merges.append((s.target.data, v))
            else:
                eff.var_merges.append((s.target.data, value))

    def _do_assign(self, s: Assign, env, ctx, eff: Effects):
        value = eval_expr(s.expr, env, ctx)
        if value is MISSING:
            return
        d = self.program.data_map[s.target.data]
        if d.kind == "table":
            key = _as_key(eval_expr(s.target.key, env, ctx))
            if key is MISSING:
                return
            eff.assign((s.target.data, key, s.target.field), value)
        else:
            if d.shape is not None:
                from . import lattice
                value = lattice.wrap(value, d.shape)
            eff.assign((s.target.data, None, None), value)

    def _do_send(self, s: Send, env, ctx, eff: Effects, msg: Optional[Row]):
        value = eval_expr(s.expr, env, ctx)
        if value is MISSING:
            return
        hint = None
        if msg is not None and REPLY_TO in msg:
            hint = msg[REPLY_TO]
        payloads = (sorted(value, key=_order_key)
                    if isinstance(value, frozenset) else [value])
        for p in payloads:
            if not isinstance(p, Row):
                raise TypeError(f"send to {s.mailbox!r} needs records, got {p!r}")
            eff.sends.append(OutMsg(s.mailbox, p, hint))

    # --- local loop ----------------------------------------------------------
    def pump(self, result: TickResult):
        """Deliver this node's own sends: handler mailboxes loop back on the
        next tick, everything else is collected as output."""
        handler_boxes = {h.name for h in self.program.handlers}
        for out in result.sends:
            if out.mailbox in handler_boxes:
                self.state.deliver(out.mailbox, out.payload)
            else:
                self.outputs.setdefault(out.mailbox, []).append(out.payload)

    def run(self, max_ticks: int = 1000) -> list:
        """Tick until quiescent, looping sends back locally."""
        results = []
        for _ in range(max_ticks):
            if not self.has_pending_input():
                break
            r = self.tick()
            results.append(r)
            self.pump(r)
            if not r.fired and not r.sends:
                break  # remaining messages are guard-blocked for good
        return results


def _as_key(v):
    if v is MISSING:
        return MISSING
    return v if isinstance(v, tuple) else (v,)
