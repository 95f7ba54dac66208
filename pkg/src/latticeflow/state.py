"""Per-node transducer state: tables, vars, mailboxes, and the end-of-tick
commit of buffered effects.

Tables and vars are mutated only between ticks; all reads during a tick go
against an immutable snapshot. Rows are frozen mappings so snapshots are
cheap shallow copies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dfield
from typing import Mapping, Optional

from . import lattice
from .ir import ClassDecl, DataDecl, Program
from .lattice import scalar_key


class AmbiguousAssign(Exception):
    """Two assignments wrote different values to one target in one tick."""


class FixpointDivergence(Exception):
    """Recursive evaluation exceeded the iteration cap."""


class UdfFailure(Exception):
    """A host UDF raised; the original error is chained."""


class Row(Mapping):
    """Immutable, hashable field mapping used for table rows and messages."""

    __slots__ = ("_items", "_map", "_hash")

    def __init__(self, fields=(), **kw):
        if isinstance(fields, Mapping):
            fields = fields.items()
        m = dict(fields)
        m.update(kw)
        self._items = tuple(sorted(m.items()))
        self._map = m
        self._hash = hash(self._items)

    def __getitem__(self, key):
        return self._map[key]

    def __iter__(self):
        return iter(self._map)

    def __len__(self):
        return len(self._map)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if isinstance(other, Row):
            return self._items == other._items
        return NotImplemented

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self._items)
        return f"Row({inner})"

    def updated(self, **kw) -> "Row":
        m = dict(self._map)
        m.update(kw)
        return Row(m)


_FIELD_DEFAULTS = {
    "int": None, "str": None, "ref": None, "opaque": None,
    "bool": False, "set": frozenset(),
    "max": lattice.INT_MIN, "min": lattice.INT_MAX,
}


def default_row(cls: ClassDecl, fields: Mapping) -> Row:
    out = {}
    for fname, ftype in cls.fields:
        out[fname] = fields.get(fname, _FIELD_DEFAULTS[ftype])
    return Row(out)


def _merge_scalar(a, b):
    # write-once scalars: absent loses; conflicting writes keep the scalar
    # max, which is deterministic, commutative and idempotent
    if a is None:
        return b
    if b is None or a == b:
        return a
    return max(a, b, key=scalar_key)


def _as_set(v) -> frozenset:
    # merging a scalar into a set field inserts it as one element
    if isinstance(v, frozenset):
        return v
    if isinstance(v, (set, list)):
        return frozenset(v)
    return frozenset([v])


def merge_field(ftype: str, a, b):
    if ftype == "bool":
        return bool(a) or bool(b)
    if ftype == "set":
        return _as_set(a) | _as_set(b)
    if ftype == "max":
        return max(a, b)
    if ftype == "min":
        return min(a, b)
    return _merge_scalar(a, b)


def merge_rows(cls: ClassDecl, a: Row, b: Row) -> Row:
    out = {}
    for fname, ftype in cls.fields:
        out[fname] = merge_field(ftype, a.get(fname), b.get(fname))
    return Row(out)


def row_key(cls: ClassDecl, row: Mapping) -> tuple:
    return tuple(row.get(k) for k in cls.key)


@dataclass
class OutMsg:
    mailbox: str
    payload: Row
    dest_hint: Optional[str] = None  # reply-to routing for responses


@dataclass
class Effects:
    """Buffered within-tick effects, applied atomically at commit."""

    table_merges: list = dfield(default_factory=list)   # (name, Row)
    field_merges: list = dfield(default_factory=list)   # (name, key, field, value)
    var_merges: list = dfield(default_factory=list)     # (name, value)
    assigns: dict = dfield(default_factory=dict)        # target tuple -> value
    deletes: list = dfield(default_factory=list)        # (name, key-or-None)
    sends: list = dfield(default_factory=list)          # OutMsg
    consumed: dict = dfield(default_factory=dict)       # mailbox -> list[Row]

    def assign(self, target: tuple, value):
        if target in self.assigns and self.assigns[target] != value:
            raise AmbiguousAssign(
                f"conflicting assignments to {target}: "
                f"{self.assigns[target]!r} vs {value!r}")
        self.assigns[target] = value


class NodeState:
    """Mutable between ticks only; reads during a tick use `snapshot()`."""

    def __init__(self, program: Program):
        self.program = program
        self.tables: dict = {}
        self.vars: dict = {}
        self.mailboxes: dict = {name: [] for name in program.mailboxes}
        self.tick = 0
        for d in program.data:
            if d.kind == "table":
                self.tables[d.name] = {}
            elif d.shape is not None:
                init = d.init if d.init is not None else lattice.bottom(d.shape)
                self.vars[d.name] = lattice.wrap(init, d.shape)
            else:
                self.vars[d.name] = d.init

    # --- snapshots ----------------------------------------------------------
    def snapshot(self) -> "Snapshot":
        return Snapshot(
            tables={n: dict(t) for n, t in self.tables.items()},
            vars=dict(self.vars),
            mailboxes={n: list(m) for n, m in self.mailboxes.items()},
        )

    def fork(self) -> "NodeState":
        """Cheap copy for rollback; rows and values are immutable."""
        other = NodeState.__new__(NodeState)
        other.program = self.program
        other.tables = {n: dict(t) for n, t in self.tables.items()}
        other.vars = dict(self.vars)
        other.mailboxes = {n: list(m) for n, m in self.mailboxes.items()}
        other.tick = self.tick
        return other

    def deliver(self, mailbox: str, payload: Row):
        self.mailboxes.setdefault(mailbox, []).append(payload)

    def has_pending_input(self) -> bool:
        handler_boxes = {h.name for h in self.program.handlers}
        return any(self.mailboxes.get(n) for n in handler_boxes)

    # --- commit -------------------------------------------------------------
    def commit(self, eff: Effects, advance: bool = True):
        classes = self.program.class_map
        datam = self.program.data_map

        def table_cls(name) -> ClassDecl:
            return classes[datam[name].cls]

        for name, row in eff.table_merges:
            cls = table_cls(name)
            full = default_row(cls, row)
            key = row_key(cls, full)
            table = self.tables[name]
            table[key] = merge_rows(cls, table[key], full) if key in table else full

        for name, key, fname, value in eff.field_merges:
            cls = table_cls(name)
            table = self.tables[name]
            if key in table:
                old = table[key]
            else:
                seed = dict(zip(cls.key, key))
                old = default_row(cls, seed)
            ftype = cls.field_map[fname]
            table[key] = old.updated(**{fname: merge_field(ftype, old.get(fname), value)})

        for name, value in eff.var_merges:
            shape = datam[name].shape
            self.vars[name] = lattice.merge(self.vars[name], lattice.wrap(value, shape))

        for (name, key, fname), value in eff.assigns.items():
            if key is None and fname is None:
                self.vars[name] = value
            else:
                cls = table_cls(name)
                table = self.tables[name]
                if key in table:
                    old = table[key]
                else:
                    old = default_row(cls, dict(zip(cls.key, key)))
                table[key] = old.updated(**{fname: value})

        for name, key in eff.deletes:
            if name in self.tables:
                if key is None:
                    self.tables[name] = {}
                else:
                    self.tables[name].pop(key, None)
            else:
                d = datam[name]
                self.vars[name] = (lattice.bottom(d.shape)
                                   if d.shape is not None else None)

        for mailbox, msgs in eff.consumed.items():
            remaining = list(self.mailboxes.get(mailbox, []))
            for m in msgs:
                remaining.remove(m)
            self.mailboxes[mailbox] = remaining

        if advance:
            self.tick += 1


class Snapshot:
    """Frozen per-tick view of node state."""

    def __init__(self, tables, vars, mailboxes):
        self.tables = tables
        self.vars = vars
        self.mailboxes = mailboxes


# --- canonical serialization -------------------------------------------------

def encode_value(v):
    if isinstance(v, (lattice.BoolOr, lattice.MaxInt, lattice.MinInt,
                      lattice.SetUnion, lattice.MapUnion, lattice.Pair)):
        return {"lattice": lattice.encode(v)}
    if isinstance(v, frozenset):
        return {"set": [encode_value(x) for x in sorted(v, key=scalar_key)]}
    if isinstance(v, tuple):
        return {"tuple": [encode_value(x) for x in v]}
    if isinstance(v, Row):
        return {"row": {k: encode_value(x) for k, x in v.items()}}
    return v


def canonical_state(state: NodeState, include_mailboxes=True, strip_ids=False) -> dict:
    def enc_payload(row: Row):
        if strip_ids:
            row = Row({k: v for k, v in row.items()
                       if k not in ("_message_id", "_reply_to")})
        return encode_value(row)

    out = {
        "tables": {
            name: [[encode_value(k), encode_value(row)]
                   for k, row in sorted(table.items(), key=lambda kv: scalar_key(kv[0]))]
            for name, table in sorted(state.tables.items())
        },
        "vars": {name: encode_value(v) for name, v in sorted(state.vars.items())},
    }
    if include_mailboxes:
        out["mailboxes"] = {
            name: sorted((json.dumps(enc_payload(m), sort_keys=True) for m in msgs))
            for name, msgs in sorted(state.mailboxes.items()) if msgs
        }
    return out


def state_json(state: NodeState, **kw) -> str:
    return json.dumps(canonical_state(state, **kw), sort_keys=True)
