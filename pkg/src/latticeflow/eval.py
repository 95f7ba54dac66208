"""Expression evaluation shared by the direct interpreter and the operator
runtime.

Leaf evaluation (arithmetic, field access, membership) is common; the two
backends differ in how they evaluate comprehensions and named queries, which
they provide through the :class:`EvalContext` hooks.

A lookup on a missing key evaluates to the ``MISSING`` sentinel, which makes
enclosing generators contribute nothing and guards evaluate false, keeping
queries total.
"""

from __future__ import annotations

from typing import Iterable

from . import lattice
from .ir import (
    BinOp, Comp, Data, Field, Fold, In, Index, Len, Lit, Lookup, MakeRow,
    Not, Record, RangeOf, Slice, TupleOf, Var,
)
from .lattice import scalar_key
from .state import Row, Snapshot, UdfFailure, default_row


class _Missing:
    __slots__ = ()

    def __repr__(self):
        return "MISSING"

    def __bool__(self):
        return False


MISSING = _Missing()


class EvalContext:
    """Per-tick evaluation context over an immutable snapshot."""

    def __init__(self, program, snapshot: Snapshot, firing=None):
        self.program = program
        self.snapshot = snapshot
        self.firing = firing if firing is not None else {}
        self.query_overrides = {}
        self.udf_memo = {}
        self.udf_invocations = 0
        self._query_names = set(program.query_map)
        self._table_classes = {
            d.name: program.class_map[d.cls]
            for d in program.data if d.kind == "table"
        }

    # --- backend hooks ------------------------------------------------------
    def query_value(self, name: str) -> frozenset:
        raise NotImplementedError

    def eval_comp(self, e: Comp, env: dict) -> frozenset:
        raise NotImplementedError

    # --- collections --------------------------------------------------------
    def table_rows(self, name: str):
        table = self.snapshot.tables[name]
        return tuple(row for _, row in sorted(table.items(),
                                              key=lambda kv: scalar_key(kv[0])))

    def table_row(self, name: str, key: tuple):
        cls = self._table_classes[name]
        if not isinstance(key, tuple):
            key = (key,)
        if len(cls.key) == 1 and len(key) == 1:
            pass
        return self.snapshot.tables[name].get(key, MISSING)

    def collection(self, name: str):
        """Ordered view of a named collection for iteration."""
        if name in self.query_overrides:
            return self.query_overrides[name]
        if name in self._query_names:
            vals = self.query_value(name)
            return tuple(sorted(vals, key=_order_key))
        if name in self.firing:
            return tuple(self.firing[name])
        if name in self.snapshot.tables:
            return self.table_rows(name)
        if name in self.snapshot.vars:
            v = self.snapshot.vars[name]
            if isinstance(v, lattice.SetUnion):
                return tuple(sorted(v.elems, key=scalar_key))
            if isinstance(v, frozenset):
                return tuple(sorted(v, key=scalar_key))
            if isinstance(v, (lattice.BoolOr, lattice.MaxInt, lattice.MinInt,
                              lattice.MapUnion, lattice.Pair)):
                return lattice.unwrap(v)
            return v
        if name in self.snapshot.mailboxes:
            return tuple(self.snapshot.mailboxes[name])
        raise KeyError(f"unknown collection {name!r}")

    # --- UDFs ---------------------------------------------------------------
    def call_udf(self, name: str, args: tuple):
        """Invoke a host UDF, memoized per (input, tick)."""
        key = (name, args)
        if key in self.udf_memo:
            return self.udf_memo[key]
        fn = self.program.udf_map[name].fn
        if fn is None:
            raise UdfFailure(f"udf {name!r} has no host implementation")
        try:
            result = fn(*args)
        except Exception as exc:  # propagate with context
            raise UdfFailure(f"udf {name!r} failed: {exc}") from exc
        self.udf_invocations += 1
        self.udf_memo[key] = result
        return result


def _order_key(v):
    if isinstance(v, Row):
        return (6, tuple((k, _order_key(x)) for k, x in sorted(v.items())))
    if isinstance(v, frozenset):
        return (5, tuple(sorted(_order_key(x) for x in v)))
    if isinstance(v, tuple):
        return (4, tuple(_order_key(x) for x in v))
    if v is None:
        return (-1, 0)
    return scalar_key(v)


def iter_source(value) -> Iterable:
    """Iterate a generator source value; MISSING yields nothing."""
    if value is MISSING:
        return ()
    if isinstance(value, Row):
        return (value,)
    if isinstance(value, frozenset):
        return sorted(value, key=_order_key)
    if isinstance(value, (tuple, list)):
        return value
    raise TypeError(f"not iterable: {value!r}")


def bind(env: dict, binder, item) -> dict:
    out = dict(env)
    if isinstance(binder, tuple):
        for name, v in zip(binder, item):
            out[name] = v
    else:
        out[binder] = item
    return out


_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "//": lambda a, b: a // b,
    "%": lambda a, b: a % b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def eval_expr(e, env: dict, ctx: EvalContext):
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Field):
        base = eval_expr(e.base, env, ctx)
        if base is MISSING:
            return MISSING
        return base.get(e.name, MISSING)
    if isinstance(e, Data):
        return ctx.collection(e.name)
    if isinstance(e, Lookup):
        key = eval_expr(e.key, env, ctx)
        if key is MISSING:
            return MISSING
        return ctx.table_row(e.data, key if isinstance(key, tuple) else (key,))
    if isinstance(e, BinOp):
        if e.op == "and":
            left = eval_expr(e.left, env, ctx)
            if left is MISSING or not left:
                return False if left is not MISSING else MISSING
            return eval_expr(e.right, env, ctx)
        if e.op == "or":
            left = eval_expr(e.left, env, ctx)
            if left is not MISSING and left:
                return left
            return eval_expr(e.right, env, ctx)
        left = eval_expr(e.left, env, ctx)
        right = eval_expr(e.right, env, ctx)
        if left is MISSING or right is MISSING:
            return MISSING
        return _ARITH[e.op](left, right)
    if isinstance(e, Not):
        v = eval_expr(e.expr, env, ctx)
        return MISSING if v is MISSING else not v
    if isinstance(e, In):
        item = eval_expr(e.item, env, ctx)
        coll = eval_expr(e.coll, env, ctx)
        if item is MISSING or coll is MISSING:
            return MISSING
        found = item in coll
        return (not found) if e.negated else found
    if isinstance(e, TupleOf):
        items = tuple(eval_expr(x, env, ctx) for x in e.items)
        if any(x is MISSING for x in items):
            return MISSING
        return items
    if isinstance(e, Record):
        fields = {}
        for name, sub in e.fields:
            v = eval_expr(sub, env, ctx)
            if v is MISSING:
                return MISSING
            fields[name] = v
        return Row(fields)
    if isinstance(e, MakeRow):
        fields = {}
        for name, sub in e.fields:
            v = eval_expr(sub, env, ctx)
            if v is MISSING:
                return MISSING
            fields[name] = v
        return default_row(ctx.program.class_map[e.cls], fields)
    if isinstance(e, Comp):
        return ctx.eval_comp(e, env)
    if isinstance(e, Fold):
        return eval_fold(e, env, ctx)
    if isinstance(e, Len):
        v = eval_expr(e.expr, env, ctx)
        return MISSING if v is MISSING else len(v)
    if isinstance(e, RangeOf):
        stop = eval_expr(e.stop, env, ctx)
        return MISSING if stop is MISSING else tuple(range(stop))
    if isinstance(e, Index):
        base = eval_expr(e.base, env, ctx)
        idx = eval_expr(e.index, env, ctx)
        if base is MISSING or idx is MISSING:
            return MISSING
        try:
            return base[idx]
        except (IndexError, KeyError):
            return MISSING
    if isinstance(e, Slice):
        base = eval_expr(e.base, env, ctx)
        start = eval_expr(e.start, env, ctx)
        stop = eval_expr(e.stop, env, ctx)
        if MISSING in (base, start, stop):
            return MISSING
        return tuple(base[start:stop])
    raise TypeError(f"unknown expression node: {e!r}")


def eval_fold(e: Fold, env: dict, ctx: EvalContext):
    src = eval_expr(e.source, env, ctx)
    if src is MISSING:
        src = ()
    values = list(iter_source(src))
    return apply_fold(e.kind, values, ctx)


def apply_fold(kind: str, values: list, ctx: EvalContext):
    if kind == "count":
        return len(values)
    if kind in ("sum", "min", "max"):
        # (ix, val) pairs aggregate the val side: folding a set of bare
        # values would conflate equal contributions from distinct sources
        if values and all(isinstance(v, tuple) and len(v) == 2 for v in values):
            values = [v for _, v in values]
    if kind == "sum":
        return sum(values)
    if kind == "min":
        return min(values, key=scalar_key) if values else MISSING
    if kind == "max":
        return max(values, key=scalar_key) if values else MISSING
    if kind == "set":
        return frozenset(values)
    if kind == "merge":
        if not values:
            return MISSING
        acc = values[0]
        for v in values[1:]:
            acc = lattice.merge(acc, v)
        return acc
    if kind == "array_agg":
        # values are (ix, val) pairs; emit vals ordered by ix
        pairs = sorted(values, key=lambda p: scalar_key(p[0]))
        return tuple(v for _, v in pairs)
    if kind.startswith("udf:"):
        name = kind[4:]
        ordered = sorted(values, key=_order_key)
        if not ordered:
            return MISSING
        acc = ordered[0]
        for v in ordered[1:]:
            acc = ctx.call_udf(name, (acc, v))
        return acc
    raise ValueError(f"unknown fold kind {kind!r}")


def truthy(v) -> bool:
    return v is not MISSING and bool(v)
