"""Operator-graph runtime backend.

Comprehensions compile to chains of Expand / HashJoin / Filter / Project
operators over binding environments; recursive query groups run semi-naive
fixpoint iteration (only newly derived facts re-enter the loop each round).
Per-operator row counts are tracked for Inspect output.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Optional, Tuple

from .analysis import _query_edges, _sccs
from .eval import EvalContext, MISSING, _order_key, bind, eval_expr, iter_source, truthy
from .ir import BinOp, Comp, Data, Expr, Gen, walk_expr
from .state import FixpointDivergence


class NonMonotoneRecursion(Exception):
    """A non-monotone operator would run inside a recursive group."""


def _free_vars(e: Expr) -> set:
    from .ir import Var
    return {s.name for s in walk_expr(e) if isinstance(s, Var)}


@dataclass
class Step:
    op_id: str
    kind: str  # expand | hashjoin | filter | project


@dataclass
class ExpandStep(Step):
    binder: object = None
    source: Expr = None
    occurrence: Optional[int] = None  # occurrence index of a recursive ref


@dataclass
class HashJoinStep(Step):
    binder: object = None
    source: Expr = None
    left_key: Expr = None   # over previously bound vars
    right_key: Expr = None  # over this expand's binder
    occurrence: Optional[int] = None


@dataclass
class FilterStep(Step):
    expr: Expr = None


@dataclass
class ProjectStep(Step):
    expr: Expr = None


@dataclass
class Chain:
    steps: list
    comp: Comp

    def recursive_refs(self, scc) -> list:
        out = []
        for s in self.steps:
            if isinstance(s, (ExpandStep, HashJoinStep)):
                if isinstance(s.source, Data) and s.source.name in scc:
                    out.append(s)
        return out


_counter = [0]


def _oid(kind: str) -> str:
    _counter[0] += 1
    return f"{kind}:{_counter[0]}"


def compile_comp(e: Comp, prefix: str = "") -> Chain:
    """Compile a comprehension into an operator chain.

    Equality filters linking a new generator to already-bound variables turn
    the generator's scan into a hash join.
    """
    steps = []
    bound: set = set()
    remaining = list(e.filters)
    occ = 0
    for g in e.gens:
        new_vars = set(g.binder) if isinstance(g.binder, tuple) else {g.binder}
        occurrence = None
        if isinstance(g.source, Data):
            occurrence = occ
            occ += 1
        join = None
        if isinstance(g.source, Data) and bound:
            for f in list(remaining):
                if (isinstance(f, BinOp) and f.op == "=="):
                    lv, rv = _free_vars(f.left), _free_vars(f.right)
                    if lv <= bound and rv and rv <= new_vars:
                        join = (f.left, f.right)
                    elif rv <= bound and lv and lv <= new_vars:
                        join = (f.right, f.left)
                    if join:
                        remaining.remove(f)
                        break
        if join:
            steps.append(HashJoinStep(_oid("hashjoin"), "hashjoin", g.binder,
                                      g.source, join[0], join[1], occurrence))
        else:
            steps.append(ExpandStep(_oid("expand"), "expand", g.binder,
                                    g.source, occurrence))
        bound |= new_vars
        # filters become runnable as soon as their variables are bound
        for f in list(remaining):
            if _free_vars(f) <= bound:
                steps.append(FilterStep(_oid("filter"), "filter", f))
                remaining.remove(f)
    for f in remaining:
        steps.append(FilterStep(_oid("filter"), "filter", f))
    steps.append(ProjectStep(_oid("project"), "project", e.output))
    return Chain(steps, e)


def run_chain(chain: Chain, env0: dict, ctx: "GraphContext",
              delta_step=None, totals=None, delta=None) -> frozenset:
    """Run a chain; when iterating a fixpoint, `delta_step` marks the one
    recursive occurrence fed with the delta instead of the running total."""

    def source_rows(step, env):
        if isinstance(step.source, Data) and totals is not None \
                and step.source.name in totals:
            name = step.source.name
            if step is delta_step:
                rows = delta[name]
            else:
                rows = totals[name]
            return sorted(rows, key=_order_key)
        v = eval_expr(step.source, env, ctx)
        return list(iter_source(v))

    envs = [env0]
    for step in chain.steps:
        if isinstance(step, HashJoinStep):
            rows = source_rows(step, env0)
            # build side = smaller input by row count; ties go to the source
            # side (deterministic by operator structure)
            if len(rows) <= len(envs):
                index = {}
                for item in rows:
                    tmp = bind({}, step.binder, item)
                    k = eval_expr(step.right_key, tmp, ctx)
                    index.setdefault(k, []).append(item)
                out = []
                for env in envs:
                    k = eval_expr(step.left_key, env, ctx)
                    for item in index.get(k, ()):
                        out.append(bind(env, step.binder, item))
            else:
                index = {}
                for env in envs:
                    k = eval_expr(step.left_key, env, ctx)
                    index.setdefault(k, []).append(env)
                out = []
                for item in rows:
                    tmp = bind({}, step.binder, item)
                    k = eval_expr(step.right_key, tmp, ctx)
                    for env in index.get(k, ()):
                        out.append(bind(env, step.binder, item))
            envs = out
        elif isinstance(step, ExpandStep):
            out = []
            for env in envs:
                for item in source_rows(step, env):
                    out.append(bind(env, step.binder, item))
            envs = out
        elif isinstance(step, FilterStep):
            envs = [env for env in envs
                    if truthy(eval_expr(step.expr, env, ctx))]
        elif isinstance(step, ProjectStep):
            result = set()
            for env in envs:
                v = eval_expr(step.expr, env, ctx)
                if v is not MISSING:
                    result.add(v)
            ctx.note(step.op_id, len(result))
            return frozenset(result)
        ctx.note(step.op_id, len(envs))
    raise AssertionError("chain missing project step")


# --- query plans -------------------------------------------------------------

@dataclass
class QueryPlan:
    name: str
    chains: list  # one per rule body


@dataclass
class FixpointGroup:
    scc: frozenset
    plans: dict  # name -> QueryPlan


@dataclass
class CompiledQueries:
    plans: dict = dfield(default_factory=dict)        # non-recursive
    groups: list = dfield(default_factory=list)       # FixpointGroup
    group_of: dict = dfield(default_factory=dict)


def compile_queries(program) -> CompiledQueries:
    from .analysis import classify_expression

    edges = tuple(_query_edges(program))
    comps = _sccs(sorted(program.query_map), edges)
    out = CompiledQueries()
    for comp in comps:
        recursive = len(comp) > 1 or any(
            a == b for a, b, _ in edges if a in comp and b in comp)
        plans = {}
        for q in sorted(comp):
            chains = []
            for qd in program.query_map[q]:
                for body in qd.bodies:
                    if isinstance(body, Comp):
                        chains.append(compile_comp(body))
                    else:
                        chains.append(compile_comp(Comp(body, ())))
            plans[q] = QueryPlan(q, chains)
        if recursive:
            for a, b, label in edges:
                if a in comp and b in comp and label != "pos":
                    raise NonMonotoneRecursion(
                        f"{label} reference to {b} inside recursive group {sorted(comp)}")
            for q in comp:
                for qd in program.query_map[q]:
                    for body in qd.bodies:
                        cls = classify_expression(body, program, f"query {q}")
                        if not cls.monotone:
                            raise NonMonotoneRecursion(
                                f"non-monotone rule body in recursive query {q}: "
                                f"{cls.reasons}")
            group = FixpointGroup(comp, plans)
            out.groups.append(group)
            for q in comp:
                out.group_of[q] = group
        else:
            out.plans.update(plans)
    return out


class GraphContext(EvalContext):
    def __init__(self, program, snapshot, compiled: CompiledQueries,
                 firing=None, max_rounds=10000):
        super().__init__(program, snapshot, firing)
        self.compiled = compiled
        self.max_rounds = max_rounds
        self.rounds = {}
        self.op_rows = {}
        self._qmemo = {}
        self._chain_cache = {}

    def note(self, op_id: str, n: int):
        self.op_rows[op_id] = self.op_rows.get(op_id, 0) + n

    def eval_comp(self, e: Comp, env: dict) -> frozenset:
        chain = self._chain_cache.get(e)
        if chain is None:
            chain = compile_comp(e)
            self._chain_cache[e] = chain
        return run_chain(chain, env, self)

    def base_facts(self, name: str) -> frozenset:
        if name in self.snapshot.tables:
            return frozenset(self.table_rows(name))
        v = self.snapshot.vars.get(name)
        if isinstance(v, frozenset):
            return v
        return frozenset()

    def query_value(self, name: str) -> frozenset:
        if name in self._qmemo:
            return self._qmemo[name]
        group = self.compiled.group_of.get(name)
        if group is None:
            val = self.base_facts(name)
            for chain in self.compiled.plans[name].chains:
                val |= run_chain(chain, {}, self)
            self._qmemo[name] = val
            return val
        totals, rounds = apply_fixpoint(group, self)
        for q, v in totals.items():
            self._qmemo[q] = v
        self.rounds[",".join(sorted(group.scc))] = rounds
        return self._qmemo[name]


def apply_fixpoint(group: FixpointGroup, ctx: GraphContext):
    """Least fixpoint of a recursive query group by semi-naive iteration.

    Returns (totals, rounds). Raises FixpointDivergence past the round cap.
    """
    scc = group.scc
    totals = {q: set(ctx.base_facts(q)) for q in scc}
    # round 1: all rules with empty recursive inputs
    empty = {q: frozenset() for q in scc}
    for q in sorted(scc):
        for chain in group.plans[q].chains:
            refs = chain.recursive_refs(scc)
            if refs:
                continue  # pure-recursive rules derive nothing yet
            totals[q] |= run_chain(chain, {}, ctx, totals=empty, delta=empty)
    # also run recursive rules once against the base facts
    delta = {q: frozenset(totals[q]) for q in scc}
    rounds = 1
    while True:
        rounds += 1
        if rounds > ctx.max_rounds:
            raise FixpointDivergence(
                f"semi-naive fixpoint over {sorted(scc)} exceeded {ctx.max_rounds} rounds")
        derived = {q: set() for q in scc}
        frozen_totals = {q: frozenset(v) for q, v in totals.items()}
        for q in sorted(scc):
            for chain in group.plans[q].chains:
                refs = chain.recursive_refs(scc)
                for ref in refs:
                    derived[q] |= run_chain(chain, {}, ctx, delta_step=ref,
                                            totals=frozen_totals, delta=delta)
        new = {q: derived[q] - totals[q] for q in scc}
        if not any(new.values()):
            break
        for q in scc:
            totals[q] |= new[q]
        delta = {q: frozenset(new[q]) for q in scc}
    return {q: frozenset(v) for q, v in totals.items()}, rounds
