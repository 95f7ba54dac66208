"""Direct IR interpreter: naive nested-loop comprehension evaluation and
naive fixpoint iteration for recursive queries.

This backend is deliberately simple; it serves as the independent oracle
for the operator-graph runtime, which must produce identical final state.
"""

from __future__ import annotations

from functools import lru_cache

from .analysis import _query_edges, _sccs
from .eval import EvalContext, MISSING, bind, eval_expr, iter_source, truthy
from .ir import Comp, Program
from .state import FixpointDivergence


@lru_cache(maxsize=None)
def query_sccs(program: Program):
    """(scc_of, edges): query SCC lookup for recursion handling."""
    edges = tuple(_query_edges(program))
    comps = _sccs(sorted(program.query_map), edges)
    comp_of = {}
    for comp in comps:
        for q in comp:
            comp_of[q] = comp
    recursive = set()
    for comp in comps:
        if len(comp) > 1 or any(a == b for a, b, _ in edges if a in comp and b in comp):
            recursive.add(comp)
    return comp_of, recursive


class InterpContext(EvalContext):
    def __init__(self, program, snapshot, firing=None, max_rounds=10000):
        super().__init__(program, snapshot, firing)
        self.max_rounds = max_rounds
        self.rounds = {}
        self._qmemo = {}

    def eval_comp(self, e: Comp, env: dict) -> frozenset:
        out = set()
        gens = e.gens

        def rec(i, env):
            if i == len(gens):
                for f in e.filters:
                    if not truthy(eval_expr(f, env, self)):
                        return
                v = eval_expr(e.output, env, self)
                if v is not MISSING:
                    out.add(v)
                return
            src = eval_expr(gens[i].source, env, self)
            for item in iter_source(src):
                rec(i + 1, bind(env, gens[i].binder, item))

        rec(0, env)
        return frozenset(out)

    def base_facts(self, name: str) -> frozenset:
        """Same-name data variable contents, implicitly included in a query."""
        if name in self.snapshot.tables:
            return frozenset(self.table_rows(name))
        v = self.snapshot.vars.get(name)
        if isinstance(v, frozenset):
            return v
        return frozenset()

    def query_value(self, name: str) -> frozenset:
        if name in self._qmemo:
            return self._qmemo[name]
        comp_of, recursive = query_sccs(self.program)
        scc = comp_of[name]
        if scc not in recursive:
            val = self.base_facts(name)
            for qd in self.program.query_map[name]:
                for body in qd.bodies:
                    val |= self._eval_body(body)
            self._qmemo[name] = val
            return val

        est = {q: self.base_facts(q) for q in scc}
        rounds = 0
        while True:
            rounds += 1
            if rounds > self.max_rounds:
                raise FixpointDivergence(
                    f"naive fixpoint over {sorted(scc)} exceeded {self.max_rounds} rounds")
            self.query_overrides.update(
                {q: tuple(sorted(v, key=_okey)) for q, v in est.items()})
            new = {}
            for q in sorted(scc):
                val = self.base_facts(q)
                for qd in self.program.query_map[q]:
                    for body in qd.bodies:
                        val |= self._eval_body(body)
                new[q] = val
            if new == est:
                break
            est = new
        for q in scc:
            self.query_overrides.pop(q, None)
            self._qmemo[q] = est[q]
        self.rounds[",".join(sorted(scc))] = rounds
        return self._qmemo[name]

    def _eval_body(self, body) -> frozenset:
        v = eval_expr(body, {}, self)
        if v is MISSING:
            return frozenset()
        if isinstance(v, frozenset):
            return v
        if isinstance(v, tuple):
            return frozenset(v)
        return frozenset([v])


def _okey(v):
    from .eval import _order_key
    return _order_key(v)
