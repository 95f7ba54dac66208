"""Single-node execution: backends, fixpoints, tick atomicity."""

import itertools
import random

import pytest

from conftest import bfs_closure, closure_contexts, closure_program
from latticeflow.ir import (
    Assign, BinOp, ClassDecl, Comp, ConsistencySpec, Data, DataDecl, Fold,
    Gen, Handler, In, Len, Lit, MergeMutation, Not, Program, QueryDef, Return,
    Send, Record, TargetPath, UdfCall, UdfDecl, Var, MESSAGE_ID,
    response_mailbox,
)
from latticeflow.runtime import NonMonotoneRecursion, compile_queries
from latticeflow.state import FixpointDivergence, Row, canonical_state
from latticeflow.transducer import Transducer


def counter_program(**handler_kw):
    return Program(
        "counter",
        data=(DataDecl("acc", "var", shape="set"),
              DataDecl("n", "var", scalar="int", init=1)),
        handlers=(Handler("add", {"x": "int"},
                          (MergeMutation(TargetPath("acc"), Var("x")),
                           Return(Len(Data("acc")))), **handler_kw),))


def request(i, **fields):
    return Row(dict(fields), **{MESSAGE_ID: f"m{i}"})


# --- query backends ----------------------------------------------------------

def test_backends_match_bfs_on_random_graphs():
    rng = random.Random(4)
    for _ in range(30):
        edges = [(rng.randrange(12), rng.randrange(12))
                 for _ in range(rng.randint(1, 20))]
        ic, gc = closure_contexts(edges)
        expect = bfs_closure(edges)
        assert ic.query_value("tc") == expect
        assert gc.query_value("tc") == expect


def test_delta_iteration_needs_no_more_rounds_than_naive():
    rng = random.Random(5)
    for _ in range(20):
        edges = [(i, i + 1) for i in range(rng.randint(2, 30))]
        rng.shuffle(edges)
        ic, gc = closure_contexts(edges)
        ic.query_value("tc")
        gc.query_value("tc")
        assert max(gc.rounds.values()) <= max(ic.rounds.values())


def test_nonmonotone_recursion_rejected():
    bad = QueryDef(
        "odd", (),
        (Comp(Var("x"), (Gen("x", Data("acc")),),
              (Not(In(Var("x"), Data("odd"))),)),),
        recursive=True)
    p = Program("bad",
                data=(DataDecl("acc", "var", shape="set"),),
                queries=(bad,))
    with pytest.raises(NonMonotoneRecursion):
        compile_queries(p)


def test_fixpoint_round_cap():
    edges = [(i, i + 1) for i in range(10)]
    ic, gc = closure_contexts(edges)
    ic.max_rounds = 3
    gc.max_rounds = 3
    with pytest.raises(FixpointDivergence):
        ic.query_value("tc")
    with pytest.raises(FixpointDivergence):
        gc.query_value("tc")


# --- tick semantics ----------------------------------------------------------

def test_reads_see_the_pre_tick_snapshot():
    t = Transducer(counter_program())
    t.deliver("add", request(0, x=7))
    t.deliver("add", request(1, x=8))
    r = t.tick()
    # both responses report the count before either merge landed
    replies = [s.payload for s in r.sends
               if s.mailbox == response_mailbox("add")]
    assert [p["payload"] for p in replies] == [0, 0]
    assert t.state.vars["acc"].elems == frozenset({7, 8})


def test_self_sends_arrive_next_tick():
    p = Program(
        "relay",
        data=(DataDecl("acc", "var", shape="set"),),
        handlers=(
            Handler("front", {"x": "int"},
                    (Send("back", Record(x=Var("x"))),)),
            Handler("back", {"x": "int"},
                    (MergeMutation(TargetPath("acc"), Var("x")),)),
        ))
    t = Transducer(p)
    t.deliver("front", request(0, x=3))
    r = t.tick()
    t.pump(r)
    assert t.state.vars["acc"].elems == frozenset()
    t.tick()
    assert t.state.vars["acc"].elems == frozenset({3})


def test_udf_memoized_within_a_tick():
    calls = []
    p = Program(
        "memo",
        data=(DataDecl("acc", "var", shape="set"),),
        udfs=(UdfDecl("f", 1, fn=lambda x: calls.append(x) or x * 2),),
        handlers=(Handler("go", {"x": "int"},
                          (UdfCall("f", (Var("x"),), binder="y"),
                           MergeMutation(TargetPath("acc"), Var("y")))),))
    t = Transducer(p)
    t.deliver("go", request(0, x=5))
    t.deliver("go", request(1, x=5))
    r = t.tick()
    assert r.udf_invocations == 1 and calls == [5]
    # a later tick evaluates against fresh state, so it may call again
    t.deliver("go", request(2, x=5))
    t.tick()
    assert calls == [5, 5]


def test_batching_does_not_change_final_state():
    msgs = [request(i, x=v) for i, v in enumerate([4, 9, 1, 9, 2])]

    def run(schedule):
        t = Transducer(counter_program())
        for batch in schedule:
            for m in batch:
                t.deliver("add", m)
            t.pump(t.tick())
        while t.has_pending_input():
            t.pump(t.tick())
        return canonical_state(t.state, include_mailboxes=False)

    one_shot = run([msgs])
    for i in range(1, len(msgs)):
        assert run([msgs[:i], msgs[i:]]) == one_shot
    assert run([[m] for m in msgs]) == one_shot


def test_serializable_accepts_then_rejects():
    spend = Handler(
        "spend", {},
        (Assign(TargetPath("n"), BinOp("-", Data("n"), Lit(1))),
         Return(Lit("done"))),
        consistency=ConsistencySpec(
            "serializable", invariants=(BinOp(">=", Data("n"), Lit(0)),)))
    p = Program("stock",
                data=(DataDecl("n", "var", scalar="int", init=1),),
                handlers=(spend,))
    t = Transducer(p)
    t.deliver("spend", request(0))
    t.deliver("spend", request(1))
    statuses = {}
    for _ in range(3):
        statuses.update(t.tick().statuses)
    assert sorted(statuses.values()) == ["accepted", "rejected"]
    assert t.state.vars["n"] == 0


def test_serializable_reject_leaves_state_untouched():
    spend = Handler(
        "spend", {},
        (Assign(TargetPath("n"), BinOp("-", Data("n"), Lit(5))),),
        consistency=ConsistencySpec(
            "serializable", invariants=(BinOp(">=", Data("n"), Lit(0)),)))
    p = Program("stock",
                data=(DataDecl("n", "var", scalar="int", init=1),),
                handlers=(spend,))
    t = Transducer(p)
    t.deliver("spend", request(0))
    r = t.tick()
    assert r.statuses == {"m0": "rejected"}
    assert t.state.vars["n"] == 1
    assert not t.has_pending_input()


def test_backends_agree_on_transducer_runs():
    rng = random.Random(11)
    for trial in range(10):
        pairs = [(rng.randrange(8), rng.randrange(8))
                 for _ in range(rng.randint(1, 12))]
        states = []
        for backend in ("interp", "graph"):
            t = Transducer(closure_program(), backend=backend)
            for i, (a, b) in enumerate(pairs):
                t.deliver("add_edge", request(i, a=a, b=b))
            t.run()
            states.append(canonical_state(t.state, include_mailboxes=False))
        assert states[0] == states[1], pairs


def test_statement_order_is_immaterial_for_monotone_bodies():
    stmts = (MergeMutation(TargetPath("acc"), Var("x")),
             MergeMutation(TargetPath("acc"), BinOp("+", Var("x"), Lit(100))),
             Send("out", Record(v=Var("x"))))
    finals = set()
    for perm in itertools.permutations(stmts):
        p = Program("perm",
                    data=(DataDecl("acc", "var", shape="set"),),
                    handlers=(Handler("go", {"x": "int"}, perm),),
                    sinks=("out",))
        t = Transducer(p)
        t.deliver("go", request(0, x=1))
        t.pump(t.tick())
        finals.add((canonical_state(t.state, include_mailboxes=False
                                    ).__repr__(),
                    tuple(t.outputs.get("out", ()))))
    assert len(finals) == 1
