"""Monotonicity classification, stratification, and cross-handler checks."""

import pytest

from latticeflow.analysis import (
    MetaconsistencyConflict, Unstratifiable, calm_report, classify_handler,
    metaconsistency_conflicts, stratify,
)
from latticeflow.ir import (
    Assign, BinOp, ClassDecl, Comp, ConsistencySpec, Data, DataDecl, Delete,
    Field, Fold, Gen, Handler, In, Len, Lit, MergeMutation, Not, Program,
    QueryDef, Return, TargetPath, UdfCall, UdfDecl, Var,
)
from latticeflow.patterns import get_pattern


def prog(handlers=(), queries=(), data=(), udfs=()):
    base_data = (DataDecl("acc", "var", shape="set"),
                 DataDecl("n", "var", scalar="int", init=0)) + tuple(data)
    return Program("t", data=base_data, handlers=tuple(handlers),
                   queries=tuple(queries), udfs=tuple(udfs))


def cls_of(p, name="h"):
    return classify_handler(p.handler_map[name], p)


def test_merge_is_monotone():
    p = prog([Handler("h", {"x": "int"},
                      (MergeMutation(TargetPath("acc"), Var("x")),))])
    assert cls_of(p).monotone


def test_assign_is_not_monotone():
    p = prog([Handler("h", {"x": "int"},
                      (Assign(TargetPath("n"), Var("x")),))])
    c = cls_of(p)
    assert not c.monotone
    assert any(rule == "assignment" for _, rule in c.reasons)


def test_delete_is_not_monotone():
    p = prog([Handler("h", {}, (Delete(TargetPath("acc")),))])
    assert any(rule == "deletion" for _, rule in cls_of(p).reasons)


def test_negation_is_not_monotone():
    p = prog([Handler("h", {"x": "int"},
                      (Return(Not(In(Var("x"), Data("acc")))),))])
    assert any(rule == "negation" for _, rule in cls_of(p).reasons)


def test_extrema_fold_is_not_monotone():
    p = prog([Handler("h", {}, (Return(Fold("max", Data("acc"))),))])
    assert any("non-monotone-fold" in rule for _, rule in cls_of(p).reasons)


def test_count_fold_is_monotone_source():
    p = prog([Handler("h", {},
                      (MergeMutation(TargetPath("acc"),
                                     Fold("set", Data("acc"))),))])
    assert cls_of(p).monotone


def test_scalar_var_read_is_not_monotone():
    p = prog([Handler("h", {}, (Return(Data("n")),))])
    assert any(rule == "scalar-var-read" for _, rule in cls_of(p).reasons)


def test_threshold_comparison_is_monotone():
    p = prog([Handler("h", {"k": "int"},
                      (MergeMutation(TargetPath("acc"), Var("k"),
                                     when=BinOp(">=", Len(Data("acc")),
                                                Lit(3))),))])
    assert cls_of(p).monotone


def test_threshold_flipped_orientation():
    p = prog([Handler("h", {"k": "int"},
                      (MergeMutation(TargetPath("acc"), Var("k"),
                                     when=BinOp("<", Lit(3),
                                                Len(Data("acc")))),))])
    assert cls_of(p).monotone


def test_non_threshold_state_comparison_is_not_monotone():
    # an == test against state can become false as state grows
    p = prog([Handler("h", {"k": "int"},
                      (MergeMutation(TargetPath("acc"), Var("k"),
                                     when=BinOp("==", Len(Data("acc")),
                                                Lit(3))),))])
    assert any(rule == "state-comparison" for _, rule in cls_of(p).reasons)


def test_threshold_with_stateful_bound_is_not_monotone():
    p = prog([Handler("h", {"k": "int"},
                      (MergeMutation(TargetPath("acc"), Var("k"),
                                     when=BinOp(">=", Len(Data("acc")),
                                                Data("n"))),))])
    assert not cls_of(p).monotone


def test_message_only_comparison_is_monotone():
    p = prog([Handler("h", {"a": "int", "b": "int"},
                      (MergeMutation(TargetPath("acc"), Var("a"),
                                     when=BinOp(">", Var("a"), Var("b"))),))])
    assert cls_of(p).monotone


def test_undeclared_udf_is_not_monotone():
    p = prog([Handler("h", {"x": "int"},
                      (UdfCall("f", (Var("x"),), binder="y"),
                       MergeMutation(TargetPath("acc"), Var("y"))))],
             udfs=[UdfDecl("f", 1, monotone=False, fn=lambda x: x)])
    assert any(rule == "undeclared-udf" for _, rule in cls_of(p).reasons)


def test_declared_monotone_udf_is_trusted():
    p = prog([Handler("h", {"x": "int"},
                      (UdfCall("f", (Var("x"),), binder="y"),
                       MergeMutation(TargetPath("acc"), Var("y"))))],
             udfs=[UdfDecl("f", 1, monotone=True, fn=lambda x: x)])
    assert cls_of(p).monotone
    assert "f" in calm_report(p).trusted_udfs


def test_calm_coordination_free_requires_eventual():
    p = prog([
        Handler("mono", {"x": "int"},
                (MergeMutation(TargetPath("acc"), Var("x")),)),
        Handler("serial", {"x": "int"},
                (MergeMutation(TargetPath("acc"), Var("x")),),
                consistency=ConsistencySpec("serializable")),
        Handler("messy", {"x": "int"}, (Assign(TargetPath("n"), Var("x")),)),
    ])
    rep = calm_report(p)
    assert rep.coordination("mono") == "CoordinationFree"
    assert rep.coordination("serial") == "NeedsCoordination"
    assert rep.coordination("messy") == "NeedsCoordination"


def test_covid_classification():
    rep = calm_report(get_pattern("covid_tracker").program)
    assert set(rep.coordination_free) == {
        "add_contact", "add_person", "diagnose", "estimate", "trace"}
    assert rep.needs_coordination == ("vaccinate",)


# --- stratification ----------------------------------------------------------

def edge_q(name, src):
    return QueryDef(name, (), (Comp(Var("x"), (Gen("x", Data(src)),)),))


def test_negation_in_cycle_rejected():
    q1 = QueryDef("a", (), (Comp(
        Var("x"), (Gen("x", Data("b")),),
        (Not(In(Var("x"), Data("a"))),)),), recursive=True)
    q2 = edge_q("b", "a")
    p = prog(queries=[q1, q2])
    with pytest.raises(Unstratifiable):
        stratify(p)


def test_aggregation_in_cycle_rejected():
    q = QueryDef("a", (), (Comp(
        Fold("count", Data("a")), (Gen("x", Data("acc")),)),), recursive=True)
    with pytest.raises(Unstratifiable):
        stratify(prog(queries=[q]))


def test_negation_across_strata_allowed():
    q1 = edge_q("base", "acc")
    q2 = QueryDef("diff", (), (Comp(
        Var("x"), (Gen("x", Data("acc")),),
        (Not(In(Var("x"), Data("base"))),)),))
    sa = stratify(prog(queries=[q1, q2]))
    assert sa.strata["diff"] > sa.strata["base"]


def test_recursive_group_detected():
    p = get_pattern("covid_tracker").program
    sa = stratify(p)
    assert any("reachable" in g for g in sa.recursive_groups)
    assert not sa.is_recursive("contact_edges")


# --- metaconsistency ---------------------------------------------------------

def test_serializable_reading_dirty_data_conflicts():
    p = prog([
        Handler("messy", {"x": "int"}, (Assign(TargetPath("n"), Var("x")),)),
        Handler("serial", {},
                (MergeMutation(TargetPath("acc"), Data("n")),),
                consistency=ConsistencySpec("serializable")),
    ])
    conflicts = metaconsistency_conflicts(p)
    assert conflicts == [MetaconsistencyConflict("serial", "messy", "n")]


def test_monotone_writers_do_not_conflict():
    p = prog([
        Handler("grow", {"x": "int"},
                (MergeMutation(TargetPath("acc"), Var("x")),)),
        Handler("serial", {"x": "int"},
                (MergeMutation(TargetPath("acc"), Var("x")),),
                consistency=ConsistencySpec("serializable")),
    ])
    assert metaconsistency_conflicts(p) == []


def test_invariant_reads_count():
    p = prog([
        Handler("messy", {"x": "int"}, (Assign(TargetPath("n"), Var("x")),)),
        Handler("serial", {"x": "int"},
                (MergeMutation(TargetPath("acc"), Var("x")),),
                consistency=ConsistencySpec(
                    "serializable",
                    invariants=(BinOp(">=", Data("n"), Lit(0)),))),
    ])
    assert len(metaconsistency_conflicts(p)) == 1


def test_patterns_are_conflict_free():
    from latticeflow.patterns import pattern_names
    for name in pattern_names():
        assert metaconsistency_conflicts(get_pattern(name).program) == []
