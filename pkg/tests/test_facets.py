"""Replica placement over failure domains and annotation cross-checks."""

import pytest

from latticeflow.facets import (
    InsufficientDomains, facet_warnings, make_topology, replication_plan,
)
from latticeflow.ir import (
    Assign, AvailSpec, BinOp, ConsistencySpec, Data, DataDecl, Handler, Lit,
    MergeMutation, Program, TargetPath, Var,
)
from latticeflow.patterns import covid_tracker


def prog(handlers, availability=None):
    return Program(
        "t",
        data=(DataDecl("acc", "var", shape="set"),
              DataDecl("n", "var", scalar="int", init=0)),
        handlers=tuple(handlers),
        availability=availability or {})


def mono_handler(name="h", **kw):
    return Handler(name, {"x": "int"},
                   (MergeMutation(TargetPath("acc"), Var("x")),), **kw)


def test_topology_is_a_full_grid():
    slots = make_topology(dcs=2, azs=3, racks=1, vms=2)
    assert len(slots) == 12
    assert slots[0] == ("dc0", "az0", "rack0", "vm0")
    assert len(set(slots)) == 12


def test_replicas_land_in_distinct_domains():
    p = prog([mono_handler()], {"h": AvailSpec("az", 2)})
    plan = replication_plan(p, make_topology())
    group = plan.groups["h"]
    assert len(group) == 3
    domains = {next(s.domain[1] for s in plan.nodes if s.node_id == n)
               for n in group}
    assert len(domains) == 3


def test_rack_level_spreading():
    p = prog([mono_handler()], {"h": AvailSpec("rack", 1)})
    plan = replication_plan(p, make_topology(azs=1, racks=4))
    group = plan.groups["h"]
    doms = [next(tuple(s.domain[:3]) for s in plan.nodes if s.node_id == n)
            for n in group]
    assert len(group) == 2 and len(set(doms)) == 2


def test_insufficient_domains_is_reported():
    p = prog([mono_handler()], {"h": AvailSpec("az", 3)})
    with pytest.raises(InsufficientDomains) as exc:
        replication_plan(p, make_topology(azs=3))
    assert exc.value.handler == "h"
    assert exc.value.need == 4 and exc.value.have == 3


def test_unreplicated_handler_gets_no_proxy():
    p = prog([mono_handler()], {"h": AvailSpec("az", 0)})
    plan = replication_plan(p, make_topology())
    assert plan.proxies == {}
    assert all(s.behavior == "worker" for s in plan.nodes)


def test_replicated_handlers_share_one_proxy():
    p = prog([mono_handler("a"), mono_handler("b")],
             {"a": AvailSpec("az", 1), "b": AvailSpec("az", 2)})
    plan = replication_plan(p, make_topology())
    assert set(plan.proxies) == {"a", "b"}
    assert len({v for v in plan.proxies.values()}) == 1
    proxies = [s for s in plan.nodes if s.behavior == "proxy"]
    assert len(proxies) == 1


def test_sequencer_is_synthesized_for_serializable_handlers():
    h = Handler("spend", {},
                (Assign(TargetPath("n"), BinOp("-", Data("n"), Lit(1))),),
                consistency=ConsistencySpec("serializable"))
    p = prog([h], {"spend": AvailSpec("az", 2)})
    plan = replication_plan(p, make_topology())
    assert plan.sequencers["spend"] in plan.groups["spend"]
    marks = plan.to_dict()
    assert marks["sequencers"]["spend"]["synthesized"] is True
    assert marks["proxies"]["spend"]["synthesized"] is True


def test_handlers_sharing_a_role_share_workers():
    p = prog([mono_handler("a"), mono_handler("b")],
             {"default": AvailSpec("az", 1)})
    plan = replication_plan(p, make_topology())
    assert plan.groups["a"] == plan.groups["b"]


def test_covid_plan_matches_annotations():
    p = covid_tracker().program
    plan = replication_plan(p, make_topology())
    assert len(plan.groups["vaccinate"]) == 3   # tolerates 2 az failures
    assert len(plan.groups["estimate"]) == 2    # tolerates 1
    assert "vaccinate" in plan.sequencers and "estimate" not in plan.sequencers


# --- warnings ----------------------------------------------------------------

def test_unneeded_coordination_warning():
    h = mono_handler(consistency=ConsistencySpec("serializable"))
    warnings = facet_warnings(prog([h], {"h": AvailSpec("az", 1)}))
    assert any(w.code == "UnneededCoordination" for w in warnings)


def test_divergence_risk_warning_needs_replication():
    messy = Handler("h", {"x": "int"},
                    (Assign(TargetPath("n"), Var("x")),))
    replicated = facet_warnings(prog([messy], {"h": AvailSpec("az", 1)}))
    assert any(w.code == "DivergenceRisk" for w in replicated)
    solo = facet_warnings(prog([messy], {"h": AvailSpec("az", 0)}))
    assert not any(w.code == "DivergenceRisk" for w in solo)


def test_isolation_annotation_is_accepted_but_flagged():
    h = mono_handler(consistency=ConsistencySpec(
        "serializable", isolation="snapshot"))
    warnings = facet_warnings(prog([h], {"h": AvailSpec("az", 1)}))
    assert any(w.code == "IsolationIgnored" for w in warnings)


def test_clean_program_raises_no_flags():
    assert facet_warnings(covid_tracker().program) == []
