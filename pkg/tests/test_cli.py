"""Command-line entry points and exit codes."""

import json

import pytest

from latticeflow.cli import (
    EXIT_INFEASIBLE, EXIT_NO_QUIESCENCE, EXIT_OK, EXIT_VALIDATION, main,
)


def scenario_dict(**kw):
    sc = {
        "program": "covid_tracker",
        "seed": 3,
        "network": {"delay_min": 1, "delay_max": 4},
        "workload": [
            {"tick": 0, "client": "c1", "handler": "add_person",
             "fields": {"pid": 1, "name": "ana", "country": "ar"}},
            {"tick": 4, "client": "c1", "handler": "trace",
             "fields": {"pid": 1}},
        ],
    }
    sc.update(kw)
    return sc


def write_scenario(tmp_path, **kw):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(scenario_dict(**kw)))
    return str(path)


def test_analyze_pattern(capsys):
    assert main(["analyze", "covid_tracker"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "vaccinate" in out and "NeedsCoordination" in out
    assert "CoordinationFree" in out


def test_analyze_inspect_prints_plan(capsys):
    assert main(["analyze", "mpi_collectives", "--inspect"]) == EXIT_OK
    assert '"routes"' in capsys.readouterr().out


def test_analyze_unknown_program():
    assert main(["analyze", "no_such_thing"]) == EXIT_VALIDATION


def test_simulate_scenario(tmp_path, capsys):
    path = write_scenario(tmp_path)
    assert main(["simulate", path]) == EXIT_OK
    out = capsys.readouterr().out
    assert "quiesced at tick" in out
    assert "response c1/" in out


def test_simulate_trace_and_inspect(tmp_path, capsys):
    path = write_scenario(tmp_path)
    trace = tmp_path / "trace.jsonl"
    assert main(["simulate", path, "--trace", str(trace),
                 "--inspect"]) == EXIT_OK
    lines = trace.read_text().strip().splitlines()
    assert lines and all(json.loads(ln)["kind"] for ln in lines)
    assert '"tables"' in capsys.readouterr().out


def test_simulate_seed_override_is_deterministic(tmp_path, capsys):
    path = write_scenario(tmp_path)
    outs = []
    for _ in range(2):
        assert main(["simulate", path, "--seed", "9"]) == EXIT_OK
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert main(["simulate", path, "--seed", "10"]) == EXIT_OK
    assert capsys.readouterr().out != outs[0]


def test_simulate_multiple_seeds(tmp_path, capsys):
    path = write_scenario(tmp_path)
    assert main(["simulate", path, "--seeds", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("quiesced at tick") == 3


def test_simulate_interp_backend_agrees(tmp_path, capsys):
    path = write_scenario(tmp_path)
    assert main(["simulate", path, "--backend", "graph"]) == EXIT_OK
    graph_out = capsys.readouterr().out
    assert main(["simulate", path, "--backend", "interp"]) == EXIT_OK
    assert capsys.readouterr().out == graph_out


def test_simulate_rejects_bad_scenario(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(scenario_dict(seed="not-an-int")))
    assert main(["simulate", str(path)]) == EXIT_VALIDATION
    path.write_text(json.dumps({"program": "covid_tracker"}))
    assert main(["simulate", str(path)]) == EXIT_VALIDATION
    path.write_text("{ not json")
    assert main(["simulate", str(path)]) == EXIT_VALIDATION


def test_simulate_unknown_workload_field(tmp_path):
    sc = scenario_dict()
    sc["workload"][0]["frobnicate"] = 1
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc))
    assert main(["simulate", str(path)]) == EXIT_VALIDATION


def test_simulate_no_quiescence(tmp_path):
    path = write_scenario(tmp_path, max_ticks=1)
    assert main(["simulate", path]) == EXIT_NO_QUIESCENCE


def test_plan_defaults_are_feasible(tmp_path, capsys):
    out_path = tmp_path / "plan.json"
    assert main(["plan", "covid_tracker",
                 "--dump-plan", str(out_path)]) == EXIT_OK
    plan = json.loads(out_path.read_text())
    assert plan["objective"] == "min_instances"
    assert {e["handler"] for e in plan["entries"]} >= {"vaccinate", "estimate"}


def test_plan_infeasible_without_gpu(tmp_path, capsys):
    catalog = [{"name": "small", "capacity": 1, "price": 0.0005}]
    mpath = tmp_path / "machines.json"
    mpath.write_text(json.dumps(catalog))
    assert main(["plan", "covid_tracker",
                 "--machines", str(mpath)]) == EXIT_INFEASIBLE
    err = capsys.readouterr().err
    assert "estimate" in err and "features" in err


def test_plan_budget_infeasible(capsys):
    assert main(["plan", "covid_tracker", "--budget", "0.0"]) == EXIT_INFEASIBLE
    assert "budget" in capsys.readouterr().err


def test_plan_objective_flag(capsys):
    assert main(["plan", "covid_tracker",
                 "--objective", "max_throughput"]) == EXIT_OK
    plan = json.loads(capsys.readouterr().out)
    assert plan["objective"] == "max_throughput"


def test_list_patterns(capsys):
    assert main(["list-patterns"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("covid_tracker", "actors", "futures", "mpi_collectives"):
        assert name in out
