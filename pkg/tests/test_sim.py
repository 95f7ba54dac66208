"""Deterministic network simulation: delays, duplication, failures."""

import pytest

from latticeflow.facets import build_cluster
from latticeflow.patterns import covid_tracker, covid_workload, run_workload
from latticeflow.sim import NetworkModel, NoQuiescence, trace_text


def covid_cluster(seed, network=None, dup=0.0):
    pat = covid_tracker()
    net = network or NetworkModel(1, 8, dup)
    return run_workload(pat.program, covid_workload(seed), seed=seed,
                        network=net)


def test_same_seed_is_byte_identical():
    a, b = covid_cluster(3), covid_cluster(3)
    assert trace_text(a) == trace_text(b)
    assert a.dump_states() == b.dump_states()
    assert a.response_log == b.response_log


def test_different_seed_changes_the_schedule():
    assert trace_text(covid_cluster(3)) != trace_text(covid_cluster(4))


def test_network_model_rejects_bad_delays():
    with pytest.raises(ValueError):
        NetworkModel(0, 5)
    with pytest.raises(ValueError):
        NetworkModel(4, 2)


def test_delivery_takes_at_least_one_tick():
    cluster = covid_cluster(1)
    issued = {ev.detail["message_id"]: ev.tick
              for ev in cluster.trace if ev.kind == "Injected"}
    assert issued and cluster.response_log
    for tick, client, mid, payload, fresh in cluster.response_log:
        # request went client -> worker -> client: two hops, one tick each
        assert tick >= issued[mid] + 2


def test_duplicates_are_deduplicated():
    plain = covid_cluster(6)
    noisy = covid_cluster(6, network=NetworkModel(1, 8, 1.0))
    assert plain.dump_states() == noisy.dump_states()
    for cluster in (plain, noisy):
        fresh_mids = [mid for (_t, _c, mid, _p, fresh)
                      in cluster.response_log if fresh]
        assert sorted(fresh_mids) == sorted(set(fresh_mids))
        assert set(fresh_mids) == set(cluster.request_payload)


def test_crash_loses_state_but_replicas_answer():
    pat = covid_tracker()
    cluster = build_cluster(pat.program, seed=9,
                            network=NetworkModel(1, 4, 0.0))
    cluster.schedule_request(0, "c1", "add_person",
                             {"pid": 1, "name": "a", "country": "x"})
    cluster.schedule_request(8, "c1", "trace", {"pid": 1})
    cluster.schedule_failure(6, ("dc0", "az0"))
    cluster.run_to_quiescence()
    assert any(mid in cluster.responses.get("c1", {})
               for mid in cluster.request_payload)
    assert any(ev.kind == "Crashed" for ev in cluster.trace)


def test_no_live_replica_is_logged():
    pat = covid_tracker()
    cluster = build_cluster(pat.program, seed=2,
                            network=NetworkModel(1, 3, 0.0))
    for az in ("az0", "az1", "az2"):
        cluster.schedule_failure(1, ("dc0", az))
    cluster.schedule_request(5, "c1", "add_person",
                             {"pid": 1, "name": "a", "country": "x"})
    cluster.run_to_quiescence()
    assert any(ev.kind == "NoLiveReplica" for ev in cluster.trace)
    assert cluster.responses.get("c1", {}) == {}


def test_retransmission_recovers_a_dropped_request():
    # vaccinate routes through its sequencer; when that node dies with the
    # request in flight, the proxy retries against the next live replica
    pat = covid_tracker(vaccine_count=5)
    found = 0
    for seed in range(30):
        cluster = build_cluster(pat.program, seed=seed,
                                network=NetworkModel(2, 6, 0.0))
        cluster.schedule_request(0, "c1", "add_person",
                                 {"pid": 1, "name": "a", "country": "x"})
        cluster.schedule_request(0, "c1", "vaccinate", {"pid": 1})
        cluster.schedule_failure(7, ("dc0", "az0"))
        cluster.run_to_quiescence()
        assert len(cluster.responses.get("c1", {})) == 2
        if any(ev.kind == "Retransmitted" for ev in cluster.trace):
            found += 1
    assert found > 0


def test_unmatched_failure_domain_raises():
    cluster = build_cluster(covid_tracker().program)
    with pytest.raises(KeyError):
        cluster.inject_failure(("dc9",))


def test_guard_blocked_messages_still_quiesce():
    from latticeflow.patterns import get_pattern
    pat = get_pattern("actors")
    # do_m for an actor that was never spawned stays blocked forever
    workload = [{"tick": 0, "client": "c1", "handler": "do_m",
                 "fields": {"actor_id": "ghost", "m": "poke"}}]
    cluster = run_workload(pat.program, workload, seed=0)
    assert cluster.tick < 10000


def test_recovered_node_rejoins_empty():
    pat = covid_tracker()
    cluster = build_cluster(pat.program, seed=5,
                            network=NetworkModel(1, 3, 0.0))
    cluster.schedule_request(0, "c1", "add_person",
                             {"pid": 1, "name": "a", "country": "x"})
    cluster.run_to_quiescence()
    victim = sorted(cluster.nodes)[0]
    before = cluster.node_state(victim)
    cluster.inject_failure(cluster.specs[victim].domain)
    cluster.recover(victim)
    after = cluster.node_state(victim)
    assert before != after
    assert after["tables"]["people"] == {} or after["tables"]["people"] == []
