import numpy as np
import pytest
from fastapi.testclient import TestClient

from vacantlab.lattice import TorusGeometry
from vacantlab.service.app import app
from vacantlab.walk import NEVER, VisitRecord, WalkConfig, simulate


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json()["status"] == "ok"


def test_simulate_binary_matches_in_process(client):
    payload = {"dim": 2, "side": 6, "seed": 5, "horizon": 100, "start": 3}
    blob = client.post("/simulate", json=payload).content
    record = VisitRecord.from_bytes(blob)
    local = simulate(TorusGeometry(2, 6), WalkConfig(seed=5, horizon=100, start=3))
    assert np.array_equal(record.first_visit, local.first_visit)
    assert np.array_equal(record.last_visit, local.last_visit)

    summary = client.post("/simulate", params={"summary": True}, json=payload).json()
    assert summary["visited_sites"] == int((local.first_visit != NEVER).sum())
    assert summary["start_site"] == 3


def test_components_endpoint(client):
    payload = {"dim": 2, "side": 7, "seed": 9, "horizon": 60, "start": 0,
               "seg_len": 1}
    resp = client.post("/components", json=payload)
    assert resp.status_code == 200
    body = resp.json()
    assert body["t"] == 60
    total = sum(int(s) * c for s, c in body["histogram"].items())
    assert total == body["vacant_sites"]
    assert body["largest"] >= body["second_largest"]


def test_constants_endpoints(client):
    q3 = client.get("/constants/q/3").json()
    assert q3["q"] == pytest.approx(0.3405373295509994, abs=1e-9)
    assert q3["d0_predicate"] is None
    q5 = client.get("/constants/q/5").json()
    assert q5["d0_predicate"] == pytest.approx(29.6118, abs=1e-3)
    scales = client.post("/constants/scales", json={
        "side": 1000, "dim": 5, "steps_per_site": 1.0, "count_exp": 0.5}).json()
    assert scales["revisit_gap"] == 10000
    assert scales["inner_radius"] == 47


def test_greenfn_endpoint_bounds(client):
    resp = client.post("/greenfn", json={
        "dim": 1, "side": 5, "domain_sites": [0, 1], "target_sites": [0],
        "start": 1}).json()
    assert resp["domain_size"] == 2
    assert resp["bounds"]["exact"] == pytest.approx(0.5, abs=1e-9)
    entries = {(e["x_index"], e["y_index"]): e["g_value"] for e in resp["entries"]}
    assert entries[(0, 0)] == pytest.approx(4 / 3, abs=1e-9)
    assert resp["expected_exit_time"] == pytest.approx(2.0, abs=1e-9)


def test_greenfn_validation_becomes_422(client):
    resp = client.post("/greenfn", json={"dim": 2, "side": 5})
    assert resp.status_code == 422


def test_resource_guard_becomes_413(client):
    resp = client.post("/greenfn", json={
        "dim": 3, "side": 40, "domain_ball": {"center": 0, "radius": 19}})
    assert resp.status_code == 413


def test_estimate_and_merge_round_trip(client):
    spec = {"dim": 2, "side": 8, "steps_per_site": 0.5, "seg_len": 1,
            "giant_len": 2, "reach_exp": 0.5, "replications": 20,
            "master_seed": 5, "start": 0}
    event = {"kind": "GIANT", "t": 20}
    whole = client.post("/estimate", json={"spec": spec, "event": event}).json()
    s1 = client.post("/estimate", json={"spec": spec, "event": event,
                                        "replica_offset": 0, "replica_count": 8}).json()
    s2 = client.post("/estimate", json={"spec": spec, "event": event,
                                        "replica_offset": 8, "replica_count": 12}).json()
    merged = client.post("/estimate/merge", json={"reports": [s1, s2]}).json()
    for key in ("successes", "trials", "estimate", "seeds_digest", "replica_ranges"):
        assert merged[key] == whole[key]


def test_survival_endpoint(client):
    g = TorusGeometry(2, 7)
    spec = {"dim": 2, "side": 7, "steps_per_site": 1.0, "seg_len": 1,
            "giant_len": 2, "reach_exp": 0.5, "replications": 300,
            "master_seed": 3, "start": 0}
    resp = client.post("/survival", json={
        "spec": spec, "anchor": int(g.encode(np.array([3, 3]))), "seg_len": 1,
        "inner_radius": 1, "outer_radius": 2, "budgets": [1, 2]}).json()
    assert set(resp) == {"1", "2"}
    assert resp["1"]["estimate"] >= resp["2"]["estimate"]
    for k in ("1", "2"):
        assert resp[k]["exact"] is not None
        assert abs(resp[k]["estimate"] - resp[k]["exact"]) < 0.1


def test_second_moment_endpoint(client):
    g = TorusGeometry(2, 8)
    spec = {"dim": 2, "side": 8, "steps_per_site": 1.0, "seg_len": 1,
            "giant_len": 2, "reach_exp": 0.5, "replications": 40,
            "master_seed": 3, "start": 0}
    resp = client.post("/second_moment", json={
        "spec": spec, "anchors": [int(g.encode(np.array([4, 4])))],
        "seg_len": 1, "inner_radius": 1, "outer_radius": 2}).json()
    assert resp["mean"] == pytest.approx(sum(resp["per_anchor_estimates"]), abs=1e-12)
    assert resp["variance_shape"] > 0
