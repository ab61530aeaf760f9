import json
from pathlib import Path

import numpy as np
import pytest

from vacantlab import cli
from vacantlab.lattice import TorusGeometry
from vacantlab.walk import VisitRecord, WalkConfig, simulate

DATA = Path(__file__).parent / "data"


def run_cli(*argv):
    return cli.main(list(argv))


def write_config(tmp_path, name, mapping):
    lines = [f"{k} = {v}" for k, v in mapping.items()]
    path = tmp_path / name
    path.write_text("# test config\n" + "\n".join(lines) + "\n")
    return str(path)


def canonical_report(path):
    body = json.loads(Path(path).read_text())
    body.pop("manifest", None)
    return json.dumps(body, sort_keys=True)


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "bad.cfg", {"dim": 2, "side": 5, "horizon": 10,
                                             "out": tmp_path / "o", "frobnicate": 1})
    code = run_cli("simulate", "--config", cfg)
    assert code == 2
    assert "frobnicate" in capsys.readouterr().err


def test_bad_value_exits_2_naming_key(tmp_path, capsys):
    cfg = write_config(tmp_path, "bad.cfg", {"dim": "two", "side": 5, "horizon": 10,
                                             "out": tmp_path / "o"})
    code = run_cli("simulate", "--config", cfg)
    assert code == 2
    assert "dim" in capsys.readouterr().err


def test_missing_required_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "bad.cfg", {"dim": 2, "side": 5,
                                             "out": tmp_path / "o"})
    assert run_cli("simulate", "--config", cfg) == 2
    assert "horizon" in capsys.readouterr().err


def test_simulate_writes_parseable_dump(tmp_path):
    out = tmp_path / "sim"
    cfg = write_config(tmp_path, "sim.cfg", {
        "dim": 2, "side": 6, "seed": 5, "horizon": 80, "start": 3, "out": out})
    assert run_cli("simulate", "--config", cfg) == 0
    record = VisitRecord.from_bytes((out / "record.vrec").read_bytes())
    local = simulate(TorusGeometry(2, 6), WalkConfig(seed=5, horizon=80, start=3))
    assert np.array_equal(record.first_visit, local.first_visit)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["end_site"] == local.end_site
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 5


def test_flags_override_config(tmp_path):
    out = tmp_path / "sim2"
    cfg = write_config(tmp_path, "sim.cfg", {
        "dim": 2, "side": 6, "seed": 5, "horizon": 80, "start": 3, "out": out})
    assert run_cli("simulate", "--config", cfg, "--seed", "9") == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 9


def test_components_csv_outputs(tmp_path):
    out = tmp_path / "comp"
    cfg = write_config(tmp_path, "c.cfg", {
        "dim": 2, "side": 7, "seed": 9, "horizon": 60, "start": 0,
        "seg_len": 1, "out": out})
    assert run_cli("components", "--config", cfg) == 0
    seg_lines = (out / "segments.csv").read_text().splitlines()
    assert seg_lines[0] == "anchor_index,anchor_coords,direction,length"
    hist_lines = (out / "histogram.csv").read_text().splitlines()
    assert hist_lines[0] == "size,count"
    body = json.loads((out / "components.json").read_text())
    assert sum(int(s) * c for s, c in body["histogram"].items()) == body["vacant_sites"]


def test_constants_prints_json(tmp_path, capsys):
    cfg = write_config(tmp_path, "k.cfg", {"dim": 5, "side": 1000,
                                           "steps_per_site": 1.0})
    assert run_cli("constants", "--config", cfg) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["d"] == 5
    assert body["d0_predicate"] == pytest.approx(29.6118, abs=1e-3)
    assert body["scales"]["revisit_gap"] == 10000


def test_greenfn_outputs(tmp_path):
    out = tmp_path / "green"
    cfg = write_config(tmp_path, "g.cfg", {
        "dim": 1, "side": 5, "domain_sites": "0,1", "target_sites": "0",
        "start": 1, "out": out})
    assert run_cli("greenfn", "--config", cfg) == 0
    lines = (out / "green.csv").read_text().splitlines()
    assert lines[0] == "x_index,y_index,g_value"
    assert len(lines) == 5
    bounds = json.loads((out / "bounds.json").read_text())
    assert bounds["bounds"]["exact"] == pytest.approx(0.5, abs=1e-9)


def estimate_config(tmp_path, out, extra=None):
    base = {
        "dim": 2, "side": 8, "steps_per_site": 0.5, "seg_len": 1,
        "giant_len": 2, "reach_exp": 0.5, "replications": 24,
        "master_seed": 11, "start": 0, "event": "GIANT", "t": 20,
        "out": out, "workers": 1,
    }
    if extra:
        base.update(extra)
    return write_config(tmp_path, "est.cfg", base)


def test_estimate_report_structure_and_determinism(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    cfg1 = estimate_config(tmp_path, out1)
    assert run_cli("estimate", "--config", cfg1) == 0
    cfg2 = estimate_config(tmp_path, out2)
    assert run_cli("estimate", "--config", cfg2, "--out", str(out2)) == 0
    body = json.loads((out1 / "report.json").read_text())
    assert set(body) == {"manifest", "spec", "results"}
    assert canonical_report(out1 / "report.json") == canonical_report(out2 / "report.json")


def test_estimate_resume_reuses_chunks(tmp_path):
    out = tmp_path / "resume"
    cfg = estimate_config(tmp_path, out, {"resume": "true", "chunk_size": 6})
    assert run_cli("estimate", "--config", cfg) == 0
    first = canonical_report(out / "report.json")
    chunks = sorted((out / "chunks").glob("*.json"))
    assert len(chunks) == 4
    # simulate an interrupted run: one chunk missing, the rest reused
    chunks[1].unlink()
    (out / "report.json").unlink()
    assert run_cli("estimate", "--config", cfg) == 0
    assert canonical_report(out / "report.json") == first


def test_estimate_sweep_csv(tmp_path):
    out = tmp_path / "sweep"
    cfg = estimate_config(tmp_path, out, {"u_grid": "0.2,0.5",
                                          "steps_per_site": "",
                                          "replications": 10})
    cfg2 = write_config(tmp_path, "sw.cfg", {
        "dim": 2, "side": 8, "u_grid": "0.2,0.5", "seg_len": 1,
        "giant_len": 2, "reach_exp": 0.5, "replications": 10,
        "master_seed": 11, "start": 0, "event": "GIANT", "t": 20,
        "out": out})
    assert run_cli("estimate", "--config", cfg2) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "u,event,successes,trials,estimate,ci_low,ci_high"
    assert len(lines) == 3


def test_merge_subcommand_and_mismatch(tmp_path, capsys):
    out = tmp_path / "m"
    cfg = estimate_config(tmp_path, out, {"chunk_size": 12})
    assert run_cli("estimate", "--config", cfg) == 0
    chunks = sorted((out / "chunks").glob("*.json"))
    assert len(chunks) == 2
    merged_path = tmp_path / "merged.json"
    assert run_cli("merge", *[str(c) for c in chunks], "--out", str(merged_path)) == 0
    merged = json.loads(merged_path.read_text())
    report = json.loads((out / "report.json").read_text())
    assert merged["successes"] == report["results"][0]["successes"]
    assert merged["seeds_digest"] == report["results"][0]["seeds_digest"]

    # different master seed -> named field in the error
    out_b = tmp_path / "mb"
    cfg_b = estimate_config(tmp_path, out_b, {"chunk_size": 12, "master_seed": 12})
    assert run_cli("estimate", "--config", cfg_b) == 0
    chunk_b = sorted((out_b / "chunks").glob("*.json"))[0]
    code = run_cli("merge", str(chunks[0]), str(chunk_b))
    assert code == 2
    assert "master_seed" in capsys.readouterr().err


def test_estimate_survival_event(tmp_path):
    g = TorusGeometry(2, 7)
    out = tmp_path / "surv"
    cfg = write_config(tmp_path, "s.cfg", {
        "dim": 2, "side": 7, "steps_per_site": 1.0, "seg_len": 1,
        "giant_len": 2, "reach_exp": 0.5, "replications": 200,
        "master_seed": 3, "start": 0, "event": "SURVIVAL",
        "anchor": int(g.encode(np.array([3, 3]))), "inner_radius": 1,
        "outer_radius": 2, "budgets": "1,2", "out": out})
    assert run_cli("estimate", "--config", cfg) == 0
    body = json.loads((out / "report.json").read_text())
    assert len(body["results"]) == 2
    assert body["results"][0]["estimate"] >= body["results"][1]["estimate"]
    assert body["results"][0]["exact"] is not None


def test_golden_gamma_run_matches_recorded_report(tmp_path):
    out = tmp_path / "golden"
    cfg = write_config(tmp_path, "g.cfg", {
        "dim": 2, "side": 8, "steps_per_site": 1.0, "seg_len": 1,
        "giant_len": 2, "reach_exp": 0.5, "replications": 100,
        "master_seed": 20080415, "start": "uniform", "event": "GAMMA_GE_1",
        "anchors": "27,45", "out": out})
    assert run_cli("estimate", "--config", cfg) == 0
    got = json.loads((out / "report.json").read_text())
    want = json.loads((DATA / "golden_gamma_report.json").read_text())
    got.pop("manifest")
    want.pop("manifest")
    assert json.dumps(got, sort_keys=True) == json.dumps(want, sort_keys=True)
