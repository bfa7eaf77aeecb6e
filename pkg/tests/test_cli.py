import csv
import functools
import json

import numpy as np
import pytest

from tensorcast import cli, harness
from tensorcast.kernels import CastedIndex, tensor_casting

SMALL = {"model": {"base": "RM1", "batch": 128}, "table_rows": 20000}


def write_cfg(tmp_path, **kw):
    raw = {**SMALL, "out": str(tmp_path / "out"), **kw}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(raw))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def off_by_one(idx):
    c = tensor_casting(idx)
    dst = c.casted_dst.copy()
    if dst.size > 2:
        dst[-1] = dst[0]
    return CastedIndex(c.casted_src, dst, c.unique_rows)


def test_golden_check():
    assert harness.golden_check()
    assert not harness.golden_check(off_by_one)


def test_equivalence_passes(tmp_path, capsys):
    code = cli.main(["equivalence", "--config", str(write_cfg(tmp_path)), "--instances", "200"])
    assert code == 0
    rep = json.loads((tmp_path / "out" / "equivalence.json").read_text())
    assert rep["passed"] and rep["max_rel_error"] <= 1e-6 and rep["failing_seed"] is None
    assert rep["seed"] == 0 and len(rep["config_hash"]) == 16


def test_equivalence_thousand_instances():
    cfg = harness.ExperimentConfig.from_dict({})
    rep = harness.cmd_equivalence(cfg, instances=1000, write=False)
    assert rep["passed"] and rep["instances"] == 1000


def test_corrupted_cast_reports_seed(tmp_path, monkeypatch, capsys):
    monkeypatch.setitem(cli.COMMANDS, "equivalence",
                        functools.partial(harness.cmd_equivalence, cast_fn=off_by_one))
    code = cli.main(["equivalence", "--config", str(write_cfg(tmp_path)),
                     "--instances", "50", "--seed", "7"])
    assert code == 1
    err = capsys.readouterr().err
    rep = json.loads((tmp_path / "out" / "equivalence.json").read_text())
    assert rep["failing_seed"] is not None and rep["failing_seed"] >= 7
    assert f"FAILED at seed {rep['failing_seed']}" in err


def test_run_writes_four_timelines(tmp_path):
    code = cli.main(["run", "--config", str(write_cfg(tmp_path))])
    assert code == 0
    out = tmp_path / "out"
    assert len(list((out / "timelines").glob("*.csv"))) == 4
    summary = read_csv(out / "summary.csv")
    assert summary[0] == list(harness.SUMMARY_HEADER)
    assert len(summary) == 1 + 4
    assert read_csv(out / "breakdown.csv")[0][:3] == ["batch", "dim", "design"]


def test_run_batch_sweep(tmp_path):
    cli.main(["run", "--config", str(write_cfg(tmp_path, batches=[64, 128, 256]))])
    rows = read_csv(tmp_path / "out" / "summary.csv")[1:]
    assert len(rows) == 12
    assert sorted({int(r[0]) for r in rows}) == [64, 128, 256]


def test_run_deterministic(tmp_path):
    a = harness.cmd_run(harness.ExperimentConfig.from_dict(SMALL), write=False)
    b = harness.cmd_run(harness.ExperimentConfig.from_dict(SMALL), write=False)
    assert a["summary"] == b["summary"]
    assert a["config_hash"] == b["config_hash"]
    c = harness.ExperimentConfig.from_dict(SMALL)
    c.seed = 1
    assert harness.cmd_run(c, write=False)["config_hash"] != a["config_hash"]


def test_traffic_command(tmp_path):
    p = write_cfg(tmp_path, traffic={"L": 10, "B": 1, "U": 10, "D": 64})
    assert cli.main(["traffic", "--config", str(p)]) == 0
    rows = read_csv(tmp_path / "out" / "traffic.csv")
    assert rows[0] == ["primitive", "reads", "writes", "index", "total"]
    assert rows[1] == ["gather_reduce", "2560", "256", "160", "2976"]
    rep = json.loads((tmp_path / "out" / "traffic.json").read_text())
    assert rep["casted_over_expand_coalesce"] <= 0.55


def test_traffic_from_workload():
    rep = harness.cmd_traffic(harness.ExperimentConfig.from_dict(SMALL), write=False)
    assert rep["params"]["L"] == 128 * 80
    assert rep["params"]["U"] < rep["params"]["L"]


def test_cast_command_matches_example(tmp_path):
    inp = tmp_path / "idx.csv"
    inp.write_text("src,dst\n1,0\n2,0\n4,0\n0,1\n2,1\n")
    assert cli.main(["cast", str(inp), "--out", str(tmp_path / "c")]) == 0
    casted = read_csv(tmp_path / "c" / "casted.csv")
    assert casted[0] == ["casted_src", "casted_dst"]
    assert [tuple(map(int, r)) for r in casted[1:]] == [(1, 0), (0, 1), (0, 2), (1, 2), (0, 3)]
    assert [int(r[0]) for r in read_csv(tmp_path / "c" / "unique_rows.csv")[1:]] == [0, 1, 2, 4]


def test_cast_empty_file_errors(tmp_path, capsys):
    inp = tmp_path / "empty.csv"
    inp.write_text("")
    assert cli.main(["cast", str(inp), "--out", str(tmp_path)]) == 2
    assert "no rows" in capsys.readouterr().err


def test_cast_files_roundtrip_through_equivalence(tmp_path):
    rng = np.random.default_rng(5)
    inp = tmp_path / "idx.csv"
    rows = [(int(s), int(d)) for s, d in zip(rng.integers(0, 20, 300), rng.integers(0, 40, 300))]
    inp.write_text("src,dst\n" + "".join(f"{s},{d}\n" for s, d in rows))
    harness.cmd_cast(inp, tmp_path / "c")
    cfg = harness.ExperimentConfig.from_dict({
        "cast_files": {"index": str(inp), "casted": str(tmp_path / "c" / "casted.csv"),
                       "unique_rows": str(tmp_path / "c" / "unique_rows.csv")}})
    rep = harness.cmd_equivalence(cfg, instances=5, write=False)
    assert rep["passed"] and rep["cast_files_error"] <= 1e-6


def test_simulate_command(tmp_path):
    p = write_cfg(tmp_path, distribution={"kind": "uniform"},
                  simulate={"rows": 50000, "dim": 64})
    assert cli.main(["simulate", "--config", str(p)]) == 0
    rep = json.loads((tmp_path / "out" / "simulate.json").read_text())
    assert 600e9 <= rep["effective_bw"] <= 819.2e9
    assert sum(rep["per_rank_accesses"]) == 50000 * 4


def test_gen_workload_command(tmp_path):
    p = write_cfg(tmp_path, model={"base": "RM3", "batch": 64}, shrink_batches=[64, 128])
    assert cli.main(["gen-workload", "--config", str(p)]) == 0
    out = tmp_path / "out"
    assert len(list((out / "indices").glob("table*.csv"))) == 10
    first = read_csv(out / "indices" / "table0.csv")
    assert first[0] == ["src", "dst"] and len(first) == 1 + 64 * 20
    assert len(read_csv(out / "shrink.csv")) == 3
    assert read_csv(out / "histogram.csv")[0] == ["row_id", "count"]


def test_histogram_distribution_relative_path(tmp_path):
    (tmp_path / "h.csv").write_text("row_id,count\n0,5\n3,5\n")
    p = write_cfg(tmp_path, distribution={"kind": "histogram", "path": "h.csv"})
    cfg = harness.ExperimentConfig.load(p)
    assert set(np.unique(cfg.make_distribution().sample(100, np.random.default_rng(0)))) == {0, 3}


def test_bad_config_exit_code(tmp_path, capsys):
    p = write_cfg(tmp_path, model="RM9")
    assert cli.main(["run", "--config", str(p)]) == 2
    assert "RM9" in capsys.readouterr().err
