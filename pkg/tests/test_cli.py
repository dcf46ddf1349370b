"""End-to-end CLI tests: files written, exit codes, determinism."""

import json
import subprocess
import sys

import pytest

from servesim.cli import main
from servesim.workload import load_trace, write_trace

TINY = {
    "seed": 3,
    "workload": {"synth": {"duration_s": 5.0, "mean_qps": 2.0, "seed": 1}},
}


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return path


def test_run_writes_outputs(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["run", "--config", str(tiny_cfg), "--out-dir", str(out)])
    assert rc == 0
    assert (out / "records_fcfs_random.csv").is_file()
    assert (out / "summary.csv").is_file()
    assert (out / "summary.json").is_file()
    stdout = capsys.readouterr().out
    assert "fcfs/random: n=" in stdout
    rows = json.loads((out / "summary.json").read_text())
    assert len(rows) == 1
    assert rows[0]["policy"] == "fcfs"
    assert rows[0]["n_requests"] > 0


def test_run_outputs_are_byte_identical(tiny_cfg, tmp_path):
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["run", "--config", str(tiny_cfg), "--out-dir", str(out1)]) == 0
    assert main(["run", "--config", str(tiny_cfg), "--out-dir", str(out2)]) == 0
    for name in ("records_fcfs_random.csv", "summary.csv", "summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_run_honors_nested_set_overrides(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    rc = main(
        [
            "run",
            "--config",
            str(tiny_cfg),
            "--out-dir",
            str(out),
            "--set",
            "cluster.engine.policy=larry",
            "--set",
            "cluster.balancer.name=rr",
            "--set",
            "cluster.n_servers=2",
        ]
    )
    assert rc == 0
    assert (out / "records_larry_rr.csv").is_file()


def test_synth_seed_override_changes_records(tiny_cfg, tmp_path):
    outs = []
    for i, seed in enumerate((1, 2)):
        out = tmp_path / f"o{i}"
        rc = main(
            [
                "run",
                "--config",
                str(tiny_cfg),
                "--out-dir",
                str(out),
                "--set",
                f"workload.synth.seed={seed}",
            ]
        )
        assert rc == 0
        outs.append((out / "records_fcfs_random.csv").read_bytes())
    assert outs[0] != outs[1]


def test_sweep_emits_one_row_per_factor_and_combo(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    rc = main(
        [
            "sweep",
            "--config",
            str(tiny_cfg),
            "--out-dir",
            str(out),
            "--set",
            "sweep_factors=[0.5, 1.0]",
            "--set",
            'policies=["fcfs", "larry"]',
            "--set",
            'balancers=["rr"]',
        ]
    )
    assert rc == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert len(rows) == 4
    assert {(r["factor"], r["policy"]) for r in rows} == {
        (0.5, "fcfs"),
        (0.5, "larry"),
        (1.0, "fcfs"),
        (1.0, "larry"),
    }
    header, *body = (out / "sweep.csv").read_text().splitlines()
    assert header.startswith("factor,policy,balancer,")
    assert len(body) == 4


def test_validate_trace_prints_stats(tmp_path, capsys):
    path = tmp_path / "t.csv"
    entries = [(float(i), 1154, 211) for i in range(5)]
    from servesim.workload import TraceEntry

    write_trace(path, [TraceEntry(t, p, o) for t, p, o in entries], "combined")
    rc = main(["validate-trace", str(path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "format: combined" in out
    assert "requests: 5" in out
    assert "duration_s: 4.000" in out
    assert "mean_prompt_tokens: 1154.000" in out
    assert "implied_beta: 6.469194" in out  # 1365/211


def test_validate_trace_sizes_format(tmp_path, capsys):
    path = tmp_path / "sizes.csv"
    write_trace(path, [(2047, 27)] * 3, "sizes")
    rc = main(["validate-trace", str(path), "--format", "sizes"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "requests: 3" in out
    assert "duration_s" not in out
    assert "implied_beta: 76.814815" in out  # 2074/27


def test_validate_trace_rejects_bad_file(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("arrival_s,prompt_tokens,output_tokens\n1.0,10,1\n0.5,10,1\n")
    rc = main(["validate-trace", str(path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_synth_writes_loadable_trace(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "trace.csv"
    rc = main(["synth", "--config", str(tiny_cfg), "--out", str(out)])
    assert rc == 0
    entries = load_trace(out, "combined")
    assert f"wrote {len(entries)} requests" in capsys.readouterr().out
    first = out.read_bytes()
    assert main(["synth", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    assert out.read_bytes() == first

    # the written trace feeds back in as a combined workload
    out_dir = tmp_path / "replay"
    rc = main(
        [
            "run",
            "--config",
            str(tiny_cfg),
            "--out-dir",
            str(out_dir),
            "--set",
            "workload=" + json.dumps({"combined": str(out)}),
        ]
    )
    assert rc == 0


def test_synth_requires_synthetic_workload(tmp_path):
    trace = tmp_path / "t.csv"
    trace.write_text("arrival_s,prompt_tokens,output_tokens\n0.0,10,1\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"workload": {"combined": str(trace)}}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--set", "cluster.engine.policy=bogus"],
        ["run", "--set", "nope=1"],
        ["run", "--set", "cluster.engine.pool_blocks=4"],  # synth prompts never fit
        ["validate-trace", "missing.csv"],
    ],
)
def test_validation_failures_exit_one(argv, tmp_path, capsys):
    if argv[0] == "run":
        argv = argv + ["--out-dir", str(tmp_path / "out"), "--set", "workload.synth.duration_s=2"]
    assert main(argv) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_config_file_exits_one(tmp_path, capsys):
    rc = main(["run", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "cannot read" in capsys.readouterr().err


def test_invalid_json_config_exits_one(tmp_path, capsys):
    cfg = tmp_path / "broken.json"
    cfg.write_text("{oops")
    rc = main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "JSON" in capsys.readouterr().err


def test_runtime_failures_exit_two(tiny_cfg, tmp_path, capsys):
    rc = main(
        [
            "run",
            "--config",
            str(tiny_cfg),
            "--out-dir",
            str(tmp_path / "out"),
            "--set",
            'cluster.engine.cost={"mem_base_s": -1.0}',
        ]
    )
    assert rc == 2
    assert "runtime error:" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("arrival_s,prompt_tokens,output_tokens\n0.0,100,10\n1.5,50,5\n")
    proc = subprocess.run(
        [sys.executable, "-m", "servesim.cli", "validate-trace", str(path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "requests: 2" in proc.stdout
