import json
import os

import pytest

from aoikit.cli import main, parse_emulated, parse_seconds, read_policy_config
from aoikit.errors import ConfigError

GOLDEN_TWO_PACKET = (
    "id,gen_ns,recv_ns,size_bytes\n"
    "0,0,1000000000,100\n"
    "1,1000000000,2000000000,100\n"
)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def kv(out: str) -> dict:
    pairs = {}
    for line in out.splitlines():
        if "=" in line and not line.startswith("#"):
            k, _, v = line.partition("=")
            pairs[k] = v
    return pairs


def test_parse_seconds_units():
    assert parse_seconds("12.5ms") == pytest.approx(0.0125)
    assert parse_seconds("250us") == pytest.approx(2.5e-4)
    assert parse_seconds("1s") == 1.0
    assert parse_seconds("0.25") == 0.25


def test_parse_emulated_spec():
    spec = parse_emulated("fixed_rtt=100ms,loss=0.05,seed=7", 0)
    assert spec.fwd_delay_s == pytest.approx(0.05)
    assert spec.bwd_delay_s == pytest.approx(0.05)
    assert spec.loss_p == 0.05
    assert spec.seed == 7
    with pytest.raises(ConfigError):
        parse_emulated("warp=9", 0)


def test_sim_writes_trace_meta_and_manifest(tmp_path, capsys):
    out = str(tmp_path / "t.csv")
    code, stdout, _ = run_cli(
        capsys, "sim", "--model", "mm1", "--rho", "0.5", "--mu", "1",
        "--arrivals", "5000", "--seed", "1", "--out", out,
    )
    assert code == 0
    stats = kv(stdout)
    assert float(stats["avg_age_recv_form_s"]) > 0
    assert os.path.exists(out)
    meta = dict(
        line.split("=", 1)
        for line in open(out + ".meta").read().splitlines()
    )
    assert meta["seed"] == "1"
    assert meta["unstable"] == "0"
    manifest = json.load(open(out + ".manifest.json"))
    assert manifest["subcommand"] == "sim"
    assert out in manifest["outputs"]
    assert manifest["seed"] == 1


def test_sim_repeats_are_byte_identical(tmp_path, capsys):
    a = str(tmp_path / "a.csv")
    b = str(tmp_path / "b.csv")
    for out in (a, b):
        code, _, _ = run_cli(
            capsys, "sim", "--model", "mm1", "--rho", "0.53", "--mu", "1",
            "--arrivals", "20000", "--seed", "42", "--out", out,
        )
        assert code == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_unstable_run_flagged_in_metadata(tmp_path, capsys):
    out = str(tmp_path / "u.csv")
    code, _, _ = run_cli(
        capsys, "sim", "--model", "mm1", "--rho", "1.2", "--mu", "1",
        "--arrivals", "5000", "--seed", "3", "--out", out,
    )
    assert code == 0
    assert "unstable=1" in open(out + ".meta").read()


def test_aoi_seed_env_fallback(tmp_path, capsys, monkeypatch):
    a = str(tmp_path / "a.csv")
    b = str(tmp_path / "b.csv")
    monkeypatch.setenv("AOI_SEED", "99")
    code, _, _ = run_cli(
        capsys, "sim", "--model", "mm1", "--rho", "0.5", "--mu", "1",
        "--arrivals", "2000", "--out", a,
    )
    assert code == 0
    monkeypatch.delenv("AOI_SEED")
    code, _, _ = run_cli(
        capsys, "sim", "--model", "mm1", "--rho", "0.5", "--mu", "1",
        "--arrivals", "2000", "--seed", "99", "--out", b,
    )
    assert code == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_analyze_golden_trace(tmp_path, capsys):
    path = tmp_path / "g.csv"
    path.write_text(GOLDEN_TWO_PACKET)
    code, stdout, _ = run_cli(capsys, "analyze", str(path))
    assert code == 0
    stats = kv(stdout)
    assert float(stats["avg_age_recv_form_s"]) == pytest.approx(1.5)
    assert float(stats["avg_age_gen_form_s"]) == pytest.approx(1.5)
    assert float(stats["peak_age_s"]) == pytest.approx(2.0)


def test_analyze_with_bias_and_penalty(tmp_path, capsys):
    path = tmp_path / "g.csv"
    path.write_text(GOLDEN_TWO_PACKET)
    code, stdout, _ = run_cli(capsys, "analyze", str(path), "--bias", "1000")
    assert kv(stdout)["avg_age_recv_form_s"] == "1001.5"
    code, stdout, _ = run_cli(
        capsys, "analyze", str(path), "--penalty", "linear", "--alpha", "2"
    )
    assert float(kv(stdout)["penalty_avg"]) == pytest.approx(3.0)


def test_analyze_malformed_row_reports_line_and_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("id,gen_ns,recv_ns,size_bytes\n0,0,10,0\n1,oops,20,0\n")
    code, _, err = run_cli(capsys, "analyze", str(path))
    assert code == 2
    assert "line 3" in err


def test_sweep_single_point(tmp_path, capsys):
    out = str(tmp_path / "s.csv")
    code, stdout, _ = run_cli(
        capsys, "sweep", "--rates", "0.5", "--arrival", "poisson",
        "--service", "exponential", "--mu", "1", "--arrivals", "5000",
        "--seed", "2", "--out", out,
    )
    assert code == 0
    lines = open(out).read().splitlines()
    assert lines[0] == "rate_hz,avg_age_s,peak_age_s,loss,avg_delay_s"
    assert len(lines) == 2
    assert kv(stdout)["points"] == "1"


def test_sweep_bottleneck_u_shape(tmp_path, capsys):
    out = str(tmp_path / "u.csv")
    code, stdout, _ = run_cli(
        capsys, "sweep", "--bottleneck-kbps", "130", "--rate-min", "1.5",
        "--rate-max", "46", "--points", "10", "--arrivals", "15000",
        "--seed", "5", "--out", out, "--gnuplot-hints",
    )
    assert code == 0
    assert "# gnuplot" in stdout
    rows = [line.split(",") for line in open(out).read().splitlines()[1:]]
    ages = [float(r[1]) for r in rows]
    k = ages.index(min(ages))
    assert 0 < k < len(ages) - 1


def test_sweep_discipline_comparison_high_rate_tail(tmp_path, capsys):
    # freshest-only queue must not blow up where the FIFO does
    outs = {}
    for disc in ("fcfs", "lcfs1"):
        out = str(tmp_path / f"{disc}.csv")
        code, _, _ = run_cli(
            capsys, "sweep", "--bottleneck-kbps", "130", "--rates", "38,46",
            "--discipline", disc, "--arrivals", "10000", "--seed", "4",
            "--out", out,
        )
        assert code == 0
        rows = [line.split(",") for line in open(out).read().splitlines()[1:]]
        outs[disc] = [float(r[1]) for r in rows]
    for lc, fc in zip(outs["lcfs1"], outs["fcfs"]):
        assert lc <= fc


def test_sweep_without_rates_is_config_error(tmp_path, capsys):
    code, _, err = run_cli(
        capsys, "sweep", "--out", str(tmp_path / "x.csv")
    )
    assert code == 2
    assert "error" in err


def test_measure_sampler_emulated(tmp_path, capsys):
    out = str(tmp_path / "m.csv")
    code, stdout, _ = run_cli(
        capsys, "measure", "sampler", "--emulated", "fixed_rtt=12.5ms",
        "--rate", "140", "--duration", "10", "--out", out,
    )
    assert code == 0
    stats = kv(stdout)
    assert float(stats["avg_age_recv_form_s"]) == pytest.approx(0.016071, rel=0.02)
    assert os.path.exists(out + ".manifest.json")


def test_measure_sync_emulated(capsys):
    code, stdout, _ = run_cli(
        capsys, "measure", "sync", "--emulated", "offset=5ms", "--pings", "100"
    )
    assert code == 0
    stats = kv(stdout)
    assert abs(int(stats["offset_ns"]) - 5_000_000) <= 100_000
    assert stats["pings"] == "100"


def test_policy_lazy_run(tmp_path, capsys):
    prefix = str(tmp_path / "lazy")
    code, stdout, _ = run_cli(
        capsys, "policy", "--name", "lazy", "--emulated", "fixed_rtt=100ms",
        "--duration", "20", "--out", prefix,
    )
    assert code == 0
    stats = kv(stdout)
    assert float(stats["mean_rate_hz"]) == pytest.approx(10.0, rel=0.05)
    log = open(prefix + ".decisions.csv").read().splitlines()
    assert log[0] == "epoch,action,target_backlog,rate_hz,avg_age_s,backlog"
    assert len(log) > 10
    assert os.path.exists(prefix + ".trace.csv")


def test_policy_config_file(tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("kappa=2.0\nepoch_ms=20\nbacklog_cap=8\n# comment\n")
    parsed = read_policy_config(str(cfg))
    assert parsed == {"kappa": "2.0", "epoch_ms": "20", "backlog_cap": "8"}
    prefix = str(tmp_path / "acp")
    code, stdout, _ = run_cli(
        capsys, "policy", "--name", "acp", "--emulated", "fixed_rtt=50ms",
        "--duration", "10", "--config", str(cfg), "--out", prefix,
    )
    assert code == 0
    rows = open(prefix + ".decisions.csv").read().splitlines()[1:]
    targets = [float(r.split(",")[2]) for r in rows]
    assert all(2.0 <= t <= 8.0 for t in targets)


def test_policy_qlearn_run(tmp_path, capsys):
    prefix = str(tmp_path / "ql")
    code, stdout, _ = run_cli(
        capsys, "policy", "--name", "qlearn", "--emulated", "fixed_delay=1s",
        "--iters", "10000", "--out", prefix,
    )
    assert code == 0
    stats = kv(stdout)
    resume_vals = [float(v) for k, v in stats.items()
                   if k.startswith("q_resume_bin")]
    assert resume_vals
    assert all(abs(v - 0.632) <= 0.02 for v in resume_vals)
    greedy = [v for k, v in stats.items() if k.startswith("greedy_bin")]
    assert set(greedy) == {"resume"}


def test_unknown_flag_exits_2(capsys):
    code, _, _ = run_cli(capsys, "sim", "--frobnicate")
    assert code == 2


def test_sim_million_arrivals_matches_oracle_through_analyze(tmp_path, capsys):
    out = str(tmp_path / "big.csv")
    code, stdout, _ = run_cli(
        capsys, "sim", "--model", "mm1", "--rho", "0.53", "--mu", "1",
        "--arrivals", "1000000", "--seed", "42", "--out", out,
    )
    assert code == 0
    analytic = float(kv(stdout)["analytic_avg_age_s"])
    code, stdout, _ = run_cli(capsys, "analyze", out)
    assert code == 0
    measured = float(kv(stdout)["avg_age_recv_form_s"])
    assert measured == pytest.approx(analytic, rel=0.02)


def test_policy_acp_capacity_step_preset(tmp_path, capsys):
    prefix = str(tmp_path / "acp")
    code, stdout, _ = run_cli(
        capsys, "policy", "--name", "acp", "--emulated", "capacity_step",
        "--duration", "30", "--out", prefix,
    )
    assert code == 0
    rows = open(prefix + ".decisions.csv").read().splitlines()[1:]
    assert any(r.split(",")[1] == "MDEC" for r in rows)


def test_measure_echo_server_lifecycle():
    import signal
    import subprocess
    import sys
    import time

    proc = subprocess.Popen(
        [sys.executable, "-m", "aoikit.cli", "measure", "echo-server",
         "--port", "0"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        line = proc.stdout.readline().strip()
        assert line.startswith("port=")
        assert int(line.split("=")[1]) > 0
        time.sleep(0.3)
        assert proc.poll() is None  # still serving
        proc.send_signal(signal.SIGTERM)
        out, _ = proc.communicate(timeout=5)
        assert proc.returncode == 0
        assert "rx=" in out and "malformed=" in out
    finally:
        if proc.poll() is None:
            proc.kill()


def test_measure_echo_server_bind_failure_exits_3(capsys):
    import socket

    taken = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    taken.bind(("127.0.0.1", 0))
    port = taken.getsockname()[1]
    try:
        code, _, err = run_cli(
            capsys, "measure", "echo-server", "--port", str(port)
        )
    finally:
        taken.close()
    assert code == 3
    assert "error" in err


def test_measure_sync_unanswered_peer_exits_3(capsys):
    import socket

    silent = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    silent.bind(("127.0.0.1", 0))
    port = silent.getsockname()[1]
    try:
        code, _, err = run_cli(
            capsys, "measure", "sync", "--peer", f"127.0.0.1:{port}",
            "--pings", "1",
        )
    finally:
        silent.close()
    assert code == 3
    assert "error" in err
