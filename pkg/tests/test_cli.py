import subprocess
import sys

import pytest

from quasistat import (
    build_logistic,
    certify,
    compute_qsd,
    derive_certificate_via_criterion,
    parse_certificate_text,
)
from quasistat.cli import main

CATASTROPHE_FILE = """\
states 8
rate 1 2 1.0
rate 2 3 1.0
rate 3 4 1.0
rate 4 5 1.0
rate 5 6 1.0
rate 6 7 1.0
rate 2 1 3.0
rate 3 1 3.0
rate 4 1 3.0
rate 5 1 3.0
rate 6 1 3.0
rate 7 1 3.0
rate 1 0 1.0
"""


def run(argv):
    return main(argv)


# -- exit codes ------------------------------------------------------------------


def test_no_command_is_usage_error(capsys):
    assert run([]) == 2
    capsys.readouterr()


def test_missing_required_args(capsys):
    assert run(["qsd"]) == 2
    capsys.readouterr()


def test_bad_chain_file_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.txt"
    p.write_text("states 4\nbogus directive\n")
    code = run(["qsd", "--chain", str(p), "--out", str(tmp_path)])
    captured = capsys.readouterr()
    assert code == 1
    assert "bad.txt:2" in captured.err


def test_missing_file_is_io_error(tmp_path, capsys):
    code = run(["qsd", "--chain", str(tmp_path / "nope.txt"), "--out", str(tmp_path)])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_threads_zero_rejected(capsys):
    code = run(["--threads", "0", "qsd", "--logistic", "1", "1", "1", "--out", "."])
    assert code == 2
    assert "threads" in capsys.readouterr().err


# -- qsd -----------------------------------------------------------------------------


def test_qsd_logistic_auto(tmp_path, capsys):
    code = run(["qsd", "--logistic", "1", "1", "1", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "qsd.csv" in out
    lines = (tmp_path / "qsd.csv").read_text().strip().splitlines()
    total = sum(float(line.split(",")[1]) for line in lines[1:])
    assert total == pytest.approx(1.0, abs=1e-12)


def test_qsd_matches_library(tmp_path, capsys):
    code = run(["qsd", "--logistic", "1", "1", "1", "--states", "64", "--out", str(tmp_path)])
    capsys.readouterr()
    assert code == 0
    lines = (tmp_path / "qsd.csv").read_text().strip().splitlines()
    got = [float(line.split(",")[1]) for line in lines[1:]]
    want = compute_qsd(build_logistic(1.0, 1.0, 1.0, 64), tol=1e-10).qsd.weights
    assert max(abs(a - b) for a, b in zip(got, want)) < 1e-12


def test_qsd_reruns_byte_identical(tmp_path, capsys):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    for d in (a_dir, b_dir):
        assert run(["qsd", "--logistic", "1.5", "1", "0.5", "--out", str(d)]) == 0
    capsys.readouterr()
    assert (a_dir / "qsd.csv").read_bytes() == (b_dir / "qsd.csv").read_bytes()


def test_threads_flag_never_changes_output(tmp_path, capsys):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    assert run(["--threads", "1", "qsd", "--logistic", "1", "1", "1", "--out", str(a_dir)]) == 0
    assert run(["--threads", "8", "qsd", "--logistic", "1", "1", "1", "--out", str(b_dir)]) == 0
    capsys.readouterr()
    assert (a_dir / "qsd.csv").read_bytes() == (b_dir / "qsd.csv").read_bytes()


# -- certify ----------------------------------------------------------------------------


def test_certify_logistic_auto_pipeline(tmp_path, capsys):
    code = run(["certify", "--logistic", "1", "1", "1", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0 and "gamma=" in out
    cert = parse_certificate_text((tmp_path / "certificate.txt").read_text())
    assert cert.K == (1,) and 0 < cert.gamma <= 0.5


def test_certify_explicit_chain_requires_K(tmp_path, capsys):
    p = tmp_path / "chain.txt"
    p.write_text(CATASTROPHE_FILE)
    code = run(["certify", "--chain", str(p), "--out", str(tmp_path)])
    assert code == 1
    assert "--K" in capsys.readouterr().err


def test_certify_criterion_route_matches_library(tmp_path, capsys):
    p = tmp_path / "chain.txt"
    p.write_text(CATASTROPHE_FILE)
    code = run([
        "certify", "--chain", str(p), "--K", "1", "--x0", "1",
        "--route", "criterion", "--out", str(tmp_path),
    ])
    capsys.readouterr()
    assert code == 0
    cert = parse_certificate_text((tmp_path / "certificate.txt").read_text())
    import quasistat

    chain = quasistat.parse_chain_text(CATASTROPHE_FILE)
    want = derive_certificate_via_criterion(chain, (1,), 1)
    assert cert == want


def test_certify_direct_route_matches_library(tmp_path, capsys):
    p = tmp_path / "chain.txt"
    p.write_text(CATASTROPHE_FILE)
    code = run(["certify", "--chain", str(p), "--K", "1", "--x0", "1", "--out", str(tmp_path)])
    capsys.readouterr()
    assert code == 0
    cert = parse_certificate_text((tmp_path / "certificate.txt").read_text())
    import quasistat

    want = certify(quasistat.parse_chain_text(CATASTROPHE_FILE), (1,), 1)
    assert cert == want


# -- criterion -----------------------------------------------------------------------------


def test_criterion_with_core(tmp_path, capsys):
    p = tmp_path / "chain.txt"
    p.write_text(CATASTROPHE_FILE)
    code = run(["criterion", "--chain", str(p), "--K", "1", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "core_return=holds" in out
    text = (tmp_path / "criterion.txt").read_text()
    assert "c4_bound = 1.5" in text
    assert "core_return_test = holds" in text


def test_criterion_prefix_scan(tmp_path, capsys):
    p = tmp_path / "chain.txt"
    p.write_text(CATASTROPHE_FILE)
    code = run(["criterion", "--chain", str(p), "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "uniform_rates=holds" in out
    assert "K = 1" in (tmp_path / "criterion.txt").read_text()


# -- bd ----------------------------------------------------------------------------------------


def test_bd_artifacts(tmp_path, capsys):
    code = run(["bd", "--logistic", "1", "1", "1", "--x-max", "12", "--j-max", "8",
                "--out", str(tmp_path)])
    capsys.readouterr()
    assert code == 0
    report = (tmp_path / "bd_report.txt").read_text()
    assert "z0 = 1" in report
    alpha = (tmp_path / "bd_alpha.csv").read_text().strip().splitlines()
    assert len(alpha) == 9
    hitting = (tmp_path / "bd_hitting.csv").read_text().strip().splitlines()
    assert hitting[0].startswith("x,")
    assert len(hitting) == 12  # x = 2..12


# -- decay -------------------------------------------------------------------------------------


def test_decay_with_auto_certificate(tmp_path, capsys):
    code = run([
        "decay", "--logistic", "1", "1", "1", "--mu", "1", "--nu", "40",
        "--t-grid", "1:12:1", "--auto-certify", "--out", str(tmp_path),
    ])
    capsys.readouterr()
    assert code == 0
    lines = (tmp_path / "decay.csv").read_text().strip().splitlines()
    assert len(lines) == 13
    for line in lines[1:]:
        t, tv_mu, tv_nu, tv_pair, bound = (float(v) for v in line.split(","))
        assert tv_pair <= bound + 1e-9
        assert tv_mu <= bound + 1e-9


def test_decay_auto_certify_needs_logistic(tmp_path, capsys):
    p = tmp_path / "chain.txt"
    p.write_text(CATASTROPHE_FILE)
    code = run(["decay", "--chain", str(p), "--mu", "1", "--nu", "2",
                "--auto-certify", "--out", str(tmp_path)])
    assert code == 1
    assert "auto-certify" in capsys.readouterr().err


def test_decay_reads_certificate_file(tmp_path, capsys):
    assert run(["certify", "--logistic", "1", "1", "1", "--out", str(tmp_path)]) == 0
    code = run([
        "decay", "--logistic", "1", "1", "1", "--mu", "1", "--nu", "qsd",
        "--t-grid", "1,2,4", "--certificate", str(tmp_path / "certificate.txt"),
        "--out", str(tmp_path),
    ])
    capsys.readouterr()
    assert code == 0
    lines = (tmp_path / "decay.csv").read_text().strip().splitlines()
    assert len(lines) == 4


# -- simulate and fv ------------------------------------------------------------------------------


def test_simulate_reruns_byte_identical(tmp_path, capsys):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    base = ["simulate", "--logistic", "1", "1", "1", "--states", "32", "--mu", "3",
            "--horizon", "2.0", "--n-paths", "500", "--seed", "9"]
    assert run(base + ["--out", str(a_dir)]) == 0
    assert run(base + ["--out", str(b_dir)]) == 0
    out = capsys.readouterr().out
    assert "survival_fraction=" in out
    assert (a_dir / "batch.csv").read_bytes() == (b_dir / "batch.csv").read_bytes()


def test_simulate_seed_changes_output(tmp_path, capsys):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    base = ["simulate", "--logistic", "1", "1", "1", "--states", "32", "--mu", "3",
            "--horizon", "2.0", "--n-paths", "500"]
    assert run(base + ["--seed", "9", "--out", str(a_dir)]) == 0
    assert run(base + ["--seed", "10", "--out", str(b_dir)]) == 0
    capsys.readouterr()
    assert (a_dir / "batch.csv").read_bytes() != (b_dir / "batch.csv").read_bytes()


def test_simulate_stop_set(tmp_path, capsys):
    code = run(["simulate", "--logistic", "1", "1", "1", "--states", "32", "--mu", "5",
                "--horizon", "inf", "--n-paths", "200", "--seed", "4",
                "--stop-set", "1", "--out", str(tmp_path)])
    capsys.readouterr()
    assert code == 0
    lines = (tmp_path / "batch.csv").read_text().strip().splitlines()
    assert len(lines) == 201
    # every path stops at state 1 with a recorded time
    for line in lines[1:]:
        _, end, t = line.split(",")
        assert end == "1" and t != ""


def test_fv_counts_and_qsd_comparison(tmp_path, capsys):
    code = run(["fv", "--logistic", "1", "1", "1", "--states", "32",
                "--horizon", "5.0", "--n-particles", "400", "--seed", "2",
                "--sample-times", "2.5,5.0", "--compare-qsd", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "tv_to_qsd=" in out
    lines = (tmp_path / "fv.csv").read_text().strip().splitlines()
    totals: dict = {}
    for line in lines[1:]:
        t, _, count = line.split(",")
        totals[t] = totals.get(t, 0) + int(count)
    assert set(totals.values()) == {400}


# -- installed entry point ------------------------------------------------------------------------


def test_console_script_runs(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "quasistat.cli", "qsd", "--logistic", "1", "1", "1",
         "--states", "16", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert (tmp_path / "qsd.csv").exists()
