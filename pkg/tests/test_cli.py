import json
import logging

import numpy as np
import pytest

from entcam.analysis import CertificationReport, parse_report_text
from entcam.cli import EXIT_ANALYSIS, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from entcam.events import encode_hits
from entcam.jpd import Jpd

# small, clean runs so the whole chain stays fast
FAST = ["--set", "run.duration_s=0.2", "--set", "source.pair_rate_hz=2e5",
        "--set", "detector.quantum_efficiency=1", "--set", "detector.dark_rate_hz_per_px=0",
        "--set", "run.chunk_s=0.1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """simulate + process in both bases, shared by the analyze tests."""
    root = tmp_path_factory.mktemp("chain")
    for basis in ("NF", "FF"):
        d = root / basis
        assert main(["simulate", *FAST, "--basis", basis, "--seed", "1", "--out", str(d)]) == 0
        assert main(["process", str(d / "hits.phl1"), *FAST, "--basis", basis,
                     "--out", str(d)]) == 0
    return root


def test_simulate_outputs_and_determinism(tmp_path, capsys):
    args = ["simulate", "--set", "run.duration_s=0.02", "--seed", "5", "--basis", "NF"]
    code, out, _ = run(capsys, *args, "--out", tmp_path / "a")
    assert code == EXIT_OK
    assert "pairs_emitted" in out and "hits_written" in out
    for name in ("hits.phl1", "truth.csv", "truth_links.csv", "config.json"):
        assert (tmp_path / "a" / name).exists()
    run(capsys, *args, "--out", tmp_path / "b")
    for name in ("hits.phl1", "truth.csv", "truth_links.csv", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_config_file(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"run.duration_s": 0.01, "run.basis": "NF"}))
    code, out, _ = run(capsys, "simulate", "--config", tmp_path / "c.json", "--out", tmp_path / "o")
    assert code == EXIT_OK and "NF" in out
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["run.duration_s"] == 0.01


def test_process_empty_file(tmp_path, capsys):
    (tmp_path / "e.phl1").write_bytes(encode_hits([]))
    code, out, _ = run(capsys, "process", tmp_path / "e.phl1", "--out", tmp_path)
    assert code == EXIT_OK
    j = Jpd.load(tmp_path / "jpd_ff.csv")
    assert j.total_pairs == 0


def test_process_corrupted_file(tmp_path, capsys):
    data = bytearray(encode_hits([]))
    data[:4] = b"JUNK"
    (tmp_path / "bad.phl1").write_bytes(bytes(data))
    code, _, err = run(capsys, "process", tmp_path / "bad.phl1", "--out", tmp_path)
    assert code == EXIT_DATA and "error" in err


def test_process_truncated_file_reports_offset(tmp_path, capsys):
    from entcam.events import PixelHit
    data = encode_hits([PixelHit(1, 1, 5, 3), PixelHit(2, 2, 9, 3)])[:-3]
    (tmp_path / "t.phl1").write_bytes(data)
    code, _, err = run(capsys, "process", tmp_path / "t.phl1", "--out", tmp_path)
    assert code == EXIT_DATA and "38" in err


def test_process_csv_input_and_window(tmp_path, capsys):
    (tmp_path / "h.csv").write_text("x,y,toa_ps,tot\n10,10,0,5\n200,10,4000,5\n")
    code, out, _ = run(capsys, "process", tmp_path / "h.csv", "--out", tmp_path,
                       "--set", "run.timewalk=0", "--window-ns", "5")
    assert code == EXIT_OK
    assert Jpd.load(tmp_path / "jpd_ff.csv").total_pairs == 1
    code, _, _ = run(capsys, "process", tmp_path / "h.csv", "--out", tmp_path,
                     "--set", "run.timewalk=0", "--window-ns", "3")
    assert Jpd.load(tmp_path / "jpd_ff.csv").total_pairs == 0


def test_process_prints_totals(chain):
    j = Jpd.load(chain / "FF" / "jpd_ff.csv")
    assert j.total_pairs > 10_000
    lines = (chain / "FF" / "pairs_ff.csv").read_text().splitlines()
    assert len(lines) - 1 >= j.total_pairs


def test_analyze_end_to_end(chain, tmp_path, capsys):
    out = tmp_path / "rep"
    code, text, _ = run(capsys, "analyze", "--nf", chain / "NF" / "jpd_nf.csv",
                        "--ff", chain / "FF" / "jpd_ff.csv", "--set", "analysis.n_trials=3",
                        "--out", out)
    assert code == EXIT_OK
    rep = CertificationReport.load_json(out / "report.json")
    assert rep.flags["violated_x"] and rep.flags["violated_y"]
    assert "config_hash" in rep.info
    for basis in ("nf", "ff"):
        for name in ("marginal_left", "marginal_right", "minus", "sum", "conditional"):
            assert (out / f"{basis}_{name}.txt").exists()
            assert (out / f"{basis}_{name}.pgm").exists()
    # deterministic for a fixed seed
    first = (out / "report.json").read_bytes()
    run(capsys, "analyze", "--nf", chain / "NF" / "jpd_nf.csv", "--ff", chain / "FF" / "jpd_ff.csv",
        "--set", "analysis.n_trials=3", "--out", out)
    assert (out / "report.json").read_bytes() == first


def test_analyze_missing_basis(chain, tmp_path, capsys):
    code, _, err = run(capsys, "analyze", "--nf", chain / "NF" / "jpd_nf.csv", "--out", tmp_path)
    assert code == EXIT_USAGE and "--ff" in err


def test_analyze_swapped_bases(chain, tmp_path, capsys):
    code, _, _ = run(capsys, "analyze", "--nf", chain / "FF" / "jpd_ff.csv",
                     "--ff", chain / "NF" / "jpd_nf.csv", "--out", tmp_path)
    assert code == EXIT_DATA


def test_analyze_failure_exit_code(tmp_path, capsys):
    Jpd.from_bins([1], [1], [200], [1], basis="NF").save(tmp_path / "n.csv")
    Jpd.from_bins([1], [1], [200], [1], basis="FF").save(tmp_path / "f.csv")
    code, _, err = run(capsys, "analyze", "--nf", tmp_path / "n.csv", "--ff", tmp_path / "f.csv",
                       "--out", tmp_path)
    assert code == EXIT_ANALYSIS and "failed" in err


def test_inject_table1(tmp_path, capsys):
    code, text, _ = run(capsys, "analyze", "--inject-table1", "--out", tmp_path)
    assert code == EXIT_OK
    rep = parse_report_text(text)
    assert round(rep["product_x"], 4) == 0.0331 and round(rep["product_y"], 4) == 0.0365
    assert rep["dim_total_floor"] == 15


def test_report_round_trip(tmp_path, capsys):
    run(capsys, "analyze", "--inject-table1", "--out", tmp_path)
    code, text, _ = run(capsys, "report", tmp_path / "report.json")
    assert code == EXIT_OK
    back = parse_report_text(text)
    orig = CertificationReport.load_json(tmp_path / "report.json")
    assert back.to_flat() == orig.to_flat()


def test_report_unknown_key_is_warning(tmp_path, capsys, caplog):
    run(capsys, "analyze", "--inject-table1", "--out", tmp_path)
    flat = json.loads((tmp_path / "report.json").read_text())
    flat["extra_key"] = 1.5
    (tmp_path / "report.json").write_text(json.dumps(flat))
    with caplog.at_level(logging.WARNING):
        code, text, _ = run(capsys, "report", tmp_path / "report.json")
    assert code == EXIT_OK and "extra_key" in caplog.text


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == EXIT_USAGE
    code, _, _ = run(capsys, "simulate", "--set", "noequals", "--out", tmp_path)
    assert code == EXIT_USAGE
    code, _, _ = run(capsys, "simulate", "--set", "detector.quantum_efficiency=3", "--out", tmp_path)
    assert code == EXIT_USAGE
    code, _, _ = run(capsys, "process", tmp_path / "nothing.phl1", "--out", tmp_path)
    assert code == EXIT_USAGE
    code, _, _ = run(capsys, "report", tmp_path / "nothing.json")
    assert code == EXIT_USAGE


def test_env_override_lowest_precedence(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ENTCAM_RUN__DURATION_S", "0.01")
    monkeypatch.setenv("ENTCAM_RUN__BASIS", "NF")
    code, out, _ = run(capsys, "simulate", "--basis", "FF", "--out", tmp_path)
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["run.duration_s"] == 0.01 and cfg["run.basis"] == "FF"


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    assert "detector.quantum_efficiency" in capsys.readouterr().out
