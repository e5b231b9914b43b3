import csv
import io

import pytest

from bpsim.cli import DSE_HEADER, corpus_paths, main, noise_table, run_dse
from bpsim.config import load_config


def corpus(name):
    return str(next(p for p in corpus_paths() if p.stem == name))


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_compile_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert main(["compile", corpus("fc_small"), "-o", str(a)]) == 0
    summary = capsys.readouterr().out
    assert summary.startswith("layer,kind,")
    assert main(["compile", corpus("fc_small"), "-o", str(b), "--summary", str(tmp_path / "s.csv")]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "s.csv").read_text() == summary


def test_compile_infeasible(tmp_path, capsys):
    m = tmp_path / "big.model"
    m.write_text("input x: batch=1 height=64 width=64 channels=4096\nconv c: in=x out_channels=8 kernel=3\n")
    assert main(["compile", str(m), "-o", str(tmp_path / "p.bin")]) == 2
    err = capsys.readouterr().err
    assert "infeasible" in err and "IBUF" in err


def test_user_errors(tmp_path, capsys):
    m = tmp_path / "bad.model"
    m.write_text("input x: batch=1 channels=4\nfc f: in=y out_features=3\n")
    assert main(["compile", str(m), "-o", str(tmp_path / "p.bin")]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["compile", corpus("relu"), "-o", str(tmp_path / "p.bin"), "--set", "chip.nope=1"]) == 1
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert main(["simulate", str(tmp_path / "junk.bin")]) == 1
    assert main(["simulate", str(tmp_path / "missing.bin")]) == 1


def test_simulate_reports(tmp_path):
    prog = tmp_path / "p.bin"
    assert main(["compile", corpus("small_cnn"), "-o", str(prog), "--summary", str(tmp_path / "s.csv")]) == 0
    stats, energy = tmp_path / "stats.csv", tmp_path / "energy.csv"
    trace, outs = tmp_path / "trace.csv", tmp_path / "out.npz"
    assert main(["simulate", str(prog), "--stats", str(stats), "--energy", str(energy),
                 "--trace", str(trace), "--outputs", str(outs)]) == 0
    s = {r["stat"]: r["value"] for r in rows(stats.read_text())}
    assert s["reference_match"] == "pass"
    assert int(s["total_cycles"]) > 0
    e = rows(energy.read_text())
    assert [r["category"] for r in e] == ["compute", "memory", "interconnect", "dram", "total"]
    assert trace.read_text().startswith("cycle,unit,event\n")
    assert outs.exists()


def test_simulate_seeds(tmp_path):
    prog = tmp_path / "p.bin"
    main(["compile", corpus("fc_small"), "-o", str(prog), "--summary", str(tmp_path / "s.csv")])

    def run(seed):
        out = tmp_path / f"s{seed}.csv"
        assert main(["simulate", str(prog), "--mode", "nonideal", "--seed", str(seed), "--stats", str(out),
                     "--energy", str(tmp_path / "e.csv"), "--set", "simulation.sigma_acc=0.002"]) == 0
        return {r["stat"]: r["value"] for r in rows(out.read_text())}

    a, b, c = run(1), run(2), run(1)
    assert a["total_cycles"] == b["total_cycles"]
    assert a["output_digest"] != b["output_digest"]
    assert a == c


def test_simulate_wrong_chip(tmp_path):
    prog = tmp_path / "p.bin"
    main(["compile", corpus("relu"), "-o", str(prog), "--summary", str(tmp_path / "s.csv")])
    assert main(["simulate", str(prog), "--set", "chip.m_cycles=64"]) == 1


def test_estimate(capsys):
    assert main(["estimate", corpus("conv3x3")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("layer,") and out[-1].startswith("total,")


def test_noise_report():
    text = noise_table(load_config(), [4, 8, 16], [3], [8, 32], [4, 8], [300.0], trials=8)
    r = rows(text)
    assert len(r) == 12
    assert all(float(x["finetune_max_rel_err"]) < 1e-12 for x in r)
    assert all(0 < float(x["gain_full_scale"]) < 1 for x in r)


def test_noise_report_command(capsys):
    assert main(["noise-report", "--alpha", "8", "--m", "32", "--n", "8", "--temperature", "329"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2
    assert main(["noise-report", "--m", "x"]) == 1


def test_dse_single_point():
    text = run_dse(load_config(), "default", [corpus("fc_small")])
    r = rows(text)
    assert text.splitlines()[0] == DSE_HEADER
    assert len(r) == 2 and r[0]["point"] == "0" and r[1]["point"] == "best"


def test_dse_row_equals_simulate(tmp_path):
    r = rows(run_dse(load_config(), "default", [corpus("conv3x3")]))[0]
    prog = tmp_path / "p.bin"
    main(["compile", corpus("conv3x3"), "-o", str(prog), "--summary", str(tmp_path / "s.csv")])
    stats = tmp_path / "st.csv"
    energy = tmp_path / "en.csv"
    main(["simulate", str(prog), "--stats", str(stats), "--energy", str(energy)])
    s = {x["stat"]: x["value"] for x in rows(stats.read_text())}
    e = {x["category"]: x["joules"] for x in rows(energy.read_text())}
    assert r["cycles"] == s["total_cycles"]
    assert float(r["energy_j"]) == pytest.approx(float(e["total"]), rel=1e-9)


def test_dse_partition_and_rates():
    cfg = load_config()
    r = rows(run_dse(cfg, "partition", [corpus("fc_small")]))
    macc = {x["partition_bits"]: float(x["macc_8b_fj"]) for x in r if x["point"] != "best"}
    assert macc["2"] == pytest.approx(185.35, abs=0.01)
    assert min(macc, key=macc.get) == "2"
    r = rows(run_dse(cfg, "lanes", [corpus("fc_small")]))
    for x in r[:-1]:
        assert float(x["adc_rate_required_hz"]) == pytest.approx(500e6 / (int(x["m_cycles"]) + 1), rel=1e-5)
    status = {(x["n_lanes"], x["m_cycles"]): x["status"] for x in r[:-1]}
    assert status[("16", "16")] == "infeasible:adc_rate" and status[("8", "32")] == "ok"


def test_dse_workers_deterministic():
    cfg = load_config(None, ["sweep.cores_per_vault=[1, 2]"])
    models = [corpus("fc_small"), corpus("relu")]
    assert run_dse(cfg, "cores", models, workers=2) == run_dse(cfg, "cores", models, workers=1)


def test_dse_infeasible_rows_continue(tmp_path):
    m = tmp_path / "big.model"
    m.write_text("input x: batch=1 channels=20000\nfc f: in=x out_features=2\n")
    cfg = load_config(None, ["sweep.cores_per_vault=[4]"])
    r = rows(run_dse(cfg, "cores", [str(m)]))
    assert r[0]["status"] == "infeasible:IBUF"
    assert len(r) == 1


def test_dse_command(capsys):
    assert main(["dse", "--sweep", "default", "--models", corpus("relu")]) == 0
    assert capsys.readouterr().out.startswith("point,")
    assert main(["dse", "--workers", "0"]) == 1
