import csv
import json
import re

import pytest

from vexpand import cli

DOUBLING = '{"family": "circle_expand", "k": 2, "eps": 0.0}'
PERTURBED = '{"family": "circle_expand", "k": 2, "eps": 0.05}'
DIAG = '{"family": "linear", "A": [[2, 0], [0, 3]]}'


def skew(m):
    return '{"family": "skew_cosine", "m": %d, "a": %d}' % (m, m)


def invoke(tmp_path, command, *args, name="out"):
    out = tmp_path / name
    code = cli.run([command, "--output", str(out), "--threads", "1", *args])
    report = None
    if (out / "report.json").exists():
        report = json.loads((out / "report.json").read_text())
    return code, report, out


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# --- weight ---

def test_weight_linear(tmp_path):
    code, rep, _ = invoke(tmp_path, "weight", "--set", f"map={DIAG}", "--mu", "1")
    assert code == 0
    assert rep["schema"] == "vexpand.report/1" and rep["command"] == "weight"
    assert rep["result"]["estimates"][0]["value"] == pytest.approx(0.5, abs=1e-15)
    assert rep["exit_code"] == 0 and "seconds" in rep["timing"]


def test_weight_skew_below_final_bound(tmp_path):
    code, rep, _ = invoke(tmp_path, "weight", "--set", f"map={skew(64)}",
                          "--set", 'grid={"spatial": 128, "directions": 256}')
    assert code == 0
    assert rep["result"]["estimates"][0]["value"] < 0.6713


def test_weight_refinement_history_is_reported(tmp_path):
    code, rep, _ = invoke(tmp_path, "weight", "--set", f"map={skew(8)}", "--n-max", "2",
                          "--set", 'grid={"spatial": 8, "directions": 8, "refine": true}')
    assert code == 0
    ests = rep["result"]["estimates"]
    assert [e["n"] for e in ests] == [1, 2]
    hist = [v for _, v in ests[0]["refinement_history"]]
    assert len(hist) >= 2 and hist == sorted(hist)


def test_empty_grid_is_a_configuration_error(tmp_path, capsys):
    code, rep, _ = invoke(tmp_path, "weight", "--set", f"map={DIAG}", "--set", 'grid={"spatial": 0}')
    assert code == 1 and rep is None
    assert "grid.spatial" in capsys.readouterr().err


@pytest.mark.parametrize("override,field", [
    ('bogus=1', "bogus"),
    ('grid={"spacing": 4}', "grid.spacing"),
    ('map={"family": "tent"}', "map"),
    ('spectral={"K": []}', "spectral.K"),
    ('oracle={"burn_in": 5000}', "oracle.burn_in"),
])
def test_invalid_configuration_names_field(tmp_path, capsys, override, field):
    code, _, _ = invoke(tmp_path, "weight", "--set", override)
    assert code == 1
    assert field in capsys.readouterr().err


def test_missing_map(tmp_path, capsys):
    code, _, _ = invoke(tmp_path, "weight")
    assert code == 1 and "map" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"map": json.loads(DIAG), "mu": 2.0, "grid": {"spatial": 4, "directions": 8}}))
    code, rep, _ = invoke(tmp_path, "weight", "--config", str(cfg))
    assert rep["result"]["estimates"][0]["value"] == pytest.approx(0.25, abs=1e-15)
    code, rep, _ = invoke(tmp_path, "weight", "--config", str(cfg), "--mu", "1")
    assert code == 0 and rep["result"]["estimates"][0]["value"] == pytest.approx(0.5, abs=1e-15)
    assert rep["config"]["grid"] == {"spatial": 4, "directions": 8, "refine": False, "certified": False,
                                     "polish": 0}


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert invoke(tmp_path, "weight", "--config", str(bad))[0] == 1
    assert invoke(tmp_path, "weight", "--config", str(tmp_path / "missing.json"))[0] == 1


# --- rate ---

def test_rate_doubling(tmp_path):
    code, rep, _ = invoke(tmp_path, "rate", "--set", f"map={DOUBLING}", "--mu", "1", "--n-max", "3")
    rate = rep["result"]["rate"]
    assert code == 0
    assert rate["fekete_min"] == pytest.approx(0.25, abs=1e-15)
    assert rate["classification"] == "virtually_expanding"
    assert rate["exponent"] == 2.0


def test_rate_skew(tmp_path):
    code, rep, _ = invoke(tmp_path, "rate", "--set", f"map={skew(64)}", "--mu", "0.5",
                          "--set", 'grid={"spatial": 64, "directions": 128}')
    assert code == 0 and rep["result"]["rate"]["classification"] == "virtually_expanding"


def test_rate_tree_overflow(tmp_path, capsys):
    code, rep, _ = invoke(tmp_path, "rate", "--set", f"map={skew(64)}", "--n-max", "5")
    assert code == 2
    assert "TreeOverflow" in capsys.readouterr().err
    assert rep["result"]["error"]["type"] == "TreeOverflow"
    assert rep["exit_code"] == 2


# --- spectrum, density, cesaro ---

def test_spectrum_doubling(tmp_path):
    code, rep, out = invoke(tmp_path, "spectrum", "--set", f"map={DOUBLING}", "--n-max", "2",
                            "--set", 'spectral={"K": [8, 16]}')
    er = rep["result"]["essential_radius"]
    assert code == 0
    assert er["bound"] == pytest.approx(0.5) and er["bulk_radius"] == 0.0 and er["consistent"]
    nonzero = [e for e in er["leading"] if e["modulus"] > 1e-10]
    assert len(nonzero) == 1 and nonzero[0]["re"] == pytest.approx(1.0, abs=1e-12) and nonzero[0]["stable"]
    rows = read_csv(out / "spectrum.csv")
    assert rows[0] == ["re", "im", "modulus", "stable_flag"] and len(rows) == 34
    dens = read_csv(out / "density.csv")
    assert dens[0] == ["x", "value"]
    assert all(abs(float(r[1]) - 1.0) < 1e-10 for r in dens[1:])


def test_spectrum_skew_small_case(tmp_path):
    code, rep, out = invoke(tmp_path, "spectrum", "--set", f"map={skew(8)}",
                            "--set", 'spectral={"K": [4, 8]}', "--set", 'grid={"spatial": 16, "directions": 32}')
    lead = rep["result"]["leading_eigenvalue"]
    assert code == 0
    assert abs(complex(lead["re"], lead["im"]) - 1) <= 1e-8
    assert read_csv(out / "density.csv")[0] == ["x", "y", "value"]


def test_spectrum_single_cutoff_is_rejected(tmp_path, capsys):
    code, _, _ = invoke(tmp_path, "spectrum", "--set", f"map={DOUBLING}", "--set", 'spectral={"K": [8]}')
    assert code == 1 and "spectral.K" in capsys.readouterr().err


def test_density_command(tmp_path):
    code, rep, out = invoke(tmp_path, "density", "--set", f"map={PERTURBED}", "--set", 'spectral={"K": [32]}')
    assert code == 0
    assert rep["result"]["eigenvalue"]["re"] == pytest.approx(1.0, abs=1e-8)
    assert rep["result"]["density"]["mean"] == pytest.approx(1.0)
    assert len(read_csv(out / "density.csv")) == 257


def test_cesaro_command(tmp_path):
    code, rep, _ = invoke(tmp_path, "cesaro", "--set", f"map={DOUBLING}")
    res = rep["result"]
    assert code == 0
    assert res["h0_norm"] == pytest.approx(0.01, abs=1e-12)
    assert res["l2_norm"] == pytest.approx(0.5 ** 0.5 / 100, abs=1e-12)
    code, _, _ = invoke(tmp_path, "cesaro", "--set", f"map={skew(3)}", "--set", 'cesaro={"u": "smoothed_indicator"}')
    assert code == 1


# --- certify ---

def test_certify_m64_passes(tmp_path):
    code, rep, _ = invoke(tmp_path, "certify-example", "--m", "64", "--mu", "1",
                          "--set", 'certify={"q_samples": 128, "directions": 256}')
    cert = rep["result"]["certificate"]
    assert code == 0 and cert["verdict"] == "pass"
    assert cert["horizontal_value"] == pytest.approx(1 / 64)
    assert cert["max_cone_ratio"] <= 0.5047


def test_certify_m2_fails_with_witness(tmp_path, capsys):
    code, rep, _ = invoke(tmp_path, "certify-example", "--m", "2",
                          "--set", 'certify={"q_samples": 64, "directions": 128}')
    assert code == 3
    cert = rep["result"]["certificate"]
    assert cert["verdict"] == "fail" and cert["first_failure"]["check"] == "cone_ratio_bound"
    assert "CertFailed" in capsys.readouterr().err


def test_certify_requires_m(tmp_path, capsys):
    code, _, _ = invoke(tmp_path, "certify-example")
    assert code == 1 and "certify.m" in capsys.readouterr().err


# --- oracle-check ---

def test_oracle_check_bessel_and_pointwise(tmp_path):
    code, rep, _ = invoke(tmp_path, "oracle-check", "--set", f"map={DOUBLING}",
                          "--set", 'oracle={"checks": ["bessel", "pointwise", "structure"]}')
    d = rep["result"]["deltas"]
    assert code == 0 and rep["result"]["failed"] == []
    assert d["bessel"] <= 1e-8
    assert d["pointwise"] <= 1e-12
    assert d["mass_row"] <= 1e-10 and d["shift_structure"] <= 1e-12


def test_oracle_check_histogram(tmp_path):
    code, rep, out = invoke(tmp_path, "oracle-check", "--set", f"map={PERTURBED}", "--seed", "42",
                            "--set", 'oracle={"checks": ["histogram"]}', "--set", 'spectral={"K": [64]}')
    assert code == 0 and rep["result"]["deltas"]["histogram"] <= 0.02
    assert read_csv(out / "histogram.csv")[0] == ["x", "value"]


def test_oracle_check_failure_exits_2(tmp_path):
    # far too few orbit points for the histogram tolerance
    code, rep, _ = invoke(tmp_path, "oracle-check", "--set", f"map={PERTURBED}",
                          "--set", 'oracle={"checks": ["histogram"], "n_points": 5, "n_iter": 3, "burn_in": 1}')
    assert code == 2 and rep["result"]["failed"] == ["histogram"]


def test_oracle_check_identities(tmp_path):
    code, rep, _ = invoke(tmp_path, "oracle-check", "--set", 'oracle={"checks": ["identities"], "identity_samples": 10}')
    assert code == 0
    assert set(rep["result"]["deltas"]) == {"scale_invariance", "factorization", "mu_zero", "submultiplicativity"}


# --- report format ---

def strip_timing(text):
    return re.sub(r'"timing": \{[^}]*\}', "", text)


def test_reports_are_byte_identical_modulo_timing(tmp_path):
    args = ["--set", f"map={PERTURBED}", "--seed", "9",
            "--set", 'oracle={"checks": ["histogram", "pointwise"], "n_points": 300, "n_iter": 40, "burn_in": 5}',
            "--set", 'spectral={"K": [16]}']
    invoke(tmp_path, "oracle-check", *args, name="a")
    cli.run(["oracle-check", "--output", str(tmp_path / "b"), "--threads", "3", *args])
    a = (tmp_path / "a" / "report.json").read_text()
    b = (tmp_path / "b" / "report.json").read_text()
    assert strip_timing(a.replace(str(tmp_path / "a"), "")) == strip_timing(b.replace(str(tmp_path / "b"), ""))


def test_floats_use_17_significant_digits(tmp_path):
    _, _, out = invoke(tmp_path, "weight", "--set", f"map={PERTURBED}", "--set", 'grid={"spatial": 64, "directions": 1}')
    text = (out / "report.json").read_text()
    assert '"value": 0.53858732923779652' in text or '"value": 0.5385873292377965' in text
    assert cli.dumps(0.1) == "0.10000000000000001"
    assert cli.dumps(2.0) == "2.0" and cli.dumps(1e-20) == "9.9999999999999995e-21"
    assert cli.dumps({"a": [1, 2.5], "b": None, "c": True}) == '{\n  "a": [1, 2.5],\n  "b": null,\n  "c": true\n}'


def test_main_exit_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        import sys
        argv = sys.argv
        sys.argv = ["vexpand", "certify-example", "--output", str(tmp_path)]
        try:
            cli.main()
        finally:
            sys.argv = argv
    assert info.value.code == 1
