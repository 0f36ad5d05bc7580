import json

import pytest

from saddleflow import bundled_config
from saddleflow.cli import main
from saddleflow.config import ConfigError, RunConfig, load_config

SMALL = {
    "preset": {"name": "cubic"},
    "basis": {"n": 12},
    "mollifier": {"m_schedule": [16, 32]},
    "k_schedule": [1],
    "minimax": {"samples": 24},
}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write(root, SMALL)
    code = main(["run", str(cfg), "-o", str(root / "out")])
    return code, root / "out", cfg


def test_defaults_roundtrip():
    cfg = RunConfig()
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert cfg.basis.stages == [24]


def test_bundled_configs_validate():
    for name in ("thm12_1d", "cubic_1d", "thm45"):
        load_config(bundled_config(name))
    flagship = load_config(bundled_config("thm12_1d"))
    assert (flagship.preset.p, flagship.preset.q) == (4, 3)
    assert flagship.k_schedule == [1, 2, 3, 4] and flagship.basis.n == 24


@pytest.mark.parametrize("bad, needle", [
    ({"preset": {"name": "thm12", "p": 3, "q": 4}}, "2 <= q < p < 2*"),
    ({"preset": {"name": "thm12", "p": 4, "q": 1.5}}, "2 <= q < p < 2*"),
    ({"bogus": 1}, "bogus"),
    ({"flow": {"rtol": -1}}, "flow.rtol"),
    ({"k_schedule": [30]}, "k_schedule"),
    ({"basis": {"n": 24, "n_schedule": [32]}}, "n_schedule"),
])
def test_validation(bad, needle):
    with pytest.raises(ConfigError, match=None) as info:
        RunConfig.from_dict(bad)
    assert needle in str(info.value)


def test_rectangle_allows_any_exponent():
    RunConfig.from_dict({"domain": {"kind": "rectangle", "size": ["pi", "pi"]},
                         "preset": {"name": "thm12", "p": 9, "q": 5}})


def test_invalid_config_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, {"preset": {"name": "thm12", "p": 3, "q": 4}})
    assert main(["run", str(cfg)]) == 2
    assert "2 <= q < p" in capsys.readouterr().err


def test_module_error_exits_3_and_names_stage(tmp_path, capsys):
    cfg = write(tmp_path, {"preset": {"name": "linear", "lam": 0.5}, "basis": {"n": 6},
                           "mollifier": {"m_schedule": [8]}, "k_schedule": [1], "minimax": {"samples": 16}})
    assert main(["run", str(cfg), "-o", str(tmp_path / "out")]) == 3
    assert "geometry" in capsys.readouterr().err


def test_run_writes_artifacts(small_run):
    code, out, _ = small_run
    assert code == 0
    for name in ("solutions.csv", "solutions.json", "certificates.json", "profiles.csv", "config_used.json"):
        assert (out / name).exists()
    lines = (out / "solutions.csv").read_text().splitlines()
    assert lines[0] == "k,energy,residual,n_neg,n_null,norm_X,certified"
    assert lines[1].split(",")[-1] == "1"
    certs = json.loads((out / "certificates.json").read_text())
    run = certs["runs"][0]
    assert all(a["passed"] for a in certs["ar"])
    assert run["bounds"]["lower_ok"] and run["bounds"]["upper_ok"]
    assert all(f["passed"] for f in run["flow_certificates"])
    header = (out / "profiles.csv").read_text().splitlines()[0]
    assert header == "x,u_1"


def test_verify_fresh_artifacts(small_run, capsys):
    _, out, _ = small_run
    assert main(["verify", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"]


def test_verify_catches_perturbation(small_run, tmp_path):
    _, out, _ = small_run
    bad = tmp_path / "bad"
    bad.mkdir()
    for name in ("config_used.json", "solutions.json"):
        (bad / name).write_text((out / name).read_text())
    data = json.loads((bad / "solutions.json").read_text())
    data["solutions"][0]["coeffs"][2] += 1e-2
    (bad / "solutions.json").write_text(json.dumps(data))
    assert main(["verify", str(bad)]) == 1


def test_verify_dimension_mismatch(small_run, tmp_path, capsys):
    _, out, _ = small_run
    other = tmp_path / "other"
    other.mkdir()
    (other / "solutions.json").write_text((out / "solutions.json").read_text())
    cfg = json.loads((out / "config_used.json").read_text())
    cfg["basis"]["n"] = 16
    (other / "config_used.json").write_text(json.dumps(cfg))
    assert main(["verify", str(other)]) == 2
    assert "dimension mismatch" in capsys.readouterr().err


def test_repeat_run_is_byte_identical(small_run, tmp_path, monkeypatch):
    _, out, cfg = small_run
    monkeypatch.setenv("SADDLEFLOW_THREADS", "3")
    assert main(["run", str(cfg), "-o", str(tmp_path / "again")]) == 0
    for name in ("solutions.csv", "solutions.json", "profiles.csv"):
        assert (tmp_path / "again" / name).read_bytes() == (out / name).read_bytes()


def test_oracle1d_command(tmp_path, capsys):
    cfg = write(tmp_path, {"preset": {"name": "cubic"},
                           "oracle": {"slope_range": [-3.0, 3.0], "scan": 60}})
    assert main(["oracle1d", str(cfg), "-o", str(tmp_path / "o")]) == 0
    sols = json.loads((tmp_path / "o" / "oracle1d.json").read_text())
    assert len(sols) == 2 and all(s["sturm_index"] == 1 for s in sols)
    assert "sturm=1" in capsys.readouterr().out


def test_oracle1d_needs_interval(tmp_path):
    cfg = write(tmp_path, {"domain": {"kind": "rectangle", "size": ["pi", "pi"]}})
    assert main(["oracle1d", str(cfg)]) == 2


def test_thm45_command(tmp_path):
    assert main(["thm45", str(bundled_config("thm45")), "-o", str(tmp_path / "t")]) == 0
    reports = json.loads((tmp_path / "t" / "thm45.json").read_text())["reports"]
    assert [round(r["d"], 6) for r in reports] == [0.25, 0.5]
