import csv
import os

import pytest
import yaml

from platoon_hinf.cli import DEFAULTS, ConfigError, RunConfig, main, svg_line_plot

SMALL = {
    "learner": {"value_degree": [2, 2], "schedule": {"i_max": 2, "k_max": 1, "tol_outer": 0.0}},
    "sim": {"horizon": 6.0},
}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


@pytest.fixture(scope="module")
def learned(tmp_path_factory):
    d = tmp_path_factory.mktemp("learn")
    cfg = write_cfg(d, SMALL)
    out = str(d / "out")
    assert main(["learn", "--config", cfg, "--out", out]) == 0
    return cfg, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_defaults_validate():
    assert RunConfig.from_dict({}).data == DEFAULTS


def test_config_round_trip():
    cfg = RunConfig.from_dict(SMALL)
    assert RunConfig.from_dict(yaml.safe_load(cfg.dump())) == cfg


def test_shipped_configs_load():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    names = [f for f in os.listdir(root) if f.endswith(".yaml")]
    assert "paper_small.yaml" in names
    for f in names:
        RunConfig.load(os.path.join(root, f))
    paper = RunConfig.load(os.path.join(root, "paper_small.yaml"))
    assert paper.schedule().i_max == 20 and paper.fleet().cav_indices == (1,)


@pytest.mark.parametrize("bad,key", [
    ({"fleet": {"nn": 3}}, "fleet.nn"),
    ({"learner": {"schedule": {"i_max": 0}}}, "i_max"),
    ({"weights": {"theta_s": "x"}}, "weights.theta_s"),
    ({"sim": {"dynamics": "fuzzy"}}, "sim.dynamics"),
    ({"fleet": {"cav_indices": [2]}}, "fleet"),
])
def test_malformed_config_names_key(tmp_path, capsys, bad, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        RunConfig.from_dict(bad)
    assert main(["learn", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path)]) == 2
    assert key in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["learn", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_learn_outputs(learned):
    _, out = learned
    arts = sorted(os.listdir(os.path.join(out, "artifacts")))
    assert arts == ["controller_001.txt", "controller_002.txt"]
    gam = [float(r["gamma"]) for r in read_csv(os.path.join(out, "gamma.csv"))]
    assert gam[1] <= gam[0] * (1 + 1e-6)
    for f in ("iteration_log.csv", "gamma.svg", "config.resolved.yaml"):
        assert os.path.getsize(os.path.join(out, f)) > 0


def test_single_outer_iteration_gives_one_artifact(tmp_path):
    cfg = write_cfg(tmp_path, {"learner": {"value_degree": [2, 2],
                                           "schedule": {"i_max": 1, "k_max": 1}}})
    assert main(["learn", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert os.listdir(tmp_path / "o" / "artifacts") == ["controller_001.txt"]


def test_simulate_all_hdv_and_artifact(learned, tmp_path):
    cfg, out = learned
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--all-hdv"]) == 0
    rows = read_csv(tmp_path / "velocity_all_hdv.csv")
    assert list(rows[0]) == ["t", "head", "vehicle1", "vehicle2", "vehicle3"]
    svg = (tmp_path / "velocity_all_hdv.svg").read_text()
    assert svg.startswith("<svg") and "#9a9a9a" in svg and "#1f5fd6" not in svg
    art = os.path.join(out, "artifacts", "controller_002.txt")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--artifact", art]) == 0
    assert "#1f5fd6" in (tmp_path / "velocity_controller_002.svg").read_text()
    gain = yaml.safe_load((tmp_path / "gain_controller_002.yaml").read_text())
    assert gain["empirical_gamma"] > 0 and gain["certified_gamma"] > 0


def test_simulate_argument_errors(learned, tmp_path):
    cfg, _ = learned
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path),
                 "--artifact", str(tmp_path / "missing.txt")]) == 2


def test_fingerprint_mismatch_rejected(learned, tmp_path):
    _, out = learned
    other = write_cfg(tmp_path, {**SMALL, "fleet": {"ovm": {"alpha": 0.5}}})
    art = os.path.join(out, "artifacts", "controller_001.txt")
    assert main(["simulate", "--config", other, "--out", str(tmp_path), "--artifact", art]) == 2


def test_evaluate_is_deterministic(learned, tmp_path, capsys):
    cfg, out = learned
    a1, a2 = (os.path.join(out, "artifacts", f"controller_00{i}.txt") for i in (1, 2))
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path),
                 "--artifact", a1, "--artifact", a2, "--artifact", a2]) == 0
    rows = read_csv(tmp_path / "evaluation.csv")
    assert len(rows) == 3 and rows[1] == rows[2]
    assert float(rows[1]["certified_gamma"]) <= float(rows[0]["certified_gamma"])
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "one"), "--artifact", a1]) == 0
    assert len(read_csv(tmp_path / "one" / "evaluation.csv")) == 1
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_report_with_artifacts(learned, tmp_path):
    cfg, out = learned
    adir = os.path.join(out, "artifacts")
    arts = sum((["--artifact", os.path.join(adir, f)] for f in sorted(os.listdir(adir))), [])
    assert main(["report", "--config", cfg, "--out", str(tmp_path)] + arts) == 0
    for f in ("velocity_all_hdv.svg", "velocity_controller_001.svg", "velocity_controller_002.svg",
              "evaluation.csv"):
        assert (tmp_path / f).exists()


def test_stability_command(learned, tmp_path):
    cfg, out = learned
    art = os.path.join(out, "artifacts", "controller_002.txt")
    args = ["stability", "--config", cfg, "--artifact", art, "--seed", "3", "--count", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "stability.csv").read_text()
    assert a == (tmp_path / "b" / "stability.csv").read_text()
    assert len(a.splitlines()) == 4


def test_blowup_exit_code(learned, tmp_path):
    _, out = learned
    cfg = write_cfg(tmp_path, {**SMALL, "sim": {"horizon": 6.0, "blowup": 1e-3}})
    art = os.path.join(out, "artifacts", "controller_001.txt")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--artifact", art]) == 4


def test_svg_plot_is_well_formed():
    import xml.etree.ElementTree as ET
    import numpy as np
    t = np.linspace(0, 1, 50)
    svg = svg_line_plot([("a", t, np.sin(t), "#000000"), ("b", t, np.cos(t), "#1f5fd6")],
                        "title", "x", "y")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert svg.count("<polyline") == 2
