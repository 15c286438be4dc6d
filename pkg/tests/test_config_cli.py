import csv

import pytest

from thermocq.cli import EXIT_CONFIG, EXIT_OK, main
from thermocq.config import ConfigError, RunConfig, parse_complex, parse_config, parse_config_text


def test_defaults():
    cfg = parse_config_text("mesh = hexagon\nstudy = freq-h\n")
    assert cfg == RunConfig(mesh="hexagon", study="freq-h")
    assert cfg.s == 2.8j and cfg.levels == 4 and cfg.scheme == "bdf2"
    assert cfg.mesh_path().is_file()


def test_trapezoidal_time_study_is_accepted():
    cfg = parse_config_text("mesh = hexagon\nstudy = time-h\n[time]\nscheme = trap\ndt = 3.75e-2\n")
    assert cfg.dt == 3.75e-2 and cfg.scheme == "trap"


@pytest.mark.parametrize("text, match", [
    ("mesh = hexagon\nstudy = time-h\n[time]\ndt = -0.1\n", "dt"),
    ("mesh = hexagon\nstudy = time-h\ncolour = red\n", "unknown key"),
    ("mesh = hexagon\nstudy = time-h\n[extras]\na = 1\n", "unknown section"),
    ("mesh = nowhere.msh\nstudy = freq-h\n", "mesh not found"),
    ("study = freq-h\n", "mesh"),
    ("mesh = hexagon\nstudy = freq-q\n", "study"),
    ("mesh = hexagon\nstudy = freq-p\ndegree = 3\nlevels = 4\n", "degree"),
    ("mesh = hexagon\nstudy = freq-h\ns = -1+2i\n", "Re s"),
    ("mesh = hexagon\nstudy = freq-h\n[incident]\nwindow = box\n", "window"),
    ("mesh = hexagon\nstudy = freq-h\n[material]\npreset = granite\n", "preset"),
    ("mesh = hexagon\nstudy = freq-h\n[material]\nkappa = -1\n", "kappa"),
    ("mesh = hexagon\nstudy = freq-h\nlevels = two\n", "invalid value"),
])
def test_invalid_configurations(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_sections_and_overrides(tmp_path):
    (tmp_path / "m.msh").write_text((RunConfig("hexagon", "freq-h").mesh_path()).read_text())
    path = tmp_path / "c.ini"
    path.write_text("mesh = m.msh\nstudy = scatter\n[material]\npreset = pentagon\nrho_fluid = 2\n"
                    "kappa = 3\n[incident]\ndirection = 1, 0\ndelay = 0.2\n"
                    "[output]\nsnapshot_times = 0.5 1.0\ndirectory = out\n")
    cfg = parse_config(path)
    assert cfg.mesh == str((tmp_path / "m.msh").resolve())
    assert cfg.material == "pentagon" and cfg.rho_fluid == 2 and cfg.constants == {"kappa": 3.0}
    assert cfg.incident.direction == (1.0, 0.0) and cfg.incident.delay == 0.2
    assert cfg.snapshot_times == (0.5, 1.0) and cfg.output == "out"
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.ini")


def test_parse_complex():
    assert parse_complex("2.8i") == 2.8j
    assert parse_complex(" 1 + 3i ") == 1 + 3j
    with pytest.raises(ConfigError):
        parse_complex("abc")


def test_cq_weights_command(capsys):
    assert main(["cq-weights", "--scheme", "bdf2", "--dt", "0.1", "--n", "8"]) == EXIT_OK
    lines = [ln.split() for ln in capsys.readouterr().out.splitlines() if not ln.startswith(("#", "   m"))]
    first = [float(r[1]) for r in lines]
    second = [float(r[2]) for r in lines]
    assert first[:4] == [15.0, -20.0, 5.0, 0.0]
    assert second[:6] == [225.0, -600.0, 550.0, -200.0, 25.0, 0.0]
    assert main(["cq-weights", "--scheme", "trap", "--dt", "0.1", "--n", "3"]) == EXIT_OK
    rows = [ln.split() for ln in capsys.readouterr().out.splitlines()[2:]]
    assert [float(r[1]) for r in rows] == [20.0, -40.0, 40.0, -40.0]
    assert main(["cq-weights", "--scheme", "euler"]) == EXIT_CONFIG


def test_validate_command(tmp_path, capsys):
    p = tmp_path / "c.ini"
    p.write_text("mesh = hexagon\nstudy = freq-h\n")
    assert main(["validate", str(p)]) == EXIT_OK
    assert "study = freq-h" in capsys.readouterr().out
    p.write_text("mesh = hexagon\nstudy = freq-h\nbogus = 1\n")
    assert main(["validate", str(p)]) == EXIT_CONFIG


def _freq_config(tmp_path, name="c.ini"):
    p = tmp_path / name
    p.write_text("mesh = hexagon\nstudy = freq-h\nlevels = 2\nsamples = 5\n")
    return p


def test_run_writes_report_and_is_reproducible(tmp_path):
    cfg = _freq_config(tmp_path)
    assert main(["run", str(cfg), "-o", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", str(cfg), "-o", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "report.csv").read_bytes()
    assert a == (tmp_path / "b" / "report.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a" / "report.csv")))
    assert len(rows) == 2 and rows[0]["ecr_uL2"] == "" and rows[0]["dt"] == ""
    assert 1.5 < float(rows[1]["ecr_uL2"]) < 2.5
    assert (tmp_path / "a" / "run.log").read_text().count("config study = freq-h") == 1


def test_run_scatter_writes_snapshots(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("mesh = hexagon\nstudy = scatter\n[time]\ndt = 0.1\nt_end = 0.5\n"
                 "[incident]\nfrequency = 6\nwidth = 3\n[output]\nsnapshot_times = 0.3 0.5\ngrid = 9\n")
    out = tmp_path / "o"
    assert main(["run", str(p), "-o", str(out)]) == EXIT_OK
    names = sorted(f.name for f in out.iterdir())
    assert names == ["run.log", "snap_0.3.csv", "snap_0.5.csv", "solid_0.3.csv", "solid_0.5.csv"]
    head = (out / "snap_0.5.csv").read_text().splitlines()[0]
    assert head == "x,y,re,im"
    assert (out / "solid_0.5.csv").read_text().splitlines()[0] == "x,y,ux,uy,theta"


def test_output_directory_relative_to_config(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("mesh = hexagon\nstudy = freq-h\nlevels = 2\nsamples = 3\n[output]\ndirectory = res\n")
    assert main(["run", str(p)]) == EXIT_OK
    assert (tmp_path / "res" / "report.csv").is_file()


@pytest.mark.parametrize("value", ["zero", "0", "-2"])
def test_bad_thread_setting_is_a_config_error(tmp_path, monkeypatch, value):
    monkeypatch.setenv("THERMOCQ_THREADS", value)
    assert main(["run", str(_freq_config(tmp_path)), "-o", str(tmp_path / "x")]) == EXIT_CONFIG


def test_run_with_bad_config_exits_2(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("mesh = hexagon\n")
    assert main(["run", str(p)]) == EXIT_CONFIG
