import csv
import json
from pathlib import Path

import pytest

from mecmfg.cli import COLUMNS, main
from mecmfg.config import ConfigError, load, parse_override, split_path

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
GOLDEN_HEADER = ("sweep_param,sweep_value,type_id,p_r,p_y,p_g,mu0,rho_r,rho_y,rho_g,"
                 "aoi_r,aoi_y,aoi_g,power,cost,converged,outer_iters,wall_ms")


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def without_wall_time(path):
    return [{k: v for k, v in row.items() if k != "wall_ms"} for row in read_rows(path)]


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return p


def test_validate_fig4(capsys):
    assert main(["validate", "--config", str(CONFIGS / "fig4.json")]) == 0
    assert capsys.readouterr().out.strip() == "valid"


def test_negative_rate_names_path(capsys):
    code = main(["validate", "--config", str(CONFIGS / "fig4.json"),
                 "--set", "system.profiles[0].arrival_rates.yellow=-3"])
    err = capsys.readouterr().err
    assert code == 2
    assert "system.profiles[0].arrival_rates.yellow" in err


def test_sweep_over_non_scalar_path(tmp_path):
    with pytest.raises(ConfigError) as e:
        load(CONFIGS / "fig4.json", ["sweep.parameter=\"system.profiles\""])
    assert any("sweep.parameter" in d and "scalar" in d for d in e.value.diagnostics)


def test_sweep_grid_checks():
    with pytest.raises(ConfigError) as e:
        load(CONFIGS / "fig4.json", ["sweep.values=[2, 4, 4]"])
    assert any("strictly monotone" in d for d in e.value.diagnostics)
    with pytest.raises(ConfigError) as e:
        load(CONFIGS / "fig4.json", ["sweep.values=[]"])
    assert any("nonempty" in d for d in e.value.diagnostics)


def test_every_violation_listed(tmp_path):
    doc = json.loads((CONFIGS / "fig4.json").read_text())
    doc["system"]["V"] = -1
    doc["system"]["es_rate"] = 0
    doc["solver"] = {"gamma_mf": 2}
    doc["bogus"] = 1
    with pytest.raises(ConfigError) as e:
        load(write(tmp_path, doc))
    text = "\n".join(e.value.diagnostics)
    for needle in ("system.V", "system.es_rate", "solver.gamma_mf", "bogus: unknown key"):
        assert needle in text


def test_parse_error_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "schema_version": 1,\n  "mode": "solve",,\n}\n')
    assert main(["solve", "--config", str(p)]) == 2
    assert f"{p}:3:" in capsys.readouterr().err


def test_validation_diagnostics_carry_line(tmp_path):
    doc = json.loads((CONFIGS / "fig4.json").read_text())
    doc["system"]["es_rate"] = -1
    with pytest.raises(ConfigError) as e:
        load(write(tmp_path, doc))
    line = e.value.diagnostics[0].split(":")[1]
    text = (tmp_path / "cfg.json").read_text().splitlines()
    assert '"es_rate"' in text[int(line) - 1]


def test_override_parsing():
    assert split_path("system.profiles[0].arrival_rates.red") == ["system", "profiles", 0, "arrival_rates", "red"]
    assert parse_override("system.es_rate=12.5") == ("system.es_rate", 12.5)
    assert parse_override("output=some/dir") == ("output", "some/dir")
    with pytest.raises(ValueError):
        parse_override("novalue")


def test_aoi_mode_single_ue_all_local(tmp_path, capsys):
    assert main(["aoi", "--config", str(CONFIGS / "single_local.json"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "aoi_r=1.5 " in out
    rows = read_rows(tmp_path / "results.csv")
    assert float(rows[0]["aoi_r"]) == 1 / 1.0 + 1 / 2.0


def test_csv_header_golden(tmp_path):
    main(["aoi", "--config", str(CONFIGS / "single_local.json"), "--out", str(tmp_path)])
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header == GOLDEN_HEADER == ",".join(COLUMNS)


def test_override_beats_file_and_is_recorded(tmp_path):
    main(["aoi", "--config", str(CONFIGS / "single_local.json"), "--out", str(tmp_path),
          "--set", "policies[0].mu0=1.0"])
    rows = read_rows(tmp_path / "results.csv")
    assert float(rows[0]["mu0"]) == 1.0
    assert float(rows[0]["aoi_r"]) == pytest.approx(2.0, abs=1e-12)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["overrides"] == ["policies[0].mu0=1.0"]
    assert manifest["resolved_config"]["policies"][0]["mu0"] == 1.0


def test_solve_manifest_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--config", str(CONFIGS / "fig4.json"), "--out", str(a)]) == 0
    assert main(["solve", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert without_wall_time(a / "results.csv") == without_wall_time(b / "results.csv")
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_simulate_manifest_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--set", "sim.events=100000", "--seed", "3"]
    assert main(["simulate", "--config", str(CONFIGS / "fig4_simulate.json"), "--out", str(a)] + args) == 0
    assert main(["simulate", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert without_wall_time(a / "results.csv") == without_wall_time(b / "results.csv")
    assert (a / "simstats.json").read_bytes() == (b / "simstats.json").read_bytes()
    assert json.loads((a / "manifest.json").read_text())["seed"] == {"solver": 3, "sim": 3}


def test_nonconvergence_exit_code(tmp_path):
    code = main(["solve", "--config", str(CONFIGS / "fig4.json"), "--out", str(tmp_path),
                 "--set", "solver.max_outer=2"])
    assert code == 3
    rows = read_rows(tmp_path / "results.csv")
    assert rows[0]["converged"] == "0" and rows[0]["outer_iters"] == "2"


def test_parallel_sweep_keeps_order(tmp_path):
    args = ["sweep", "--config", str(CONFIGS / "fig4.json"), "--set", "sweep.mode=\"aoi\"",
            "--set", "sweep.values=[12, 8, 4]"]
    assert main(args + ["--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    assert main(args + ["--out", str(tmp_path / "s"), "--jobs", "1"]) == 0
    par, seq = without_wall_time(tmp_path / "p" / "results.csv"), without_wall_time(tmp_path / "s" / "results.csv")
    assert [r["sweep_value"] for r in par] == ["12", "8", "4"]
    assert par == seq


def test_warm_started_sweep(tmp_path):
    assert main(["sweep", "--config", str(CONFIGS / "fig4.json"), "--set", "sweep.values=[8, 10]",
                 "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "results.csv")
    assert [r["converged"] for r in rows] == ["1", "1"]
    trace = read_rows(tmp_path / "trace.csv")
    assert {r["sweep_value"] for r in trace} == {"8", "10"}
