import csv
import json

import pytest
import yaml

from nudich.cli import CSV_HEADER, main, run, validate

SMALL = {"t_max": 6, "time_points": 13}


def write(tmp_path, data, name="s.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data) if isinstance(data, dict) else data)
    return path


def scenario(system="Ex2_5", tasks=("compatibility", "envelope"), **params):
    return {"schema_version": 1, "system": system, "grid": dict(SMALL),
            "tasks": list(tasks), "task_params": params}


class TestValidate:
    def test_clean(self):
        assert validate(scenario("Ex2_6", ["compatibility", "envelope", "asymptotics"])) == []

    def test_shipped_scenarios(self, capsys):
        import pathlib
        root = pathlib.Path(__file__).resolve().parents[1] / "scenarios"
        for path in sorted(root.glob("*.yaml")):
            assert main(["validate", str(path)]) == 0, path

    def test_wrong_schema_version(self):
        data = scenario()
        data["schema_version"] = 2
        assert any("schema_version" in d for d in validate(data))

    def test_unknown_task(self):
        assert validate(scenario(tasks=["bogus"]))

    def test_prerequisite_order(self):
        assert any("datko" in d for d in validate(scenario(tasks=["datko", "compatibility"])))

    def test_nonpositive_gamma(self):
        assert validate(scenario(tasks=["compatibility", "envelope", "datko"],
                                 datko={"p": 2, "gamma": 0.0, "beta": 0}))

    def test_unknown_system(self):
        assert validate(scenario(system="Ex9_9"))


class TestRun:
    def test_malformed_file(self, tmp_path):
        path = write(tmp_path, "schema_version: [1\n")
        assert run(path, tmp_path / "out") == 2

    def test_input_error_exit(self, tmp_path):
        path = write(tmp_path, scenario(tasks=["datko", "compatibility"]))
        assert run(path, tmp_path / "out") == 2

    def test_success(self, tmp_path):
        path = write(tmp_path, scenario())
        assert run(path, tmp_path / "out") == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["passed"] and report["exit_code"] == 0
        assert [t["task"] for t in report["tasks"]] == ["compatibility", "envelope"]

    def test_certification_failure(self, tmp_path):
        path = write(tmp_path, scenario("Ex3_2", ["datko"], datko={"p": 2, "gamma": 0.5, "beta": 1}))
        assert run(path, tmp_path / "out") == 1

    def test_divergent_tail(self, tmp_path):
        path = write(tmp_path, scenario("Ex2_8", ["datko"], datko={"p": 2, "gamma": 2.0, "beta": 0}))
        assert run(path, tmp_path / "out") == 3
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["tasks"][-1]["error"] == "DivergentTail"

    def test_reproducible(self, tmp_path):
        path = write(tmp_path, scenario("Ex2_6", ["compatibility", "envelope", "asymptotics"],
                                        asymptotics={"x0": [1, 1], "horizon": 5}))
        run(path, tmp_path / "a")
        run(path, tmp_path / "b")
        assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()

    def test_csv_header(self, tmp_path):
        path = write(tmp_path, scenario())
        run(path, tmp_path / "out")
        files = list((tmp_path / "out").glob("*.csv"))
        assert files
        for f in files:
            with open(f, newline="") as fh:
                assert tuple(next(csv.reader(fh))) == CSV_HEADER

    def test_bad_tolerance_scale(self, tmp_path):
        path = write(tmp_path, scenario())
        assert main(["run", str(path), "--out", str(tmp_path / "o"), "--tolerance-scale", "0"]) == 2

    def test_validate_only(self, tmp_path, capsys):
        path = write(tmp_path, scenario())
        assert main(["run", str(path), "--validate-only"]) == 0
        assert "ok" in capsys.readouterr().out
