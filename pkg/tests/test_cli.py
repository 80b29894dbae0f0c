"""Command line tests: argument parsing, generate output, error exits."""

import json

import pytest

from qplan.cli import build_parser, main
from qplan.workload import workload_from_dict


class TestParser:
    def test_run_defaults(self):
        args = build_parser().parse_args(["run", "--out-dir", "x"])
        assert args.seed == 42
        assert args.constraints == "default"
        assert args.backend == "sim"
        assert args.cv is False
        assert args.ablation is None

    def test_run_rejects_unknown_choices(self):
        parser = build_parser()
        for bad in (["run", "--out-dir", "x", "--backend", "duckdb"],
                    ["run", "--out-dir", "x", "--constraints", "none"],
                    ["run", "--out-dir", "x", "--ablation", "oracle"],
                    ["generate", "--shape", "warehouse"]):
            with pytest.raises(SystemExit):
                parser.parse_args(bad)

    def test_run_requires_out_dir(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run"])

    def test_ablation_flag_repeats(self):
        args = build_parser().parse_args(
            ["run", "--out-dir", "x", "--ablation", "baseline",
             "--ablation", "bandit"])
        assert args.ablation == ["baseline", "bandit"]


class TestGenerate:
    def test_stdout_json_round_trips(self, capsys):
        assert main(["generate", "--queries", "6", "--seed", "4"]) == 0
        blob = json.loads(capsys.readouterr().out)
        wl = workload_from_dict(blob)
        assert len(wl.queries) == 6

    def test_writes_file(self, tmp_path):
        out = tmp_path / "wl.json"
        assert main(["generate", "--queries", "5", "--shape", "events",
                     "--out", str(out)]) == 0
        with open(out) as fh:
            blob = json.load(fh)
        assert blob["shape"] == "events"
        assert len(blob["queries"]) == 5

    def test_mix_controls_templates(self, capsys):
        assert main(["generate", "--queries", "8", "--mix", "join2=1",
                     "--mix", "join3=1"]) == 0
        blob = json.loads(capsys.readouterr().out)
        counts = {}
        for q in blob["queries"]:
            counts[q["template"]] = counts.get(q["template"], 0) + 1
        assert counts == {"join2": 4, "join3": 4}

    def test_bad_mix_exits_nonzero(self, capsys):
        assert main(["generate", "--mix", "join2"]) == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_mix_tag_exits_nonzero(self, capsys):
        assert main(["generate", "--mix", "join9=1"]) == 2
        assert "error" in capsys.readouterr().err


class TestReport:
    def test_missing_run_dir_exits_nonzero(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "nope")]) == 2
        assert "error" in capsys.readouterr().err
