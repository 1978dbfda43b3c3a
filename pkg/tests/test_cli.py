import json

import pytest
from click.testing import CliRunner

from conftest import scenario_path
from fleetloop.cli import EXIT_OK, EXIT_REPLAY_DIVERGENCE, EXIT_SCENARIO_FAILURE, main


@pytest.fixture
def runner():
    return CliRunner()


class TestSim:
    def test_scenario_runs_green(self, runner, tmp_path):
        log = str(tmp_path / "run.jsonl")
        result = runner.invoke(main, [
            "sim", "--scenario", scenario_path("delivery_room_207"),
            "--seed", "42", "--log", log,
        ])
        assert result.exit_code == EXIT_OK, result.output
        assert "done" in result.output

    def test_porcelain_output(self, runner, tmp_path):
        log = str(tmp_path / "run.jsonl")
        result = runner.invoke(main, [
            "sim", "--scenario", scenario_path("visitor_reception"),
            "--seed", "42", "--log", log, "--porcelain",
        ])
        doc = json.loads(result.output)
        assert doc["ok"] is True
        assert doc["tasks"][0]["state"] == "done"

    def test_failed_scenario_exits_2(self, runner, tmp_path):
        # an empty-script scenario has no tasks at all, which is a failure
        doc = {
            "schema_version": 1,
            "name": "hollow",
            "world": {"objects": [], "persons": []},
            "fleet": [],
            "anchors": [],
            "faults": [],
            "script": [],
        }
        path = tmp_path / "hollow.json"
        path.write_text(json.dumps(doc))
        result = runner.invoke(main, [
            "sim", "--scenario", str(path), "--max-ticks", "5",
            "--log", str(tmp_path / "hollow.jsonl"),
        ])
        assert result.exit_code == EXIT_SCENARIO_FAILURE


class TestReplay:
    def test_replay_ok(self, runner, tmp_path):
        log = str(tmp_path / "run.jsonl")
        runner.invoke(main, [
            "sim", "--scenario", scenario_path("pick_something_sour"),
            "--seed", "42", "--log", log,
        ])
        result = runner.invoke(main, ["replay", log, "--porcelain"])
        assert result.exit_code == EXIT_OK, result.output
        assert json.loads(result.output)["hash_equal"] is True

    def test_replay_divergence_exits_3(self, runner, tmp_path):
        log = str(tmp_path / "run.jsonl")
        runner.invoke(main, [
            "sim", "--scenario", scenario_path("pick_something_sour"),
            "--seed", "42", "--log", log,
        ])
        lines = open(log).read().splitlines()
        for i, line in enumerate(lines[1:], start=1):
            doc = json.loads(line)
            if doc["kind"] == "critic_scored":
                doc["payload"]["score"] = 0.424242
                lines[i] = json.dumps(doc, sort_keys=True, separators=(",", ":"))
                break
        open(log, "w").write("\n".join(lines) + "\n")
        result = runner.invoke(main, ["replay", log])
        assert result.exit_code == EXIT_REPLAY_DIVERGENCE
        assert "DIVERGED" in result.output
