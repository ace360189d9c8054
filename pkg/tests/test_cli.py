import json

import pytest

from toolshed.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    EXIT_REGISTRY,
    _build_policy,
    _load_config,
    _parse_listen,
    harness_main,
    toolshed_main,
)
from toolshed.engine import RemoteChatPolicy, ScriptedPolicy
from toolshed.errors import BadArgs
from toolshed.fixtures import save_dataset
from toolshed.tools import DEFAULT_TOOL_CONFIG

ANSWER_YES = "<think>looks right</think><answer>yes</answer>"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("TOOLSHED_CONFIG", raising=False)


@pytest.fixture(scope="module")
def script(tmp_path_factory):
    path = tmp_path_factory.mktemp("policy") / "answer.jsonl"
    path.write_text(json.dumps(ANSWER_YES) + "\n")
    return path


def run_argv(desk_dir, script, out, *extra):
    return ["run", "--dataset", str(desk_dir), "--policy", str(script),
            "--rollouts", "2", "--max-turns", "3", "--out", str(out), *extra]


class TestHarnessRun:
    def test_full_run_emits_report(self, desk_dir, script, tmp_path, capsys):
        out = tmp_path / "traces.jsonl"
        code = harness_main(run_argv(desk_dir, script, out, "--parallel", "4"))
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["samples"] == 12
        assert report["rollouts"] == 24
        assert 0.0 <= report["mean_reward"] <= 1.3
        assert set(report["per_task"]) == {"choice", "point", "boxes", "pose", "grasp"}
        assert len(out.read_text().splitlines()) == 24

    def test_balance_drops_majority_excess(self, desk_dir, script, tmp_path, capsys):
        out = tmp_path / "traces.jsonl"
        code = harness_main(run_argv(desk_dir, script, out, "--balance"))
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        # 6 choice samples (4 yes / 2 no) shrink to 4; the other 6 stay
        assert report["samples"] == 10
        assert report["rollouts"] == 20

    def test_missing_dataset(self, script, tmp_path, capsys):
        out = tmp_path / "t.jsonl"
        code = harness_main(run_argv(tmp_path / "nowhere", script, out))
        assert code == EXIT_DATA
        assert "manifest" in capsys.readouterr().err

    def test_empty_dataset(self, script, tmp_path, capsys):
        empty = tmp_path / "empty"
        save_dataset([], empty)
        code = harness_main(run_argv(empty, script, tmp_path / "t.jsonl"))
        assert code == EXIT_DATA
        assert "dataset is empty" in capsys.readouterr().err

    def test_unbalanceable_dataset(self, desk_fixtures, script, tmp_path, capsys):
        yes_only = [f for f in desk_fixtures if f.qa.answer == "yes"]
        ds = tmp_path / "yes"
        save_dataset(yes_only, ds)
        code = harness_main(run_argv(ds, script, tmp_path / "t.jsonl", "--balance"))
        assert code == EXIT_DATA
        assert "cannot balance" in capsys.readouterr().err

    def test_missing_policy_script(self, desk_dir, tmp_path, capsys):
        code = harness_main(run_argv(desk_dir, tmp_path / "ghost.jsonl", tmp_path / "t.jsonl"))
        assert code == EXIT_CONFIG
        assert "policy script not found" in capsys.readouterr().err

    def test_registry_unreachable(self, desk_dir, script, tmp_path, capsys):
        code = harness_main(run_argv(desk_dir, script, tmp_path / "t.jsonl",
                                     "--registry", "http://127.0.0.1:9"))
        assert code == EXIT_REGISTRY
        assert "registry unreachable" in capsys.readouterr().err

    def test_bad_config_path(self, desk_dir, script, tmp_path, capsys):
        code = harness_main(run_argv(desk_dir, script, tmp_path / "t.jsonl",
                                     "--config", str(tmp_path / "none.yaml")))
        assert code == EXIT_CONFIG
        assert "config file not found" in capsys.readouterr().err

    def test_config_must_be_mapping(self, desk_dir, script, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("- not\n- a\n- mapping\n")
        code = harness_main(run_argv(desk_dir, script, tmp_path / "t.jsonl",
                                     "--config", str(cfg)))
        assert code == EXIT_CONFIG
        assert "mapping" in capsys.readouterr().err

    def test_env_var_beats_flag(self, desk_dir, script, tmp_path, capsys, monkeypatch):
        good = tmp_path / "good.yaml"
        good.write_text("point1:\n  num_actors: 1\n")
        monkeypatch.setenv("TOOLSHED_CONFIG", str(tmp_path / "missing.yaml"))
        code = harness_main(run_argv(desk_dir, script, tmp_path / "t.jsonl",
                                     "--config", str(good)))
        assert code == EXIT_CONFIG
        assert "config file not found" in capsys.readouterr().err

    def test_config_naming_unknown_tool(self, desk_dir, script, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("warp_drive:\n  num_actors: 2\n")
        code = harness_main(run_argv(desk_dir, script, tmp_path / "t.jsonl",
                                     "--config", str(cfg)))
        assert code == EXIT_CONFIG
        assert "unknown tool" in capsys.readouterr().err


class TestHarnessScore:
    def test_round_trip_matches_run_report(self, desk_dir, script, tmp_path, capsys):
        out = tmp_path / "traces.jsonl"
        assert harness_main(run_argv(desk_dir, script, out)) == EXIT_OK
        run_report = json.loads(capsys.readouterr().out)
        code = harness_main(["score", "--traces", str(out), "--dataset", str(desk_dir)])
        assert code == EXIT_OK
        score_report = json.loads(capsys.readouterr().out)
        assert score_report["mean_reward"] == run_report["mean_reward"]
        assert score_report["rollouts"] == run_report["rollouts"]
        assert score_report["per_task"] == run_report["per_task"]

    def test_missing_trace_file(self, desk_dir, tmp_path, capsys):
        code = harness_main(["score", "--traces", str(tmp_path / "none.jsonl"),
                             "--dataset", str(desk_dir)])
        assert code == EXIT_DATA
        assert "trace file not found" in capsys.readouterr().err

    def test_tampered_trace_rejected(self, desk_dir, script, tmp_path, capsys):
        out = tmp_path / "traces.jsonl"
        assert harness_main(run_argv(desk_dir, script, out)) == EXIT_OK
        capsys.readouterr()
        lines = out.read_text().splitlines()
        doc = json.loads(lines[0])
        doc["reward"] = 0.42
        lines[0] = json.dumps(doc, sort_keys=True)
        out.write_text("\n".join(lines) + "\n")
        code = harness_main(["score", "--traces", str(out), "--dataset", str(desk_dir)])
        assert code == EXIT_DATA
        assert "score error" in capsys.readouterr().err


class TestArgPlumbing:
    def test_subcommand_required(self):
        with pytest.raises(SystemExit) as exc:
            harness_main([])
        assert exc.value.code == 2

    def test_serve_rejects_bad_listen(self, capsys):
        code = toolshed_main(["serve", "--listen", "localhost:http"])
        assert code == EXIT_CONFIG
        assert "host:port" in capsys.readouterr().err

    def test_serve_rejects_bad_config(self, tmp_path, capsys):
        code = toolshed_main(["serve", "--config", str(tmp_path / "none.yaml")])
        assert code == EXIT_CONFIG

    def test_parse_listen(self):
        assert _parse_listen("0.0.0.0:8123") == ("0.0.0.0", 8123)
        assert _parse_listen(":9000") == ("127.0.0.1", 9000)
        with pytest.raises(BadArgs, match="host:port"):
            _parse_listen("just-a-host")

    def test_build_policy_kinds(self, script, tmp_path):
        assert isinstance(_build_policy(str(script)), ScriptedPolicy)
        assert isinstance(_build_policy("http://example.invalid/chat"), RemoteChatPolicy)
        with pytest.raises(BadArgs, match="not found"):
            _build_policy(str(tmp_path / "gone.jsonl"))

    def test_load_config_defaults_and_merge(self, tmp_path, monkeypatch):
        assert _load_config(None) == dict(DEFAULT_TOOL_CONFIG)
        partial = tmp_path / "partial.yaml"
        partial.write_text("point1:\n  num_actors: 7\n")
        merged = _load_config(str(partial))
        assert merged["point1"] == {"num_actors": 7}
        assert merged["sam2"] == DEFAULT_TOOL_CONFIG["sam2"]
        monkeypatch.setenv("TOOLSHED_CONFIG", str(partial))
        assert _load_config(None)["point1"] == {"num_actors": 7}

    def test_load_config_invalid_yaml(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("point1: [unclosed\n")
        with pytest.raises(BadArgs, match="not valid YAML"):
            _load_config(str(bad))
