from __future__ import annotations

import json

import filelock
import pytest
import yaml

from acgen.cli import main
from acgen.errors import CacheMiss, ConfigError, MissingArtifact, RunLocked
from acgen.pipeline import Pipeline, PipelineConfig, load_config


def config(tmp_path, **overrides):
    return load_config(overrides={"cache_dir": tmp_path / "cache", "run_dir": tmp_path / "runs", **overrides})


class TestConfig:
    def test_defaults(self, tmp_path):
        cfg = config(tmp_path)
        assert cfg.retrieval.k == 5 and cfg.polish.threshold == 5 and cfg.polish.max_rounds == 1
        assert cfg.template.value == "Apeer" and cfg.ablation.value == "Full"

    def test_yaml_and_overrides(self, tmp_path):
        path = tmp_path / "cfg" / "run.yaml"
        path.parent.mkdir()
        path.write_text(yaml.safe_dump({
            "paths": {"cache_dir": "c", "run_dir": "r"},
            "retrieval": {"k": 3, "visual_variant": "HtmlPruned"},
            "generation": {"template": "Urial"},
            "polish": {"threshold": 4},
        }))
        cfg = load_config(path, {"k": 2, "threshold": None})
        assert cfg.retrieval.k == 2 and cfg.polish.threshold == 4
        assert cfg.retrieval.visual_variant.value == "HtmlPruned" and cfg.template.value == "Urial"
        assert cfg.cache_dir == path.parent / "c"

    @pytest.mark.parametrize("overrides", [{"k": 0}, {"threshold": 9}, {"cache_mode": "replay-ish"},
                                           {"max_prompt_chars": 0}, {"text_strategy": "bm25"}])
    def test_invalid(self, tmp_path, overrides):
        with pytest.raises(ConfigError):
            config(tmp_path, **overrides)

    def test_unknown_role(self):
        with pytest.raises(ConfigError):
            PipelineConfig(roles={"embedder": "nobody"})

    def test_missing_api_key(self, tmp_path, monkeypatch):
        monkeypatch.delenv("ACGEN_TEST_KEY", raising=False)
        path = tmp_path / "http.yaml"
        names = ["e", "g", "j1", "j2", "j3"]
        path.write_text(yaml.safe_dump({
            "providers": [{"name": "e", "backend": "http", "endpoint": "http://localhost:1",
                           "api_key_env": "ACGEN_TEST_KEY"}] + [{"name": n} for n in names[1:]],
            "roles": {"embedder": "e", "generator": "g", "reward_judge": "g", "scorer": "g",
                      "judges": ["j1", "j2", "j3"]},
        }))
        with pytest.raises(ConfigError) as info:
            Pipeline(load_config(path, {"run_dir": tmp_path}))
        assert info.value.details["variable"] == "ACGEN_TEST_KEY"

    def test_run_id_ignores_paths(self, tmp_path):
        a = Pipeline(config(tmp_path / "a")).run_id
        b = Pipeline(config(tmp_path / "b", cache_mode="strict")).run_id
        c = Pipeline(config(tmp_path / "a", k=3)).run_id
        assert a == b != c and len(a) == 16


class TestStages:
    def test_missing_artifact(self, tmp_path):
        pipe = Pipeline(config(tmp_path))
        with pytest.raises(MissingArtifact) as info:
            pipe.cmd_eval_acs()
        assert info.value.details["stage"] == "generate"
        with pytest.raises(MissingArtifact):
            pipe.cmd_generate()

    def test_locked(self, tmp_path):
        pipe = Pipeline(config(tmp_path))
        pipe.run_path.mkdir(parents=True)
        with filelock.FileLock(str(pipe.run_path / ".lock")):
            with pytest.raises(RunLocked):
                pipe.cmd_index()

    def test_full_run_and_report_repeat(self, tmp_path, toy):
        pipe = Pipeline(config(tmp_path))
        report = pipe.cmd_run()
        assert set(report["acs"]) >= {"text_metrics", "generated", "polished", "compare"}
        first = (pipe.run_path / "report.json").read_bytes()
        pipe.cmd_report()
        assert (pipe.run_path / "report.json").read_bytes() == first
        manifest = json.loads(pipe.manifest_path.read_text())
        assert set(manifest["timing"]) == {"index", "generate", "polish", "eval-retrieval", "eval-acs"}
        assert set(manifest["transcripts"]) == {"generation", "polish"}
        for story in toy.stories:
            saved = json.loads((pipe.run_path / "generation" / f"{story.id}.json").read_text())
            assert len(saved["prompt"]["text_ids"]) == 5
        acc = report["acs"]["generated"]["accuracy"]
        assert 0.0 <= acc["cor_point"] <= acc["hit_point"] <= 1.0

    def test_no_rag_needs_no_index(self, tmp_path):
        pipe = Pipeline(config(tmp_path, ablation="NoRag"))
        outputs = pipe.cmd_generate()
        assert outputs and all(o.acs for o in outputs)
        assert not (pipe.run_path / "indices").exists()

    def test_strict_mode_without_recording(self, tmp_path):
        pipe = Pipeline(config(tmp_path, cache_mode="strict"))
        with pytest.raises(CacheMiss):
            pipe.cmd_index()


class TestCli:
    def args(self, tmp_path, *extra):
        return ["--cache-dir", str(tmp_path / "cache"), "--run-dir", str(tmp_path / "runs"), *extra]

    def test_run_prints_report(self, tmp_path, capsys):
        assert main(["run", *self.args(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("run ") and "retrieval" in out

    def test_stage_by_stage(self, tmp_path, capsys):
        for cmd in ("index", "generate", "polish", "eval-retrieval", "eval-acs"):
            assert main([cmd, *self.args(tmp_path)]) == 0
            assert f"{cmd}: ok" in capsys.readouterr().out
        assert main(["report", *self.args(tmp_path)]) == 0

    def test_error_is_json_on_stderr(self, tmp_path, capsys):
        assert main(["eval-acs", *self.args(tmp_path)]) == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "MissingArtifact" and err["details"]["stage"] == "generate"

    def test_run_id(self, tmp_path, capsys):
        assert main(["run-id", *self.args(tmp_path), "-k", "3"]) == 0
        assert len(capsys.readouterr().out.strip()) == 16

    def test_bad_flag_value(self, tmp_path, capsys):
        assert main(["index", *self.args(tmp_path), "-k", "0"]) == 1
        assert json.loads(capsys.readouterr().err.strip())["error"] == "ConfigError"
