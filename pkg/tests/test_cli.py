from __future__ import annotations

import json

import pytest

from evogeo.cli import EXIT_BACKEND, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from evogeo.config import ConfigError, RunConfig, dump_config, load_config, parse_config
from evogeo.coevolution import save_cases
from evogeo.data import synthetic_cases


class TestConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("")
        config = load_config(path)
        assert config.iterations == 100
        assert config.k_top == 4
        assert config.k_rand == 4
        assert config.alpha_sib == 0.8
        assert config.beta == 1.0
        assert config.reg_weight == 0.2
        assert config.pnd_weight == 0.3
        assert config.cell_capacity == 3
        assert config.archive_capacity == 35

    def test_zero_cell_capacity_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("cell_capacity = 0")

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="foo"):
            parse_config("foo = 1")

    def test_bad_value_named(self):
        with pytest.raises(ConfigError, match="iterations"):
            parse_config("iterations = many")

    def test_comments_and_whitespace(self):
        config = parse_config("# comment\n\n  iterations = 7 \n")
        assert config.iterations == 7

    def test_dump_round_trip(self):
        config = RunConfig(iterations=13, seed=42, alpha_sib=0.5)
        assert parse_config(dump_config(config)) == config

    def test_remote_requires_base_url(self):
        with pytest.raises(ConfigError):
            parse_config("backend = remote")


class TestEvalCommand:
    def test_scores_answer_file(self, tmp_path, capsys):
        answer = tmp_path / "ans.txt"
        answer.write_text("Cats purr.[1] Dogs bark.[2][2]")
        code = main(["eval", "--answer", str(answer), "--target", "2", "--n", "5"])
        assert code == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("word ")
        assert out[1].startswith("pos ")
        assert out[2].startswith("overall ")
        assert float(out[0].split()[1]) == 2.0

    def test_sensitivity_from_scores(self, tmp_path, capsys):
        scores = tmp_path / "scores.json"
        scores.write_text(json.dumps([10.0] + [0.0] * 8))
        code = main(["eval", "--scores", str(scores)])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "max_gain 10.0" in out
        assert "sensitivity 0.888" in out

    def test_missing_args_is_usage_error(self):
        assert main(["eval"]) == EXIT_USAGE

    def test_unknown_command_is_usage_error(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_unknown_flag_is_usage_error(self, tmp_path):
        assert main(["eval", "--bogus", "x"]) == EXIT_USAGE


class TestSimulateCommand:
    def test_demo_cases(self, capsys):
        code = main(["simulate", "--demo-cases", "2", "--seed", "3"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "# query q0" in out
        assert "overall=" in out

    def test_cases_file_with_index(self, tmp_path, capsys):
        path = tmp_path / "cases.jsonl"
        save_cases(synthetic_cases(3, seed=1), path)
        code = main(["simulate", "--cases", str(path), "--index", "1"])
        assert code == EXIT_OK
        assert "# query q1" in capsys.readouterr().out


class TestTrainCriticCommand:
    def test_train_from_demo_cases(self, tmp_path, capsys):
        out_dir = tmp_path / "model"
        code = main(
            [
                "train-critic",
                "--demo-cases",
                "3",
                "--seed",
                "5",
                "--out",
                str(out_dir),
                "--config",
                str(_small_cfg(tmp_path)),
            ]
        )
        assert code == EXIT_OK
        assert (out_dir / "critic.npy").exists()
        assert (out_dir / "critic.meta.json").exists()
        assert (out_dir / "train_report.jsonl").exists()
        assert "trained on" in capsys.readouterr().out

    def test_requires_out(self):
        assert main(["train-critic", "--demo-cases", "2"]) == EXIT_USAGE

    def test_labels_file_round_trip(self, tmp_path, capsys):
        from evogeo.coevolution import strategy_to_json
        from evogeo.genotype import seed_strategies

        labels = tmp_path / "labels.jsonl"
        lines = []
        for i, s in enumerate(seed_strategies()):
            lines.append(
                json.dumps(
                    {
                        "query": {"id": "q0", "text": "a question"},
                        "doc": {"id": "d0", "text": "a document", "rank_index": 0},
                        "strategy": strategy_to_json(s),
                        "gain": float(i),
                    }
                )
            )
        labels.write_text("\n".join(lines))
        out_dir = tmp_path / "model"
        code = main(
            [
                "train-critic",
                "--labels",
                str(labels),
                "--out",
                str(out_dir),
                "--config",
                str(_small_cfg(tmp_path)),
            ]
        )
        assert code == EXIT_OK
        code = main(
            ["ndcg", "--labels", str(labels), "--critic", str(out_dir), "--k", "1,3"]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "ndcg@1" in out and "ndcg@3" in out


def _small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text("feature_dim = 512\nhidden_dim = 16\ncritic_epochs = 4\n")
    return path


class TestEvolveAndOptimize:
    def test_evolve_twice_byte_identical(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "iterations = 4\nfeature_dim = 512\nhidden_dim = 16\n"
        )
        cases = tmp_path / "cases.jsonl"
        save_cases(synthetic_cases(3, seed=2), cases)
        for name in ("a", "b"):
            code = main(
                [
                    "evolve",
                    "--config",
                    str(cfg),
                    "--seed",
                    "42",
                    "--cases",
                    str(cases),
                    "--out",
                    str(tmp_path / name),
                ]
            )
            assert code == EXIT_OK
        assert (tmp_path / "a" / "archive.jsonl").read_bytes() == (
            tmp_path / "b" / "archive.jsonl"
        ).read_bytes()

    def test_optimize_prints_doc_and_trace(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("iterations = 3\nfeature_dim = 512\nhidden_dim = 16\n")
        cases = tmp_path / "cases.jsonl"
        save_cases(synthetic_cases(3, seed=2), cases)
        run_dir = tmp_path / "run"
        assert (
            main(
                [
                    "evolve",
                    "--config",
                    str(cfg),
                    "--seed",
                    "7",
                    "--cases",
                    str(cases),
                    "--out",
                    str(run_dir),
                ]
            )
            == EXIT_OK
        )
        capsys.readouterr()
        qfile = tmp_path / "q.txt"
        qfile.write_text("what to know about solar panel efficiency")
        dfile = tmp_path / "d.txt"
        dfile.write_text("solar panels convert light into energy " * 5)
        out_dir = tmp_path / "opt"
        code = main(
            [
                "optimize",
                "--query",
                str(qfile),
                "--doc",
                str(dfile),
                "--archive",
                str(run_dir / "archive.jsonl"),
                "--seed",
                "7",
                "--out",
                str(out_dir),
            ]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "stop reason" in out
        trace = json.loads((out_dir / "trace.json").read_text())
        assert "steps" in trace
        assert (out_dir / "optimized.txt").read_text().strip()

    def test_missing_archive_is_validation_error(self, tmp_path):
        qfile = tmp_path / "q.txt"
        qfile.write_text("query")
        dfile = tmp_path / "d.txt"
        dfile.write_text("doc")
        code = main(
            [
                "optimize",
                "--query",
                str(qfile),
                "--doc",
                str(dfile),
                "--archive",
                str(tmp_path / "nope.jsonl"),
            ]
        )
        assert code == EXIT_VALIDATION

    def test_backend_failure_exit_code(self, tmp_path):
        cfg = tmp_path / "remote.cfg"
        cfg.write_text(
            "backend = remote\nremote_base_url = http://127.0.0.1:1\n"
            "remote_model = m\nremote_max_retries = 0\n"
        )
        code = main(
            ["simulate", "--demo-cases", "1", "--config", str(cfg)]
        )
        assert code == EXIT_BACKEND

    def test_bad_config_is_validation_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("cell_capacity = 0\n")
        assert main(["simulate", "--demo-cases", "1", "--config", str(cfg)]) == EXIT_VALIDATION
