import dataclasses
import math

import numpy as np
import pytest

from preflab.errors import ConfigurationError, FormatError
from preflab.harness.config import (ExperimentConfig, config_from_yaml, config_to_yaml,
                                    default_config)
from preflab.harness.loop import build_eval_set, noise_sweep, run_experiment
from preflab.harness.metrics import (MetricsRecord, MetricsWriter, metrics_to_csv,
                                     read_metrics)


def tiny_config(**overrides) -> ExperimentConfig:
    """A seconds-scale experiment for loop tests."""
    cfg = default_config()
    cfg.segment_length = 8
    cfg.schedule.total_budget = 4
    cfg.schedule.queries_per_session = 2
    cfg.schedule.feedback_frequency = 150
    cfg.schedule.total_steps = 600
    cfg.schedule.warmup_steps = 300
    cfg.schedule.eval_pairs = 8
    cfg.schedule.eval_episodes = 2
    cfg.schedule.buffer_capacity = 5000
    cfg.reward.layers = 1
    cfg.reward.hidden = 8
    cfg.reward.ensemble = 2
    cfg.ssl.train_steps = 15
    cfg.ssl.batch_size = 8
    cfg.ssl.unlabeled_ratio = 3
    for key, value in overrides.items():
        head, _, tail = key.partition(".")
        if tail:
            setattr(getattr(cfg, head), tail, value)
        else:
            setattr(cfg, head, value)
    return cfg


class TestConfig:
    def test_defaults_valid(self):
        default_config().validate()

    def test_yaml_round_trip(self):
        cfg = default_config()
        cfg.ssl.method = "NS"
        cfg.annotator.epsilon = 0.15
        text = config_to_yaml(cfg)
        back = config_from_yaml(text)
        assert back == cfg

    def test_infinity_survives_yaml(self):
        cfg = default_config()
        back = config_from_yaml(config_to_yaml(cfg))
        assert math.isinf(back.annotator.beta)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            config_from_yaml("env:\n  planet: mars\n")

    def test_invalid_budget_rejected(self):
        cfg = tiny_config()
        cfg.schedule.total_budget = 1  # below queries_per_session
        with pytest.raises(ConfigurationError):
            cfg.validate()

    def test_bad_ssl_value_rejected(self):
        cfg = tiny_config()
        cfg.ssl.tau = 0.4
        with pytest.raises(ConfigurationError):
            cfg.validate()


class TestMetricsFile:
    def record(self, session=1):
        return MetricsRecord(session=session, env_steps=100 * session,
                             labeled_count=4, pseudo_count=12, accuracy=0.8,
                             reward_corr=0.5, mean_entropy=0.3, policy_return=0.7,
                             hazard_rate=0.0, success_rate=1.0, wall_clock=3.2)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "metrics.txt"
        writer = MetricsWriter(path)
        writer.append(self.record(1))
        writer.append(self.record(2))
        records = read_metrics(path)
        assert len(records) == 2
        assert records[0].accuracy == 0.8 and records[1].env_steps == 200

    def test_wall_clock_not_serialized(self, tmp_path):
        path = tmp_path / "metrics.txt"
        MetricsWriter(path).append(self.record())
        assert "3.2" not in path.read_text()

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("metrics v1\n1 2 3\n")
        with pytest.raises(FormatError):
            read_metrics(path)

    def test_csv_export(self):
        text = metrics_to_csv([self.record()])
        lines = text.splitlines()
        assert lines[0].startswith("session,env_steps")
        assert len(lines) == 2


class TestRunExperiment:
    def test_budget_accounting_and_pseudo_growth(self):
        result = run_experiment(tiny_config())
        assert len(result.d_l) == 4  # exactly the budget, M per session
        # STRAPPER generates ratio * stored labels per feedback session
        feedback_sessions = 2
        assert len(result.d_u) == 3 * 2 * feedback_sessions
        assert result.final.labeled_count == 4

    def test_metrics_monotone_env_steps(self):
        result = run_experiment(tiny_config())
        steps = [r.env_steps for r in result.records]
        assert steps == sorted(steps)
        assert result.final.env_steps == 600

    def test_deterministic_same_seed_byte_identical_metrics(self, tmp_path):
        cfg = tiny_config()
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir(), b.mkdir()
        run_experiment(cfg, out_dir=str(a))
        run_experiment(cfg, out_dir=str(b))
        assert (a / "metrics.txt").read_bytes() == (b / "metrics.txt").read_bytes()

    def test_zero_budget_run_completes(self):
        cfg = tiny_config()
        cfg.schedule.total_budget = 0
        result = run_experiment(cfg)
        assert len(result.d_l) == 0 and len(result.d_u) == 0
        assert result.final.env_steps == 600

    def test_artifacts_written(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        run_experiment(tiny_config(), out_dir=str(out))
        for name in ("metrics.txt", "ensemble.ckpt", "episodes.txt",
                     "labeled.prefdata", "pseudo.prefdata"):
            assert (out / name).exists(), name

    def test_saved_dataset_loads_against_episode_dump(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        run_experiment(tiny_config(), out_dir=str(out))
        from preflab.experience import load_dataset, load_episodes
        store = load_episodes(out / "episodes.txt")
        d_l = load_dataset(out / "labeled.prefdata", store)
        assert d_l.role == "labeled"
        assert all(t.label.kind in ("hard", "equal") for t in d_l)

    def test_invalid_config_fails_before_work(self):
        cfg = tiny_config()
        cfg.env.name = "atari"
        with pytest.raises(ConfigurationError):
            run_experiment(cfg)

    def test_noisy_annotator_mode_runs(self):
        cfg = tiny_config()
        cfg.annotator.mode = "noisy"
        cfg.annotator.beta = 2.0
        cfg.annotator.epsilon = 0.1
        result = run_experiment(cfg)
        assert len(result.d_l) == 4

    def test_supervised_method_writes_no_pseudo(self):
        cfg = tiny_config()
        cfg.ssl.method = "supervised"
        result = run_experiment(cfg)
        assert len(result.d_u) == 0


class TestEvalSet:
    def test_eval_pairs_have_distinct_returns(self, grid_env, rng):
        from conftest import fill_buffer_random
        buffer = fill_buffer_random(grid_env, 1000, seed=2)
        eval_set = build_eval_set(buffer, grid_env, 8, 20, rng)
        assert len(eval_set) == 20
        for t in eval_set:
            assert grid_env.gt.segment_return(t.first) != \
                grid_env.gt.segment_return(t.second)
            assert t.label.kind == "hard"


class TestNoiseSweep:
    def test_grid_of_one_matches_single_run(self):
        cfg = tiny_config()
        arms = noise_sweep(cfg, beta_grid=[math.inf], epsilon_grid=[0.0],
                           budget_grid=[4])
        assert len(arms) == 1
        noisy_cfg = dataclasses.replace(
            cfg, annotator=dataclasses.replace(cfg.annotator, mode="noisy"),
        )
        single = run_experiment(noisy_cfg)
        assert arms[0].final_return == single.final.policy_return
        assert arms[0].normalized_return == 1.0

    def test_clean_noisy_arm_equals_oracle_run(self):
        # beta=inf, eps=0 noisy labels coincide with the oracle's
        cfg = tiny_config()
        oracle = run_experiment(cfg)
        arms = noise_sweep(cfg, [math.inf], [0.0], [4])
        assert arms[0].final_return == oracle.final.policy_return
        assert arms[0].final_accuracy == oracle.final.accuracy

    def test_output_size_matches_grids(self):
        cfg = tiny_config(**{"schedule.total_steps": 450,
                             "schedule.feedback_frequency": 100})
        arms = noise_sweep(cfg, [math.inf, 1.0], [0.0, 0.3], [4])
        assert len(arms) == 4
        assert all(a.error is None for a in arms)

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigurationError):
            noise_sweep(tiny_config(), [], [0.0], [4])
