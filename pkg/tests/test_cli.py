import math

import pytest

from preflab.harness.cli import _parse_grid, build_parser, main
from preflab.harness.config import config_from_yaml


def test_print_config_is_loadable(capsys):
    assert main(["run", "--print-config"]) == 0
    text = capsys.readouterr().out
    cfg = config_from_yaml(text)
    cfg.validate()


def test_parse_grid_handles_inf():
    assert _parse_grid("0.5,1,inf") == [0.5, 1.0, math.inf]


def test_run_subcommand_end_to_end(tmp_path, capsys, monkeypatch):
    cfg_text = """
segment_length: 8
schedule:
  total_budget: 2
  queries_per_session: 2
  feedback_frequency: 100
  total_steps: 400
  warmup_steps: 200
  eval_pairs: 6
  eval_episodes: 2
reward:
  layers: 1
  hidden: 8
  ensemble: 2
ssl:
  train_steps: 10
  batch_size: 8
  unlabeled_ratio: 2
"""
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(cfg_text)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    captured = capsys.readouterr().out
    assert "run complete" in captured
    assert (out / "metrics.txt").exists()


def test_export_plots_round_trip(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text("""
segment_length: 8
schedule: {total_budget: 2, queries_per_session: 2, feedback_frequency: 100,
           total_steps: 300, warmup_steps: 200, eval_pairs: 6, eval_episodes: 2}
reward: {layers: 1, hidden: 8, ensemble: 2}
ssl: {train_steps: 10, batch_size: 8, unlabeled_ratio: 2}
""")
    out = tmp_path / "out"
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    capsys.readouterr()
    csv_out = tmp_path / "curves.csv"
    assert main(["export-plots", "--metrics", str(out / "metrics.txt"),
                 "--out-csv", str(csv_out)]) == 0
    header = csv_out.read_text().splitlines()[0]
    assert header.startswith("session,env_steps,labeled_count")


def test_eval_subcommand(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text("""
segment_length: 8
schedule: {total_budget: 2, queries_per_session: 2, feedback_frequency: 100,
           total_steps: 300, warmup_steps: 200, eval_pairs: 6, eval_episodes: 2}
reward: {layers: 1, hidden: 8, ensemble: 2}
ssl: {train_steps: 10, batch_size: 8, unlabeled_ratio: 2}
""")
    out = tmp_path / "out"
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(out / "ensemble.ckpt"),
                 "--segment-length", "8", "--pairs", "10",
                 "--rollout-steps", "500"])
    assert code == 0
    assert "preference accuracy" in capsys.readouterr().out


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["destroy"])
