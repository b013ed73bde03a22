"""Flat key = value config files: parsing, defaults, fail-fast on typos."""

import pytest

from text2table.config import ConfigError, RunConfig, load_config, parse_config


def test_empty_text_gives_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.model_dim == 64
    assert cfg.max_rows == 10


def test_values_comments_and_blank_lines():
    cfg = parse_config(
        """
        # architecture
        model_dim = 32
        heads = 2          # inline comment
        lr = 5e-4
        max_steps = 123
        """
    )
    assert cfg.model_dim == 32
    assert cfg.heads == 2
    assert cfg.lr == pytest.approx(5e-4)
    assert cfg.max_steps == 123


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match="unknown key 'model_dims'"):
        parse_config("model_dims = 32")


def test_duplicate_key_is_an_error():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("lr = 1e-3\nlr = 1e-4")


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("lr = 1e-3\nmax_steps = twenty")


def test_missing_equals_is_an_error():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("just some words")


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model_dim = 48\nheads = 4\n", encoding="utf-8")
    assert load_config(path).model_dim == 48


def test_load_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.cfg")


def test_model_and_train_config_construction():
    cfg = parse_config("model_dim = 32\nheads = 2\nlambda_weight = 0.7\n")
    mcfg = cfg.model_config(vocab_size=300)
    assert mcfg.model_dim == 32
    assert mcfg.vocab_size == 300
    tcfg = cfg.train_config(seed=9)
    assert tcfg.lambda_ == pytest.approx(0.7)
    assert tcfg.seed == 9


def test_bundled_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("smoke.cfg", "full.cfg"):
        cfg = load_config(root / name)
        assert cfg.max_rows >= 2
        cfg.model_config(vocab_size=400)  # dimensions are coherent
