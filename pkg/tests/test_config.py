import json

import pytest

from lens_forge.config import SEED_OFFSETS, ConfigError, interpolate_env, load_config, parse_config
from lens_forge.fixture import fixture_config

BASE = {"seed": 3, "paths": {"data_dir": "data"}}


def test_minimal_defaults(tmp_path):
    cfg = parse_config(BASE, tmp_path)
    assert cfg.data_dir == tmp_path / "data" and cfg.out_dir == tmp_path / "out"
    assert cfg.split_ratios == (0.70, 0.15, 0.15)
    assert cfg.qc["total_threshold"] == 20 and cfg.qc["max_rounds"] == 3
    assert cfg.encoder.hidden == 5120 and cfg.encoder.d == 5120 and cfg.encoder.k == 8
    assert len(cfg.judges) == 3
    assert cfg.rewrite_params.temperature == 0.7 and cfg.judge_params.temperature == 0
    assert cfg.seeds == {k: 3 + off for k, off in SEED_OFFSETS.items()}


def test_seed_required():
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"paths": {"data_dir": "d"}})
    with pytest.raises(ConfigError):
        parse_config({"seed": "x", "paths": {"data_dir": "d"}})
    assert parse_config({"paths": {"data_dir": "d"}}, seed=5).seed == 5


def test_explicit_stage_seed_wins():
    cfg = parse_config({**BASE, "splits": {"seed": 99}})
    assert cfg.seeds["splits"] == 99 and cfg.seeds["qa"] == 3 + SEED_OFFSETS["qa"]


def test_seed_override_changes_hash():
    assert parse_config(BASE).config_hash() != parse_config(BASE, seed=4).config_hash()
    assert parse_config(BASE).config_hash() == parse_config(json.loads(json.dumps(BASE))).config_hash()


@pytest.mark.parametrize("patch", [
    {"paths": {}},
    {"splits": {"ratios": [0.5, 0.5]}},
    {"splits": {"ratios": [0.7, 0.2, 0.2]}},
    {"qc": {"max_rounds": 0}},
    {"mix": {"weights": {"a": 0}}},
    {"mix": {"weights": {"item": 0.8, "general": 0.2}}},
    {"encoder": {"k": 0}},
    {"synthesis": {"items_per_ema": 14}},
    {"backends": {"judges": []}},
    {"backends": {"rewriter": {"type": "carrier-pigeon"}}},
    {"backends": {"rewriter": {"type": "openai", "model_name": "m"}}},
    {"outlier_bounds": {"heart_rate": [300, 10]}},
])
def test_invalid(patch):
    with pytest.raises(ConfigError):
        parse_config({**BASE, **patch})


def test_env_interpolation():
    env = {"HOST": "localhost:8000"}
    assert interpolate_env({"a": ["http://${HOST}/x"]}, env) == {"a": ["http://localhost:8000/x"]}
    with pytest.raises(ConfigError, match="MISSING"):
        interpolate_env("${MISSING}", {})


def test_openai_backend(monkeypatch):
    monkeypatch.setenv("LF_URL", "http://127.0.0.1:9000")
    cfg = parse_config({**BASE, "backends": {"rewriter": {
        "type": "openai", "base_url": "${LF_URL}", "model_name": "qwen", "api_key_env": "LF_KEY",
        "parallelism_limit": 2}}})
    assert cfg.rewriter.config.base_url == "http://127.0.0.1:9000"
    assert cfg.rewriter.config.parallelism_limit == 2
    # the raw config keeps the placeholder, never the resolved value
    assert cfg.raw["backends"]["rewriter"]["base_url"] == "${LF_URL}"


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_fixture_config_parses(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(fixture_config("data", "out")))
    cfg = load_config(p, out_dir=tmp_path / "elsewhere")
    assert cfg.out_dir == tmp_path / "elsewhere"
    assert cfg.encoder.layer_dims == [136, 64, 64, 64, 64, 32]
