"""Run configuration: a single JSON file with ``${ENV}`` interpolation."""
from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .gateway import BackendConfig, GenParams

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")

# stage seeds not given explicitly are base seed + offset
MIX_SOURCES = ("item", "summary", "instruction_following", "alignment_random")
SEED_OFFSETS = {"synthesis": 1, "judge": 2, "splits": 3, "qa": 4, "mix": 5, "encoder": 6}


class ConfigError(ValueError):
    pass


def interpolate_env(value, environ=None):
    environ = os.environ if environ is None else environ
    if isinstance(value, str):
        def sub(m):
            name = m.group(1)
            if name not in environ:
                raise ConfigError(f"environment variable {name} is not set")
            return environ[name]
        return _ENV_RE.sub(sub, value)
    if isinstance(value, list):
        return [interpolate_env(v, environ) for v in value]
    if isinstance(value, dict):
        return {k: interpolate_env(v, environ) for k, v in value.items()}
    return value


@dataclass
class BackendSpec:
    type: str  # mock | openai
    seed: int = 0
    behavior: dict = field(default_factory=dict)
    config: BackendConfig | None = None

    @classmethod
    def from_dict(cls, d: dict, where: str) -> "BackendSpec":
        kind = d.get("type", "mock")
        if kind == "mock":
            return cls("mock", int(d.get("seed", 0)), dict(d.get("behavior", {})))
        if kind == "openai":
            try:
                bc = BackendConfig(
                    base_url=d["base_url"],
                    model_name=d["model_name"],
                    api_key_env=d.get("api_key_env"),
                    timeout_s=float(d.get("timeout_s", 120.0)),
                    max_retries=int(d.get("max_retries", 3)),
                    parallelism_limit=int(d.get("parallelism_limit", 4)),
                    backoff_base_s=float(d.get("backoff_base_s", 1.0)),
                )
            except KeyError as exc:
                raise ConfigError(f"{where}: missing {exc.args[0]!r}") from exc
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from exc
            return cls("openai", config=bc)
        raise ConfigError(f"{where}: unknown backend type {kind!r}")


@dataclass
class RunConfig:
    raw: dict
    seed: int
    data_dir: Path
    out_dir: Path
    templates_path: Path | None
    paraphrases_path: Path | None
    weights_path: Path | None
    items_per_ema: int
    qc: dict
    rewriter: BackendSpec
    judges: list[BackendSpec]
    evaluator: BackendSpec | None
    rewrite_params: GenParams
    judge_params: GenParams
    split_ratios: tuple[float, float, float]
    mix: dict
    mix_total_n: int | None
    mix_replace: bool
    encoder: EncoderConfig
    workers: int
    stream_bounds: dict
    audit_path: Path | None
    audit_redact: bool
    seeds: dict

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(f"{blob}|seed={self.seed}".encode("utf-8")).hexdigest()


def _params(d: dict | None, default: GenParams, where: str) -> GenParams:
    if not d:
        return default
    try:
        return GenParams(
            temperature=float(d.get("temperature", default.temperature)),
            top_p=float(d.get("top_p", default.top_p)),
            top_k=d.get("top_k", default.top_k),
            max_tokens=int(d.get("max_tokens", default.max_tokens)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _path(base: Path, value) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def parse_config(
    data: dict, base_dir: Path | str = ".", seed: int | None = None, out_dir: str | Path | None = None,
    environ=None,
) -> RunConfig:
    from .gateway import BASELINE_PARAMS, JUDGE_PARAMS

    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    raw = copy.deepcopy(data)
    d = interpolate_env(data, environ)
    base = Path(base_dir)
    if seed is None:
        if "seed" not in d:
            raise ConfigError("config must set an explicit integer 'seed'")
        seed = d["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")

    paths = d.get("paths", {})
    if "data_dir" not in paths:
        raise ConfigError("paths.data_dir is required")
    out = Path(out_dir) if out_dir is not None else _path(base, paths.get("out_dir", "out"))

    seeds = {}
    for stage, off in SEED_OFFSETS.items():
        section = d.get(stage, {}) if isinstance(d.get(stage, {}), dict) else {}
        seeds[stage] = int(section.get("seed", seed + off))

    synth = d.get("synthesis", {})
    items_per_ema = int(synth.get("items_per_ema", 2))
    if not 1 <= items_per_ema <= 13:
        raise ConfigError("synthesis.items_per_ema must be in [1, 13]")

    qc = d.get("qc", {})
    qc_opts = {
        "total_threshold": int(qc.get("total_threshold", 20)),
        "confidence_threshold": float(qc.get("confidence_threshold", 0.8)),
        "max_rounds": int(qc.get("max_rounds", 3)),
        "min_quorum": int(qc.get("min_quorum", 2)),
    }
    if qc_opts["max_rounds"] < 1:
        raise ConfigError("qc.max_rounds must be >= 1")

    backends = d.get("backends", {})
    rewriter = BackendSpec.from_dict(backends.get("rewriter", {"type": "mock"}), "backends.rewriter")
    judge_dicts = backends.get("judges", [{"type": "mock", "seed": i} for i in range(3)])
    if not judge_dicts:
        raise ConfigError("backends.judges needs at least one judge")
    judges = [BackendSpec.from_dict(j, f"backends.judges[{i}]") for i, j in enumerate(judge_dicts)]
    evaluator = None
    if backends.get("evaluator"):
        evaluator = BackendSpec.from_dict(backends["evaluator"], "backends.evaluator")

    splits = d.get("splits", {})
    ratios = tuple(float(r) for r in splits.get("ratios", (0.70, 0.15, 0.15)))
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigError("splits.ratios must be three positive numbers summing to 1")

    mix = d.get("mix", {})
    mix_weights = mix.get(
        "weights",
        {"item": 0.3, "summary": 0.3, "instruction_following": 0.2, "alignment_random": 0.2},
    )
    if not mix_weights or any(float(w) <= 0 for w in mix_weights.values()):
        raise ConfigError("mix.weights must be positive")
    unknown = sorted(set(mix_weights) - set(MIX_SOURCES))
    if unknown:
        raise ConfigError(f"mix.weights: unknown sources {unknown}; pipeline sources are {list(MIX_SOURCES)}")

    enc = d.get("encoder", {})
    try:
        encoder = EncoderConfig(
            k=int(enc.get("k", 8)),
            d_p=int(enc.get("d_p", 16)),
            layers=int(enc.get("layers", 5)),
            hidden=int(enc.get("hidden", 5120)),
            d=int(enc.get("d", 5120)),
            seed=seeds["encoder"],
            shared_positions=bool(enc.get("shared_positions", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"encoder: {exc}") from exc

    bounds = {}
    for name, b in d.get("outlier_bounds", {}).items():
        if b is not None and (len(b) != 2 or b[0] > b[1]):
            raise ConfigError(f"outlier_bounds.{name} must be [min, max]")
        bounds[name] = tuple(b) if b is not None else None

    audit = d.get("audit", {})
    return RunConfig(
        raw=raw,
        seed=seed,
        data_dir=_path(base, paths["data_dir"]),
        out_dir=out,
        templates_path=_path(base, paths.get("templates")),
        paraphrases_path=_path(base, paths.get("paraphrases")),
        weights_path=_path(base, paths.get("weights")),
        items_per_ema=items_per_ema,
        qc=qc_opts,
        rewriter=rewriter,
        judges=judges,
        evaluator=evaluator,
        rewrite_params=_params(d.get("rewrite_params"), BASELINE_PARAMS, "rewrite_params"),
        judge_params=_params(d.get("judge_params"), JUDGE_PARAMS, "judge_params"),
        split_ratios=ratios,
        mix={k: float(v) for k, v in mix_weights.items()},
        mix_total_n=mix.get("total_n"),
        mix_replace=bool(mix.get("replace", True)),
        encoder=encoder,
        workers=max(1, int(d.get("workers", 4))),
        stream_bounds=bounds,
        audit_path=_path(out, audit["path"]) if audit.get("path") else None,
        audit_redact=bool(audit.get("redact", True)),
        seeds=seeds,
    )


def load_config(path: str | Path, seed: int | None = None, out_dir=None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text("utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_config(data, path.parent, seed, out_dir)
