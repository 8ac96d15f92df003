"""Pipeline stages: ingest, synthesize, judge, assemble, encode, evaluate, tokens.

Every stage reads from and writes into ``config.out_dir`` (plus read-only
inputs under ``config.data_dir``) and leaves a manifest in
``out_dir/manifests/<stage>.json``.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import BackendSpec, RunConfig
from .encoder import PatchEncoder, build_encoder_prompt, count_tokens, load_or_init_weights
from .gateway import AuditLog, HttpBackend
from .judge import QcConfig, Rejected, refine_loop
from .metrics import evaluate_pairs
from .mocks import build_mock
from .narratives import OVERALL_SUMMARY_QUESTION, EmaResponse, Narrative, load_templates, synthesize_templates
from .qa import (
    SPLITS,
    MixSpec,
    QaPair,
    build_alignment_random_pair,
    build_instruction_pairs,
    build_item_qa,
    build_summary_qa,
    build_text_baseline_prompt,
    leakage_violations,
    load_bank,
    mix_datasets,
    select_item_categories,
    split_participants,
    sub_rng,
)
from .sensors import CANONICAL_SPECS, SensorDataError, SensorWindow, load_participant_window

logger = logging.getLogger(__name__)


class DataError(RuntimeError):
    """Missing or malformed stage inputs."""


def read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        raise DataError(f"missing input {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc
    return out


def write_jsonl(path: Path, rows) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")
            n += 1
    return n


def write_manifest(config: RunConfig, stage: str, counts: dict, started: float, extra: dict | None = None) -> dict:
    manifest = {
        "stage": stage,
        "config_hash": config.config_hash(),
        "tool_version": __version__,
        "seed": config.seed,
        "seeds": config.seeds,
        "counts": counts,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    manifest.update(extra or {})
    path = config.out_dir / "manifests" / f"{stage}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def make_backend(spec: BackendSpec, role: str, config: RunConfig):
    audit = AuditLog(config.audit_path, config.audit_redact) if config.audit_path else None
    if spec.type == "mock":
        return build_mock(role, spec.seed, spec.behavior, audit=audit)
    return HttpBackend(spec.config, audit=audit)


def _read_ema_index(config: RunConfig) -> list[tuple[str, str, float]]:
    path = config.data_dir / "ema_index.csv"
    if not path.exists():
        raise DataError(f"missing EMA index {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            try:
                rows.append((r["participant_id"], r["ema_id"], float(r["completed_at"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: bad row {r}") from exc
    return sorted(rows, key=lambda r: r[1])


def _load_windows(config: RunConfig) -> list[SensorWindow]:
    return [SensorWindow.from_dict(d) for d in read_jsonl(config.out_dir / "windows.jsonl")]


def cmd_ingest(config: RunConfig) -> dict:
    t0 = time.perf_counter()
    index = _read_ema_index(config)

    def one(row):
        pid, ema_id, end = row
        try:
            return load_participant_window(
                config.data_dir / pid, pid, ema_id, end, CANONICAL_SPECS, config.stream_bounds
            )
        except SensorDataError as exc:
            raise DataError(f"{ema_id}: {exc}") from exc

    with ThreadPoolExecutor(config.workers) as pool:
        results = list(pool.map(one, index))
    results.sort(key=lambda r: r[0].ema_id)
    n = write_jsonl(config.out_dir / "windows.jsonl", (w.to_dict() for w, _ in results))
    removed = sum(rep[s]["removed"] for _, rep in results for s in rep)
    skipped = sum(rep[s]["skipped"] for _, rep in results for s in rep)
    return write_manifest(config, "ingest", {"emas": len(index), "windows": n,
                                             "outliers_removed": removed, "rows_skipped": skipped}, t0)


def _load_responses(config: RunConfig) -> list[EmaResponse]:
    rows = read_jsonl(config.data_dir / "ema_responses.jsonl")
    try:
        out = [EmaResponse.from_dict(r) for r in rows]
    except (KeyError, ValueError) as exc:
        raise DataError(f"invalid EMA response: {exc}") from exc
    return sorted(out, key=lambda r: r.ema_id)


def cmd_synthesize(config: RunConfig) -> dict:
    t0 = time.perf_counter()
    templates = load_templates(config.templates_path)
    out = []
    responses = _load_responses(config)
    for resp in responses:
        items, summary = synthesize_templates(resp, templates)
        out += [n.to_dict() for n in items] + [summary.to_dict()]
    n = write_jsonl(config.out_dir / "narratives_template.jsonl", out)
    return write_manifest(config, "synthesize", {"emas": len(responses), "narratives": n}, t0)


def _narrative_seed(config: RunConfig, narrative_id: str) -> int:
    return int(sub_rng(config.seeds["judge"], narrative_id).integers(2**31))


def cmd_judge(config: RunConfig) -> dict:
    t0 = time.perf_counter()
    templates = [Narrative.from_dict(d) for d in read_jsonl(config.out_dir / "narratives_template.jsonl")]
    chosen = []
    by_ema: dict[str, list[Narrative]] = {}
    for n in templates:
        by_ema.setdefault(n.ema_id, []).append(n)
    for ema_id in sorted(by_ema):
        cats = set(select_item_categories(ema_id, config.items_per_ema, config.seeds["synthesis"]))
        chosen += [n for n in by_ema[ema_id] if n.kind == "summary" or n.category in cats]

    rewriter = make_backend(config.rewriter, "rewriter", config)
    judges = [make_backend(j, "judge", config) for j in config.judges]
    qc = QcConfig(judges, **config.qc)

    def one(n: Narrative):
        return refine_loop(n, qc, rewriter, judges, config.rewrite_params, config.judge_params,
                           base_seed=_narrative_seed(config, n.id))

    with ThreadPoolExecutor(config.workers) as pool:
        results = list(pool.map(one, chosen))
    accepted = sorted((r for r in results if isinstance(r, Narrative)), key=lambda n: n.id)
    rejected = sorted((r for r in results if isinstance(r, Rejected)), key=lambda r: r.id)
    write_jsonl(config.out_dir / "narratives_enhanced.jsonl", (n.to_dict() for n in accepted))
    write_jsonl(
        config.out_dir / "rejected.jsonl",
        ({"id": r.id, "narrative": r.narrative.to_dict(), "qc_trail": r.qc_trail} for r in rejected),
    )
    rounds = sum(len(r.qc_trail) for r in results)
    counts = {"candidates": len(chosen), "accepted": len(accepted), "rejected": len(rejected), "rounds": rounds}
    return write_manifest(config, "judge", counts, t0, {"rejected_narratives": len(rejected)})


def cmd_assemble(config: RunConfig) -> dict:
    t0 = time.perf_counter()
    index = _read_ema_index(config)
    participant_of = {ema: pid for pid, ema, _ in index}
    windows = {w.ema_id: w for w in _load_windows(config)}
    enhanced = [Narrative.from_dict(d) for d in read_jsonl(config.out_dir / "narratives_enhanced.jsonl")]
    bank = load_bank(config.paraphrases_path)
    assignment = split_participants(sorted(set(participant_of.values())), config.split_ratios,
                                    config.seeds["splits"])

    by_ema: dict[str, list[Narrative]] = {}
    for n in enhanced:
        by_ema.setdefault(n.ema_id, []).append(n)

    pairs: list[QaPair] = []
    for _, ema_id, _ in index:
        split = assignment[participant_of[ema_id]]
        rng = sub_rng(config.seeds["qa"], ema_id)
        narrs = by_ema.get(ema_id, [])
        pairs += build_item_qa(ema_id, ema_id, narrs, bank, rng, split)
        summary = next((n for n in narrs if n.kind == "summary"), None)
        if summary is not None:
            p = build_summary_qa(ema_id, ema_id, summary, bank, rng, split)
            if p is not None:
                pairs.append(p)

    ids = [p.id for p in pairs]
    if len(ids) != len(set(ids)):
        raise DataError("duplicate QA pair ids")
    leaks = leakage_violations(pairs, participant_of, assignment)
    if leaks:
        raise DataError(f"{len(leaks)} QA pairs cross participant splits")

    counts = {}
    for split in SPLITS:
        rows = sorted((p.to_dict() for p in pairs if p.split == split), key=lambda r: r["id"])
        counts[split] = write_jsonl(config.out_dir / "qa" / f"{split}.jsonl", rows)

    # SFT mixture for the training split
    train = [p for p in pairs if p.split == "train"]
    rng = sub_rng(config.seeds["mix"], "sources")
    item_pool = [p for p in train if p.kind == "item"]
    summary_pool = [p for p in train if p.kind == "summary"]
    if_pool = build_instruction_pairs(item_pool + summary_pool, rng)
    train_windows = [windows[e] for e in sorted(windows) if assignment[participant_of[e]] == "train"]
    total_n = config.mix_total_n or len(item_pool) + len(summary_pool)
    mix = MixSpec(config.mix)
    n_align = int(np.ceil(mix.weights[mix.names.index("alignment_random")][1] * total_n)) + 1 \
        if "alignment_random" in mix.names else 0
    align_pool = [build_alignment_random_pair(train_windows[i % len(train_windows)], rng)
                  for i in range(n_align)] if train_windows else []
    sources = {"item": item_pool, "summary": summary_pool,
               "instruction_following": if_pool, "alignment_random": align_pool}
    mixed = mix_datasets(sources, mix, total_n, config.seeds["mix"], replace=config.mix_replace) \
        if total_n and all(sources.get(n) for n in mix.names) else []
    counts["train_mix"] = write_jsonl(
        config.out_dir / "qa" / "train_mix.jsonl", ({"source": s, **p.to_dict()} for s, p in mixed)
    )

    qa_manifest = {
        "config_hash": config.config_hash(),
        "seeds": {k: config.seeds[k] for k in ("splits", "qa", "mix")},
        "split_ratios": list(config.split_ratios),
        "split_sizes": assignment.sizes(),
        "mix_ratios": dict(mix.weights),
        "counts": counts,
    }
    (config.out_dir / "qa" / "manifest.json").write_text(
        json.dumps(qa_manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return write_manifest(config, "assemble", counts, t0,
                          {"split_sizes": assignment.sizes(), "leakage_violations": 0})


def _encoder(config: RunConfig) -> PatchEncoder:
    path = config.weights_path or (config.out_dir / "encoder" / "weights.bin")
    return PatchEncoder(config.encoder, load_or_init_weights(path, config.encoder))


def cmd_encode(config: RunConfig) -> dict:
    t0 = time.perf_counter()
    enc = _encoder(config)
    rows = []
    for w in _load_windows(config):
        streams = {name: w.streams[name].values for name in w.streams}
        res = enc.encode_window(streams, OVERALL_SUMMARY_QUESTION)
        seq = res["sequence"]
        rows.append({
            "ema_id": w.ema_id,
            "prompt": res["prompt"],
            "layout": seq.segments(),
            "text_len": seq.text_len,
            "patch_counts": dict(zip(streams, seq.patch_counts)),
            "L_mm": seq.length,
            "budget": res["budget"].to_dict(),
            "embedding_norms": {k: round(float(np.linalg.norm(z)), 6) for k, z in res["embeddings"].items()},
        })
    n = write_jsonl(config.out_dir / "encode" / "layouts.jsonl", rows)
    mean_total = float(np.mean([r["budget"]["total"] for r in rows])) if rows else 0.0
    return write_manifest(config, "encode", {"windows": n}, t0, {"mean_prefill_tokens": mean_total})


def _load_eval_texts(path: Path) -> dict[str, dict]:
    out = {}
    for r in read_jsonl(path):
        if "id" not in r or "text" not in r:
            raise DataError(f"{path}: records need 'id' and 'text'")
        out[r["id"]] = r
    return out


def cmd_evaluate(config: RunConfig, refs_path: Path, preds_path: Path) -> dict:
    t0 = time.perf_counter()
    refs = _load_eval_texts(Path(refs_path))
    preds = _load_eval_texts(Path(preds_path))
    missing = sorted(set(refs) - set(preds))
    if missing:
        raise DataError(f"{len(missing)} references have no prediction, e.g. {missing[0]}")
    samples = []
    for rid in sorted(refs):
        r = refs[rid]
        if r.get("kind") == "item" and not str(r.get("question", "")).strip():
            raise DataError(f"{rid}: item references need a 'question'")
        samples.append({
            "id": rid,
            "kind": r.get("kind", "summary"),
            "question": r.get("question", ""),
            "reference": r["text"],
            "prediction": preds[rid]["text"],
        })
    judge = make_backend(config.evaluator, "evaluator", config) if config.evaluator else None
    report, rows = evaluate_pairs(samples, judge, config.judge_params)
    out = config.out_dir / "evaluate"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    with open(out / "per_sample.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return write_manifest(config, "evaluate", {"samples": len(rows)}, t0)


def cmd_tokens(config: RunConfig) -> dict:
    t0 = time.perf_counter()
    rows = []
    for w in _load_windows(config):
        streams = {name: w.streams[name].values for name in w.streams}
        text_prompt = build_text_baseline_prompt(w)
        lens_prompt, _ = build_encoder_prompt(streams, OVERALL_SUMMARY_QUESTION)
        budget = count_tokens(w, lens_prompt, k=config.encoder.k)
        rows.append({
            "ema_id": w.ema_id,
            "text_baseline_tokens": len((text_prompt.system + " " + text_prompt.user).split()),
            "lens_text_tokens": budget.text_tokens,
            "lens_patch_tokens": budget.patch_tokens,
            "lens_total_tokens": budget.total,
        })
    out = config.out_dir / "tokens"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tokens.csv", "w", newline="", encoding="utf-8") as fh:
        fields = ["ema_id", "text_baseline_tokens", "lens_text_tokens", "lens_patch_tokens", "lens_total_tokens"]
        wr = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    means = {k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "ema_id"} if rows else {}
    return write_manifest(config, "tokens", {"windows": len(rows)}, t0, {"means": means})


def write_eval_inputs(config: RunConfig, split: str = "test") -> tuple[Path, Path]:
    """References from a QA split and rule-based template predictions for them."""
    qa = read_jsonl(config.out_dir / "qa" / f"{split}.jsonl")
    templates = {d["id"]: d for d in read_jsonl(config.out_dir / "narratives_template.jsonl")}
    refs, preds = [], []
    for p in qa:
        refs.append({"id": p["id"], "kind": p["kind"], "question": p["question"], "text": p["answer"]})
        preds.append({"id": p["id"], "text": templates[p["id"]]["text"]})
    out = config.out_dir / "evaluate"
    write_jsonl(out / "references.jsonl", refs)
    write_jsonl(out / "predictions.jsonl", preds)
    return out / "references.jsonl", out / "predictions.jsonl"


def run_all(config: RunConfig) -> dict:
    manifests = {}
    for name, fn in (("ingest", cmd_ingest), ("synthesize", cmd_synthesize), ("judge", cmd_judge),
                     ("assemble", cmd_assemble), ("encode", cmd_encode), ("tokens", cmd_tokens)):
        manifests[name] = fn(config)
    refs, preds = write_eval_inputs(config)
    if read_jsonl(refs):
        manifests["evaluate"] = cmd_evaluate(config, refs, preds)
    return manifests
