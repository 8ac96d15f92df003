"""Multi-judge quality gate for enhanced narratives, with bounded regeneration."""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Sequence

from .gateway import (
    BASELINE_PARAMS,
    JUDGE_PARAMS,
    ChatPrompt,
    GatewayError,
    GenParams,
    StructuredOutputError,
    complete_structured,
)
from .narratives import Narrative, build_rewrite_prompt
from .prompts import JUDGE_SYSTEM, JUDGE_USER

logger = logging.getLogger(__name__)

DIMENSIONS = (
    "factual_alignment",
    "symptom_coverage",
    "severity_fidelity",
    "fluency",
    "hallucination_risk",
)


@dataclass(frozen=True)
class JudgeVerdict:
    scores: tuple[int, ...]
    confidence: tuple[float, ...]
    critique: object = ""

    def __post_init__(self):
        if len(self.scores) != 5 or len(self.confidence) != 5:
            raise ValueError("a verdict carries exactly 5 scores and 5 confidences")
        if any(not (isinstance(s, int) and 1 <= s <= 5) for s in self.scores):
            raise ValueError(f"scores must be integers in [1, 5]: {self.scores}")
        if any(not 0 <= c <= 1 for c in self.confidence):
            raise ValueError(f"confidences must be in [0, 1]: {self.confidence}")

    @classmethod
    def from_json(cls, obj: dict) -> "JudgeVerdict":
        return cls(
            tuple(int(s) for s in obj["scores"]),
            tuple(float(c) for c in obj["confidence"]),
            obj.get("critique", ""),
        )

    def to_dict(self) -> dict:
        return {"scores": list(self.scores), "confidence": list(self.confidence), "critique": self.critique}


@dataclass(frozen=True)
class AggregateVerdict:
    dim_means_rounded: tuple[int, ...]
    total: int
    mean_confidence: float
    passed: bool
    judge_count: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dim_means_rounded"] = list(self.dim_means_rounded)
        d["pass"] = d.pop("passed")
        return d


@dataclass
class QcConfig:
    judges: list = field(default_factory=list)
    total_threshold: int = 20
    confidence_threshold: float = 0.8
    max_rounds: int = 3
    min_quorum: int = 2

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 5 <= self.total_threshold <= 25:
            raise ValueError("total_threshold must lie in [5, 25]")
        if not 0 <= self.confidence_threshold <= 1:
            raise ValueError("confidence_threshold must lie in [0, 1]")


def _round_half_away(x: Fraction) -> int:
    sign = -1 if x < 0 else 1
    return sign * math.floor(abs(x) + Fraction(1, 2))


def aggregate(
    verdicts: Sequence[JudgeVerdict],
    total_threshold: int = 20,
    confidence_threshold: float = 0.8,
) -> AggregateVerdict:
    if not verdicts:
        raise ValueError("need at least one verdict")
    j = len(verdicts)
    rounded = tuple(
        _round_half_away(Fraction(sum(v.scores[d] for v in verdicts), j)) for d in range(5)
    )
    total = sum(rounded)
    # sort so the float sum does not depend on judge order
    confs = sorted(c for v in verdicts for c in v.confidence)
    mean_conf = math.fsum(confs) / len(confs)
    passed = total > total_threshold and mean_conf > confidence_threshold
    return AggregateVerdict(rounded, total, mean_conf, passed, j)


def build_judge_prompt(template_narrative: str, enhanced_narrative: str) -> ChatPrompt:
    if not template_narrative.strip() or not enhanced_narrative.strip():
        raise ValueError("both narratives must be non-empty")
    return ChatPrompt(
        JUDGE_SYSTEM,
        JUDGE_USER.format(original_template=template_narrative, enriched_narrative=enhanced_narrative),
    )


@dataclass
class Rejected:
    narrative: Narrative
    qc_trail: list

    @property
    def id(self) -> str:
        return self.narrative.id


class RoundError(GatewayError):
    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"round {round_index}: {cause}")
        self.round_index = round_index
        self.__cause__ = cause


def _judge_once(backend, prompt: ChatPrompt, params: GenParams) -> JudgeVerdict | None:
    try:
        return JudgeVerdict.from_json(complete_structured(prompt, "judge_verdict", params, backend))
    except StructuredOutputError as exc:
        logger.warning("judge dropped from round: %s", exc)
        return None


def judge_round(
    template_text: str,
    enhanced_text: str,
    judges: Sequence,
    config: QcConfig,
    params: GenParams = JUDGE_PARAMS,
) -> tuple[list[JudgeVerdict | None], AggregateVerdict | None]:
    """Score one enhanced text with every judge concurrently and aggregate."""
    prompt = build_judge_prompt(template_text, enhanced_text)
    with ThreadPoolExecutor(max_workers=max(len(judges), 1)) as pool:
        verdicts = list(pool.map(lambda b: _judge_once(b, prompt, params), judges))
    valid = [v for v in verdicts if v is not None]
    if len(valid) < min(config.min_quorum, len(judges)):
        return verdicts, None
    return verdicts, aggregate(valid, config.total_threshold, config.confidence_threshold)


def refine_loop(
    template_narrative: Narrative,
    config: QcConfig,
    rewriter,
    judges: Sequence | None = None,
    rewrite_params: GenParams = BASELINE_PARAMS,
    judge_params: GenParams = JUDGE_PARAMS,
    base_seed: int = 0,
) -> Narrative | Rejected:
    """Rewrite, judge, and regenerate until accepted or ``max_rounds`` is spent.

    Each round draws a fresh rewrite with seed ``base_seed + round`` at the same
    temperature and re-runs every judge on it.
    """
    judges = list(judges if judges is not None else config.judges)
    if not judges:
        raise ValueError("at least one judge backend is required")
    prompt = build_rewrite_prompt(template_narrative)
    trail = []
    for rnd in range(config.max_rounds):
        try:
            enhanced = rewriter.complete(prompt, rewrite_params.with_seed(base_seed + rnd)).strip()
            verdicts, agg = judge_round(
                template_narrative.text, enhanced, judges, config, judge_params
            )
        except GatewayError as exc:
            raise RoundError(rnd, exc) from exc
        passed = agg is not None and agg.passed
        trail.append({
            "round": rnd,
            "enhanced_text_hash": hashlib.sha256(enhanced.encode("utf-8")).hexdigest(),
            "verdicts": [v.to_dict() if v is not None else None for v in verdicts],
            "aggregate": agg.to_dict() if agg is not None else None,
            "pass": passed,
        })
        if passed:
            return replace(template_narrative, stage="enhanced", text=enhanced, qc_trail=trail)
    return Rejected(template_narrative, trail)
