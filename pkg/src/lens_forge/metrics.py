"""Linguistic overlap metrics and symptom-grounded clinical alignment metrics."""
from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .gateway import JUDGE_PARAMS, ChatPrompt, GenParams, complete_structured
from .prompts import (
    QA_EVAL_SYSTEM,
    QA_EVAL_USER,
    SYMPTOM_CATEGORIES,
    SYMPTOM_EVAL_SYSTEM,
    SYMPTOM_EVAL_USER,
)

logger = logging.getLogger(__name__)

_PUNCT = re.compile(r"[^\w\s]|_")

# ordinal weight by |ref - pred| severity distance; 3 and beyond score 0
SEVERITY_WEIGHTS = {0: 1.0, 1: 0.75, 2: 0.25}


def tokenize_simple(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def _tokens(x) -> list[str]:
    return tokenize_simple(x) if isinstance(x, str) else list(x)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _prf(overlap: float, n_cand: int, n_ref: int) -> dict:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f": f}


def rouge_n(candidate, reference, n: int = 1) -> dict:
    if n < 1:
        raise ValueError("n must be >= 1")
    c, r = _ngrams(_tokens(candidate), n), _ngrams(_tokens(reference), n)
    overlap = sum((c & r).values())
    return _prf(overlap, sum(c.values()), sum(r.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> dict:
    c, r = _tokens(candidate), _tokens(reference)
    return _prf(lcs_length(c, r), len(c), len(r))


def ngram_precisions(candidate, references, max_n: int = 4) -> list[tuple[int, int]]:
    """Clipped (matches, total) candidate n-gram counts for n = 1..max_n."""
    cand = _tokens(candidate)
    refs = [_tokens(r) for r in references]
    out = []
    for n in range(1, max_n + 1):
        c = _ngrams(cand, n)
        max_ref: Counter = Counter()
        for r in refs:
            max_ref |= _ngrams(r, n)
        out.append((sum((c & max_ref).values()), sum(c.values())))
    return out


def bleu4(candidate, references) -> float:
    """Sentence BLEU-4 with add-one smoothing on orders that have no match."""
    if isinstance(references, str):
        references = [references]
    references = list(references)
    if not references:
        raise ValueError("need at least one reference")
    cand = _tokens(candidate)
    if not cand:
        return 0.0
    refs = [_tokens(r) for r in references]
    log_p = 0.0
    for matches, total in ngram_precisions(cand, refs, 4):
        p = matches / total if matches else 1.0 / (total + 1)
        log_p += math.log(p) / 4
    c_len = len(cand)
    r_len = min((abs(len(r) - c_len), len(r)) for r in refs)[1]
    bp = 1.0 if c_len >= r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(log_p)


@dataclass(frozen=True)
class SymptomRecord:
    ref_presence: tuple[int, ...]
    pred_presence: tuple[int, ...]
    ref_severity: tuple[int, ...]
    pred_severity: tuple[int, ...]

    def __post_init__(self):
        n = len(self.ref_presence)
        if not (len(self.pred_presence) == len(self.ref_severity) == len(self.pred_severity) == n):
            raise ValueError("symptom record fields differ in length")
        for p in self.ref_presence + self.pred_presence:
            if p not in (0, 1):
                raise ValueError(f"presence must be 0/1, got {p}")
        for s in self.ref_severity + self.pred_severity:
            if s not in (0, 1, 2, 3):
                raise ValueError(f"severity must be in 0..3, got {s}")

    @classmethod
    def from_json(cls, obj: dict) -> "SymptomRecord":
        fields = ("ref_presence", "pred_presence", "ref_severity", "pred_severity")
        cols = {f: tuple(int(obj[c][f]) for c in SYMPTOM_CATEGORIES) for f in fields}
        return cls(**cols)

    def to_json(self) -> dict:
        return {
            name: {
                "ref_presence": self.ref_presence[i],
                "pred_presence": self.pred_presence[i],
                "ref_severity": self.ref_severity[i],
                "pred_severity": self.pred_severity[i],
            }
            for i, name in enumerate(SYMPTOM_CATEGORIES)
        }

    def violations(self) -> list[int]:
        return [
            i
            for i in range(len(self.ref_presence))
            if (self.ref_presence[i] == 0 and self.ref_severity[i] != 0)
            or (self.pred_presence[i] == 0 and self.pred_severity[i] != 0)
        ]

    def repaired(self) -> "SymptomRecord":
        """Force severity to 0 wherever presence is 0."""
        rs = tuple(s if p else 0 for p, s in zip(self.ref_presence, self.ref_severity))
        ps = tuple(s if p else 0 for p, s in zip(self.pred_presence, self.pred_severity))
        return SymptomRecord(self.ref_presence, self.pred_presence, rs, ps)


@dataclass(frozen=True)
class SeverityPair:
    ref_severity: int
    pred_severity: int

    def __post_init__(self):
        for s in (self.ref_severity, self.pred_severity):
            if s not in (0, 1, 2, 3):
                raise ValueError(f"severity must be in 0..3, got {s}")


def confusion_counts(records: Iterable[SymptomRecord]) -> tuple[int, int, int]:
    tp = fp = fn = 0
    for rec in records:
        for a, ah in zip(rec.ref_presence, rec.pred_presence):
            tp += a and ah
            fp += (not a) and ah
            fn += a and not ah
    return tp, fp, fn


def _coverage_from_counts(tp: int, fp: int, fn: int) -> dict:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f1": f1, "tp": tp, "fp": fp, "fn": fn}


def coverage(records: Sequence[SymptomRecord], mode: str = "micro") -> dict:
    """Presence precision/recall/F1; zero denominators give 0."""
    if not records:
        raise ValueError("need at least one record")
    if mode == "micro":
        return _coverage_from_counts(*confusion_counts(records))
    if mode == "macro":
        per = [_coverage_from_counts(*confusion_counts([r])) for r in records]
        out = {k: sum(p[k] for p in per) / len(per) for k in ("precision", "recall", "f1")}
        out.update(zip(("tp", "fp", "fn"), confusion_counts(records)))
        return out
    raise ValueError(f"unknown mode {mode!r}")


def severity_weight(a: int, a_hat: int, s: int, s_hat: int) -> float:
    if a != a_hat:
        return 0.0
    return SEVERITY_WEIGHTS.get(abs(s - s_hat), 0.0)


def _record_weights(rec: SymptomRecord) -> list[float]:
    return [
        severity_weight(a, ah, s, sh)
        for a, ah, s, sh in zip(rec.ref_presence, rec.pred_presence, rec.ref_severity, rec.pred_severity)
        if a or ah
    ]


def severity_alignment(records: Sequence[SymptomRecord], mode: str = "micro") -> float | None:
    """Mean ordinal weight over categories present on either side.

    Returns None when no category is present anywhere.
    """
    if not records:
        raise ValueError("need at least one record")
    if mode == "micro":
        ws = sorted(w for rec in records for w in _record_weights(rec))
        return math.fsum(ws) / len(ws) if ws else None
    if mode == "macro":
        per = [_record_weights(rec) for rec in records]
        scores = sorted(math.fsum(w) / len(w) for w in per if w)
        return math.fsum(scores) / len(scores) if scores else None
    raise ValueError(f"unknown mode {mode!r}")


def item_alignment(pairs: Sequence[SeverityPair]) -> float:
    if not pairs:
        raise ValueError("need at least one pair")
    return math.fsum(SEVERITY_WEIGHTS.get(abs(p.ref_severity - p.pred_severity), 0.0) for p in pairs) / len(pairs)


def build_symptom_eval_prompt(reference: str, prediction: str) -> ChatPrompt:
    if not reference.strip() or not prediction.strip():
        raise ValueError("reference and prediction must be non-empty")
    return ChatPrompt(SYMPTOM_EVAL_SYSTEM, SYMPTOM_EVAL_USER.format(reference=reference, prediction=prediction))


def extract_symptom_record(
    backend, reference: str, prediction: str, params: GenParams = JUDGE_PARAMS
) -> SymptomRecord:
    obj = complete_structured(build_symptom_eval_prompt(reference, prediction), "symptom_evaluation", params, backend)
    rec = SymptomRecord.from_json(obj)
    bad = rec.violations()
    if bad:
        logger.warning(
            "severity reported for absent symptoms %s; forcing to 0",
            [SYMPTOM_CATEGORIES[i] for i in bad],
        )
        rec = rec.repaired()
    return rec


def build_qa_eval_prompt(question: str, reference: str, prediction: str) -> ChatPrompt:
    if not (question.strip() and reference.strip() and prediction.strip()):
        raise ValueError("question, reference and prediction must be non-empty")
    return ChatPrompt(
        QA_EVAL_SYSTEM, QA_EVAL_USER.format(question=question, reference=reference, prediction=prediction)
    )


def extract_severity_pair(
    backend, question: str, reference: str, prediction: str, params: GenParams = JUDGE_PARAMS
) -> SeverityPair:
    obj = complete_structured(build_qa_eval_prompt(question, reference, prediction), "severity_pair", params, backend)
    return SeverityPair(int(obj["ref_severity"]), int(obj["pred_severity"]))


@dataclass
class MetricReport:
    rouge1: dict
    rouge2: dict
    rougeL: dict
    bleu4: float
    n_samples: int
    coverage: dict | None = None
    alignment: float | None = None
    item_alignment: float | None = None
    meteor: float | None = None  # declared, not computed
    bertscore: float | None = None  # declared, not computed
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "bleu4": self.bleu4,
            "meteor": self.meteor,
            "bertscore": self.bertscore,
            "coverage": self.coverage,
            "alignment": self.alignment,
            "item_alignment": self.item_alignment,
            "n_samples": self.n_samples,
            **self.extra,
        }


def _mean_prf(rows: list[dict]) -> dict:
    return {k: math.fsum(r[k] for r in rows) / len(rows) for k in ("precision", "recall", "f")}


def linguistic_scores(prediction: str, reference: str) -> dict:
    return {
        "rouge1": rouge_n(prediction, reference, 1),
        "rouge2": rouge_n(prediction, reference, 2),
        "rougeL": rouge_l(prediction, reference),
        "bleu4": bleu4(prediction, [reference]),
    }


def evaluate_pairs(
    samples: Sequence[dict],
    judge=None,
    params: GenParams = JUDGE_PARAMS,
    mode: str = "micro",
) -> tuple[MetricReport, list[dict]]:
    """Score ``{id, reference, prediction, kind, question?}`` samples.

    Summary-kind samples go through symptom extraction; item-kind samples
    through severity-pair extraction. Without a judge only linguistic metrics
    are produced.
    """
    if not samples:
        raise ValueError("no samples to evaluate")
    rows = []
    records: list[SymptomRecord] = []
    pairs: list[SeverityPair] = []
    for s in samples:
        ling = linguistic_scores(s["prediction"], s["reference"])
        row = {
            "id": s["id"],
            "kind": s.get("kind", "summary"),
            "rouge1_f": ling["rouge1"]["f"],
            "rouge2_f": ling["rouge2"]["f"],
            "rougeL_f": ling["rougeL"]["f"],
            "bleu4": ling["bleu4"],
            "coverage_f1": None,
            "alignment": None,
            "item_weight": None,
        }
        if judge is not None:
            if row["kind"] == "item":
                pair = extract_severity_pair(judge, s["question"], s["reference"], s["prediction"], params)
                pairs.append(pair)
                row["item_weight"] = item_alignment([pair])
            else:
                rec = extract_symptom_record(judge, s["reference"], s["prediction"], params)
                records.append(rec)
                row["coverage_f1"] = coverage([rec])["f1"]
                row["alignment"] = severity_alignment([rec])
        row["_ling"] = ling
        rows.append(row)

    report = MetricReport(
        rouge1=_mean_prf([r["_ling"]["rouge1"] for r in rows]),
        rouge2=_mean_prf([r["_ling"]["rouge2"] for r in rows]),
        rougeL=_mean_prf([r["_ling"]["rougeL"] for r in rows]),
        bleu4=math.fsum(r["_ling"]["bleu4"] for r in rows) / len(rows),
        n_samples=len(rows),
        coverage=coverage(records, mode) if records else None,
        alignment=severity_alignment(records, mode) if records else None,
        item_alignment=item_alignment(pairs) if pairs else None,
    )
    for r in rows:
        del r["_ling"]
    return report, rows
