"""Scripted mock responders standing in for the rewriter, judges and evaluator."""
from __future__ import annotations

import hashlib
import json
import re

from .gateway import ChatPrompt, GenParams, MockBackend
from .prompts import SYMPTOM_CATEGORIES

_OPENERS = (
    "Over the past few hours,",
    "During this period,",
    "Recently,",
    "In the last four hours,",
    "Looking at this time window,",
)

_ASSESSMENT_RE = re.compile(r"Original Assessment: (.*?)\n\nEnhanced Narrative:", re.S)
_ENHANCED_RE = re.compile(r"AI-generated Narrative \(To Be Evaluated\):\n\n(.*?)\n\nPlease evaluate", re.S)
_BUCKET_SEVERITY = (("constantly", 3), ("often", 2), ("sometimes", 1), ("not at all", 0))


def _digest(*parts) -> bytes:
    return hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()


def rewriter_responder(prompt: ChatPrompt, params: GenParams, seed: int) -> str:
    m = _ASSESSMENT_RE.search(prompt.user)
    text = m.group(1).strip() if m else prompt.user.strip()
    h = _digest(seed, params.seed, text)
    opener = _OPENERS[h[0] % len(_OPENERS)]
    body = text[0].lower() + text[1:] if text.startswith("The ") else text
    return f"{opener} {body}"


def make_judge_responder(fail_rate: float = 0.25, prose_rate: float = 0.1, invalid_rate: float = 0.05):
    """Verdicts drawn from a digest of the prompt.

    A "failing" verdict scores all 4s at 0.85 confidence; a passing one scores
    5s with at most one 4 at 0.9 confidence. Some replies are wrapped in prose,
    and a few are broken JSON that only the corrective re-prompt fixes.
    """

    def respond(prompt: ChatPrompt, params: GenParams, seed: int) -> str:
        h = _digest(seed, prompt.user)
        corrective = "could not be used" in prompt.user
        u = [b / 256 for b in h[:4]]
        if u[0] < fail_rate:
            verdict = {"scores": [4] * 5, "confidence": [0.85] * 5}
        else:
            scores = [5] * 5
            if u[1] < 0.5:
                scores[h[4] % 5] = 4
            verdict = {"scores": scores, "confidence": [0.9] * 5}
        verdict["critique"] = {"summary": "scripted verdict"}
        body = json.dumps(verdict)
        if not corrective and u[2] < invalid_rate:
            return "Scores: five, five, five"  # no JSON object at all
        if u[3] < prose_rate:
            return f"Here is my evaluation:\n{body}\nThank you."
        return body

    return respond


def symptom_responder(prompt: ChatPrompt, params: GenParams, seed: int) -> str:
    h = _digest(seed, prompt.user)
    out = {}
    for i, name in enumerate(SYMPTOM_CATEGORIES):
        b = h[i % len(h)] ^ h[(i + 7) % len(h)]
        rp, pp = b & 1, (b >> 1) & 1
        out[name] = {
            "ref_presence": rp,
            "pred_presence": pp,
            "ref_severity": (1 + (b >> 2) % 3) if rp else 0,
            "pred_severity": (1 + (b >> 4) % 3) if pp else 0,
        }
    return json.dumps(out)


def _lexical_severity(text: str) -> int | None:
    low = text.lower()
    for phrase, sev in _BUCKET_SEVERITY:
        if phrase in low:
            return sev
    return None


def severity_pair_responder(prompt: ChatPrompt, params: GenParams, seed: int) -> str:
    ref = re.search(r"Reference: (.*?)\n\nPrediction:", prompt.user, re.S)
    pred = re.search(r"Prediction: (.*)$", prompt.user, re.S)
    h = _digest(seed, prompt.user)
    rs = _lexical_severity(ref.group(1)) if ref else None
    ps = _lexical_severity(pred.group(1)) if pred else None
    return json.dumps({
        "ref_severity": rs if rs is not None else h[0] % 4,
        "pred_severity": ps if ps is not None else h[1] % 4,
    })


def evaluator_responder(prompt: ChatPrompt, params: GenParams, seed: int) -> str:
    if "SeverityPair" in prompt.system:
        return severity_pair_responder(prompt, params, seed)
    return symptom_responder(prompt, params, seed)


def build_mock(role: str, seed: int, behavior: dict | None = None, **kwargs) -> MockBackend:
    behavior = behavior or {}
    if role == "rewriter":
        responder = rewriter_responder
    elif role == "judge":
        responder = make_judge_responder(
            behavior.get("fail_rate", 0.25), behavior.get("prose_rate", 0.1), behavior.get("invalid_rate", 0.05)
        )
    elif role == "evaluator":
        responder = evaluator_responder
    else:
        responder = None
    return MockBackend(seed=seed, responder=responder, canned=behavior.get("canned"), **kwargs)
