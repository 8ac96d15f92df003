"""EMA responses to template narratives, and the rewrite prompt for enhancement."""
from __future__ import annotations

import enum
import json
import math
from fractions import Fraction
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .gateway import ChatPrompt
from .prompts import REWRITE_SYSTEM, REWRITE_USER

N_ITEMS = 13


@dataclass(frozen=True)
class SymptomCategory:
    index: int
    name: str
    key: str
    question_text: str


CATEGORIES: tuple[SymptomCategory, ...] = (
    SymptomCategory(1, "Anhedonia (Interest/Pleasure)", "anhedonia",
                    "In the past 4 hours, how much has the user shown little interest or pleasure in activities?"),
    SymptomCategory(2, "Depressed Mood", "depressed_mood",
                    "In the past 4 hours, how much has the user appeared down, depressed, or hopeless?"),
    SymptomCategory(3, "Sleep Disturbance", "sleep_disturbance",
                    "Last night, how much trouble did the user have with sleep?"),
    SymptomCategory(4, "Fatigue / Energy", "fatigue_energy",
                    "In the past 4 hours, how tired or low in energy has the user been?"),
    SymptomCategory(5, "Appetite Change", "appetite_change",
                    "In the past 4 hours, how much has the user shown a poor appetite or overeating?"),
    SymptomCategory(6, "Self-worth / Guilt", "self_worth_guilt",
                    "In the past 4 hours, how much has the user felt bad about themselves?"),
    SymptomCategory(7, "Concentration", "concentration",
                    "In the past 4 hours, how much trouble has the user had concentrating?"),
    SymptomCategory(8, "Psychomotor Change", "psychomotor_change",
                    "In the past 4 hours, how much has the user been moving or speaking more slowly than usual?"),
    SymptomCategory(9, "Suicidal Ideation", "suicidal_ideation",
                    "In the past 4 hours, how often has the user had thoughts of harming themselves or wishing to be dead?"),
    SymptomCategory(10, "Somatic Discomfort", "somatic_discomfort",
                    "In the past 4 hours, how much has the user experienced headache, abdominal discomfort, or body aches?"),
    SymptomCategory(11, "Inverted Question", "inverted_question",
                    "An inverted question randomized from Q1, Q4, or Q7."),
    SymptomCategory(12, "Anxiety Arousal", "anxiety_arousal",
                    "In the past 4 hours, how much has the user felt nervous, anxious, or on edge?"),
    SymptomCategory(13, "Uncontrollable Worry", "uncontrollable_worry",
                    "In the past 4 hours, how much has the user been unable to stop or control worrying?"),
    SymptomCategory(14, "Negative Event", "negative_event",
                    "In the past 4 hours, did the user experience a negative event? If yes: How negative was the event?"),
)

OVERALL_SUMMARY_QUESTION = (
    "Please summarize the user's overall mental and physical state in the past 4 hours, "
    "integrating mood, energy, sleep, appetite, concentration, and physical symptoms."
)

CATEGORY_BY_INDEX = {c.index: c for c in CATEGORIES}


class FrequencyBucket(enum.IntEnum):
    NotAtAll = 0
    Sometimes = 1
    Often = 2
    Constantly = 3


def bucket_frequency(score: float) -> FrequencyBucket:
    """0-25 not at all, 26-50 sometimes, 51-75 often, 76-100 constantly."""
    if not (0 <= score <= 100):
        raise ValueError(f"score {score} outside [0, 100]")
    s = math.floor(score)
    if s <= 25:
        return FrequencyBucket.NotAtAll
    if s <= 50:
        return FrequencyBucket.Sometimes
    if s <= 75:
        return FrequencyBucket.Often
    return FrequencyBucket.Constantly


@dataclass(frozen=True)
class NegativeEvent:
    occurred: bool
    intensity: float | None = None

    def __post_init__(self):
        if self.occurred != (self.intensity is not None):
            raise ValueError("negative-event intensity must be given iff the event occurred")
        if self.intensity is not None and not 0 <= self.intensity <= 100:
            raise ValueError("intensity outside [0, 100]")


@dataclass(frozen=True)
class EmaResponse:
    participant_id: str
    ema_id: str
    completed_at: float
    items: tuple[float, ...]
    negative_event: NegativeEvent
    daypart: str = "afternoon"

    def __post_init__(self):
        if len(self.items) != N_ITEMS:
            raise ValueError(f"expected {N_ITEMS} item scores, got {len(self.items)}")
        for v in self.items:
            if not 0 <= v <= 100:
                raise ValueError(f"item score {v} outside [0, 100]")
        if self.daypart not in ("morning", "afternoon", "evening"):
            raise ValueError(f"unknown daypart {self.daypart!r}")

    def to_dict(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "ema_id": self.ema_id,
            "completed_at": self.completed_at,
            "items": list(self.items),
            "negative_event": {
                "occurred": self.negative_event.occurred,
                "intensity": self.negative_event.intensity,
            },
            "daypart": self.daypart,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmaResponse":
        ne = d.get("negative_event") or {"occurred": False}
        return cls(
            participant_id=str(d["participant_id"]),
            ema_id=str(d["ema_id"]),
            completed_at=d["completed_at"],
            items=tuple(float(v) for v in d["items"]),
            negative_event=NegativeEvent(bool(ne["occurred"]), ne.get("intensity")),
            daypart=d.get("daypart", "afternoon"),
        )


@dataclass
class Narrative:
    kind: str  # item | summary
    stage: str  # template | enhanced
    text: str
    ema_id: str
    category: int | None = None
    severity_label: str | None = None
    qc_trail: list = field(default_factory=list)

    @property
    def id(self) -> str:
        suffix = f"item{self.category:02d}" if self.kind == "item" else "summary"
        return f"{self.ema_id}:{suffix}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "stage": self.stage,
            "text": self.text,
            "ema_id": self.ema_id,
            "category": self.category,
            "severity_label": self.severity_label,
            "qc_trail": self.qc_trail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Narrative":
        return cls(
            kind=d["kind"],
            stage=d["stage"],
            text=d["text"],
            ema_id=d["ema_id"],
            category=d.get("category"),
            severity_label=d.get("severity_label"),
            qc_trail=list(d.get("qc_trail") or []),
        )


@dataclass(frozen=True)
class TemplateSet:
    bucket_phrases: dict[str, str]
    intensity_phrases: dict[str, str]
    items: dict[int, str]
    negative_absent: str
    negative_present: str
    severity_statement: str
    severity_thresholds: tuple[float, float]

    @classmethod
    def from_json(cls, data: dict) -> "TemplateSet":
        return cls(
            bucket_phrases=dict(data["bucket_phrases"]),
            intensity_phrases=dict(data["intensity_phrases"]),
            items={int(k): v for k, v in data["items"].items()},
            negative_absent=data["negative_event"]["absent"],
            negative_present=data["negative_event"]["present"],
            severity_statement=data["severity_statement"],
            severity_thresholds=tuple(data["severity_thresholds"]),
        )

    def phrase(self, bucket: FrequencyBucket) -> str:
        return self.bucket_phrases[bucket.name]


@lru_cache(maxsize=None)
def _default_templates() -> TemplateSet:
    text = resources.files("lens_forge.data").joinpath("templates.json").read_text("utf-8")
    return TemplateSet.from_json(json.loads(text))


def load_templates(path: str | Path | None = None) -> TemplateSet:
    if path is None:
        return _default_templates()
    return TemplateSet.from_json(json.loads(Path(path).read_text("utf-8")))


def render_item_narrative(
    category: int, response: EmaResponse, templates: TemplateSet | None = None
) -> Narrative:
    templates = templates or _default_templates()
    if category not in templates.items:
        raise ValueError(f"no item template for category {category}")
    bucket = bucket_frequency(response.items[category - 1])
    text = templates.items[category].format(freq=templates.phrase(bucket))
    return Narrative("item", "template", text, response.ema_id, category=category)


def render_negative_event(response: EmaResponse, templates: TemplateSet | None = None) -> str:
    templates = templates or _default_templates()
    ne = response.negative_event
    if not ne.occurred:
        return templates.negative_absent
    bucket = bucket_frequency(ne.intensity)
    return templates.negative_present.format(intensity=templates.intensity_phrases[bucket.name])


def classify_overall_severity(
    response: EmaResponse, thresholds: tuple[float, float] | None = None
) -> str:
    lo, hi = thresholds or _default_templates().severity_thresholds
    # exact mean, so thirteen identical scores of 33.4 land on the threshold itself
    m = sum(map(Fraction, response.items)) / len(response.items)
    if m < Fraction(lo):
        return "mild"
    if m < Fraction(hi):
        return "moderate"
    return "severe"


def render_summary(
    item_narratives: list[Narrative],
    negative_fragment: str,
    severity: str,
    templates: TemplateSet | None = None,
) -> Narrative:
    templates = templates or _default_templates()
    ema_ids = {n.ema_id for n in item_narratives}
    if len(ema_ids) != 1:
        raise ValueError(f"item narratives span {len(ema_ids)} EMAs")
    cats = sorted(n.category for n in item_narratives)
    if cats != list(range(1, N_ITEMS + 1)):
        raise ValueError(f"summary needs categories 1-{N_ITEMS} exactly once, got {cats}")
    ordered = sorted(item_narratives, key=lambda n: n.category)
    parts = [n.text for n in ordered]
    parts.append(negative_fragment)
    parts.append(templates.severity_statement.format(label=severity))
    return Narrative(
        "summary", "template", " ".join(parts), ema_ids.pop(), severity_label=severity
    )


def synthesize_templates(
    response: EmaResponse, templates: TemplateSet | None = None
) -> tuple[list[Narrative], Narrative]:
    """All 13 item narratives and the summary narrative for one EMA."""
    templates = templates or _default_templates()
    items = [render_item_narrative(c, response, templates) for c in range(1, N_ITEMS + 1)]
    summary = render_summary(
        items,
        render_negative_event(response, templates),
        classify_overall_severity(response, templates.severity_thresholds),
        templates,
    )
    return items, summary


def build_rewrite_prompt(template_narrative: Narrative | str) -> ChatPrompt:
    text = template_narrative.text if isinstance(template_narrative, Narrative) else template_narrative
    if not text.strip():
        raise ValueError("cannot rewrite an empty narrative")
    return ChatPrompt(REWRITE_SYSTEM, REWRITE_USER.format(rule_based_template=text))
