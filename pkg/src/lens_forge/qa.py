"""QA dataset assembly: paraphrase sampling, participant splits, source mixing."""
from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .gateway import ChatPrompt
from .narratives import CATEGORY_BY_INDEX, N_ITEMS, Narrative
from .prompts import TEXT_BASELINE_STREAMS, TEXT_NARRATIVE_PROMPT, TEXT_QA_PROMPT

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SUMMARY_KEY = "summary"
RANDOM_LENGTH_RANGE = (64, 1024)


class ParaphraseBank(dict):
    """Mapping of question key to its list of interchangeable phrasings."""

    def __init__(self, data: Mapping[str, Sequence[str]], expected: int | None = 10):
        super().__init__({k: list(v) for k, v in data.items()})
        for key, variants in self.items():
            if expected is not None and len(variants) != expected:
                raise ValueError(f"{key}: expected {expected} variants, got {len(variants)}")
            if len(set(variants)) != len(variants):
                raise ValueError(f"{key}: variants are not pairwise distinct")


@lru_cache(maxsize=None)
def _default_bank() -> ParaphraseBank:
    text = resources.files("lens_forge.data").joinpath("paraphrases.json").read_text("utf-8")
    return ParaphraseBank(json.loads(text))


def load_bank(path: str | Path | None = None) -> ParaphraseBank:
    if path is None:
        return _default_bank()
    return ParaphraseBank(json.loads(Path(path).read_text("utf-8")))


def sample_paraphrase(bank: Mapping[str, Sequence[str]], key: str, rng: np.random.Generator) -> str:
    if key not in bank:
        raise KeyError(f"no paraphrases for {key!r}")
    variants = bank[key]
    return variants[int(rng.integers(len(variants)))]


def sub_rng(seed: int, *labels: str) -> np.random.Generator:
    """Independent generator keyed by a base seed and string labels."""
    return np.random.default_rng([seed] + [zlib.crc32(l.encode("utf-8")) for l in labels])


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    ratios: tuple[float, float, float]
    seed: int

    def sizes(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for v in self.assignment.values():
            out[v] += 1
        return out

    def __getitem__(self, participant_id: str) -> str:
        return self.assignment[participant_id]


def split_participants(
    participant_ids: Sequence[str], ratios: Sequence[float] = (0.70, 0.15, 0.15), seed: int = 0
) -> SplitAssignment:
    """Shuffle by seed, floor every split but the last, which takes the rest.

    Any split that would come out empty borrows one participant from the
    largest split.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != len(SPLITS) or any(r <= 0 for r in ratios):
        raise ValueError("need three positive ratios")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios sum to {sum(ratios)}, not 1")
    ids = sorted(set(participant_ids))
    n = len(ids)
    if n < len(SPLITS):
        raise ValueError(f"{n} participants cannot fill {len(SPLITS)} splits")
    sizes = [math.floor(n * r + 1e-9) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    for i in range(len(sizes)):
        if sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] += 1
    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    pos = 0
    for split, size in zip(SPLITS, sizes):
        for idx in order[pos : pos + size]:
            assignment[ids[idx]] = split
        pos += size
    return SplitAssignment(assignment, ratios, seed)


@dataclass
class QaPair:
    id: str
    kind: str  # item | summary | instruction_following | alignment_random
    question: str
    answer: str
    ema_id: str
    window_ref: str
    category: int | None = None
    split: str = "train"

    def to_dict(self) -> dict:
        return asdict(self)


def select_item_categories(ema_id: str, n: int, seed: int) -> list[int]:
    """Which item categories of an EMA go through enhancement and into QA."""
    if not 1 <= n <= N_ITEMS:
        raise ValueError(f"items per EMA must be in [1, {N_ITEMS}]")
    rng = sub_rng(seed, "items", ema_id)
    return sorted(int(c) + 1 for c in rng.choice(N_ITEMS, size=n, replace=False))


def _accepted(n) -> bool:
    return isinstance(n, Narrative) and n.stage == "enhanced" and bool(n.qc_trail) and n.qc_trail[-1].get("pass")


def build_item_qa(
    ema_id: str,
    window_ref: str,
    narratives: Sequence,
    bank: Mapping[str, Sequence[str]],
    rng: np.random.Generator,
    split: str = "train",
) -> list[QaPair]:
    pairs = []
    for n in sorted((n for n in narratives if isinstance(n, Narrative)), key=lambda n: n.category or 0):
        if n.kind != "item":
            continue
        if not _accepted(n):
            logger.info("skipping %s: narrative not accepted by QC", n.id)
            continue
        key = CATEGORY_BY_INDEX[n.category].key
        pairs.append(
            QaPair(f"{ema_id}:item{n.category:02d}", "item", sample_paraphrase(bank, key, rng),
                   n.text, ema_id, window_ref, n.category, split)
        )
    return pairs


def build_summary_qa(
    ema_id: str,
    window_ref: str,
    narrative,
    bank: Mapping[str, Sequence[str]],
    rng: np.random.Generator,
    split: str = "train",
) -> QaPair | None:
    if not _accepted(narrative):
        logger.info("skipping summary of %s: narrative not accepted by QC", ema_id)
        return None
    return QaPair(f"{ema_id}:summary", "summary", sample_paraphrase(bank, SUMMARY_KEY, rng),
                  narrative.text, ema_id, window_ref, None, split)


# minimal fixed-format instruction templates
IF_TEMPLATES = (
    ("{question} Answer in a single sentence that begins with \"Answer:\".", "Answer: {answer}"),
    ("{question} Reply using exactly two lines: first the word Summary, then your answer.", "Summary\n{answer}"),
    ("{question} Return a JSON object with one key \"answer\".", "{{\"answer\": {answer_json}}}"),
)


def build_instruction_pairs(pairs: Sequence[QaPair], rng: np.random.Generator) -> list[QaPair]:
    out = []
    for p in pairs:
        q_tpl, a_tpl = IF_TEMPLATES[int(rng.integers(len(IF_TEMPLATES)))]
        out.append(QaPair(
            f"{p.id}:if", "instruction_following", q_tpl.format(question=p.question),
            a_tpl.format(answer=p.answer, answer_json=json.dumps(p.answer)),
            p.ema_id, p.window_ref, p.category, p.split,
        ))
    return out


def sample_random_length(rng: np.random.Generator) -> int:
    lo, hi = RANDOM_LENGTH_RANGE
    return int(rng.integers(lo, hi + 1))


def _trend_word(y: np.ndarray) -> str:
    if len(y) < 2 or np.ptp(y) == 0:
        return "flat"
    slope = np.polyfit(np.arange(len(y)), y, 1)[0]
    rel = slope * len(y) / (np.ptp(y) or 1.0)
    if rel > 0.2:
        return "increasing"
    if rel < -0.2:
        return "decreasing"
    return "roughly flat"


def build_alignment_random_pair(window, rng: np.random.Generator, split: str = "train") -> QaPair:
    """Describe a random-length slice of one stream of ``window``."""
    length = sample_random_length(rng)
    candidates = sorted(n for n, s in window.streams.items() if len(s.values) >= length)
    if not candidates:
        candidates = [max(window.streams, key=lambda n: len(window.streams[n].values))]
    name = candidates[int(rng.integers(len(candidates)))]
    values = np.asarray(window.streams[name].values, dtype=float)
    length = min(length, len(values))
    start = int(rng.integers(len(values) - length + 1))
    seg = values[start : start + length]
    question = f"Describe the overall trend of this {name} segment of length {length} <ts></ts>."
    answer = (
        f"The {name} segment is {_trend_word(seg)}, with mean {seg.mean():.2f}, "
        f"minimum {seg.min():.2f} and maximum {seg.max():.2f}."
    )
    ref = f"{window.ema_id}#{name}[{start}:{start + length}]"
    return QaPair(f"{ref}:alignrand", "alignment_random", question, answer, window.ema_id, ref, None, split)


@dataclass(frozen=True)
class MixSpec:
    weights: tuple[tuple[str, float], ...]

    def __init__(self, weights: Mapping[str, float] | Sequence[tuple[str, float]]):
        items = list(weights.items()) if isinstance(weights, Mapping) else list(weights)
        if not items:
            raise ValueError("mix spec needs at least one source")
        if any(w <= 0 for _, w in items):
            raise ValueError("mix weights must be positive")
        total = math.fsum(w for _, w in items)
        object.__setattr__(self, "weights", tuple((n, w / total) for n, w in items))

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.weights]


def apportion(mix: MixSpec, total_n: int) -> dict[str, int]:
    """Largest-remainder rounding of ``ratio * total_n``; ties go to earlier sources."""
    quotas = [(name, w * total_n) for name, w in mix.weights]
    # guard against 0.3 * 1000 = 299.99999999999994
    counts = {name: math.floor(q + 1e-9) for name, q in quotas}
    left = total_n - sum(counts.values())
    order = sorted(
        range(len(quotas)), key=lambda i: (-(quotas[i][1] - counts[quotas[i][0]]), i)
    )
    for i in order[:left]:
        counts[quotas[i][0]] += 1
    return counts


class InsufficientSourceError(ValueError):
    pass


def mix_datasets(
    sources: Mapping[str, Sequence],
    mix_spec: MixSpec,
    total_n: int,
    seed: int,
    replace: bool = False,
) -> list[tuple[str, object]]:
    """Draw ``apportion(...)`` items from each source and shuffle them together."""
    counts = apportion(mix_spec, total_n)
    rng = np.random.default_rng(seed)
    drawn: list[tuple[str, object]] = []
    for name in mix_spec.names:
        pool = list(sources.get(name, []))
        want = counts[name]
        if want == 0:
            continue
        if not pool or (not replace and want > len(pool)):
            raise InsufficientSourceError(f"source {name!r} has {len(pool)} items, {want} requested")
        idx = rng.choice(len(pool), size=want, replace=replace)
        drawn += [(name, pool[int(i)]) for i in idx]
    return [drawn[int(i)] for i in rng.permutation(len(drawn))]


def serialize_series(values) -> str:
    return "[" + ", ".join(f"{float(v):.1f}" for v in values) + "]"


def _sleep_conversation_line(window) -> str:
    return (
        f"Sleep duration (previous night): {window.sleep_hours:.2f} hours. "
        f"Conversation length: {window.conversation_s:.0f} seconds."
    )


def build_text_baseline_prompt(window, question: str | None = None) -> ChatPrompt:
    lines = []
    for i, (name, desc) in enumerate(TEXT_BASELINE_STREAMS, 1):
        if name not in window.streams:
            raise KeyError(f"window {window.ema_id} lacks stream {name!r}")
        lines.append(f"{i}. {desc} {serialize_series(window.streams[name].values)}")
    fields = {"stream_list": "\n".join(lines), "sleep_conversation": _sleep_conversation_line(window)}
    if question is None:
        text = TEXT_NARRATIVE_PROMPT.format(**fields)
    else:
        text = TEXT_QA_PROMPT.format(question=question, **fields)
    return ChatPrompt("", text)


def leakage_violations(pairs: Sequence[QaPair], participant_of: Mapping[str, str],
                       assignment: SplitAssignment) -> list[str]:
    """Pair ids whose split differs from their participant's split."""
    return [p.id for p in pairs if p.split != assignment[participant_of[p.ema_id]]]
