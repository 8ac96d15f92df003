from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lens_forge.narratives import CATEGORIES, Narrative
from lens_forge.qa import (
    IF_TEMPLATES,
    InsufficientSourceError,
    MixSpec,
    ParaphraseBank,
    apportion,
    build_alignment_random_pair,
    build_instruction_pairs,
    build_item_qa,
    build_summary_qa,
    build_text_baseline_prompt,
    leakage_violations,
    load_bank,
    mix_datasets,
    sample_paraphrase,
    sample_random_length,
    select_item_categories,
    serialize_series,
    split_participants,
)
from lens_forge.sensors import CANONICAL_SPECS, ResampledSeries, SensorWindow

BANK = load_bank()


def accepted(ema_id, category=None, kind="item", text="An enhanced narrative."):
    trail = [{"round": 0, "pass": True}]
    return Narrative(kind, "enhanced", text, ema_id, category=category, qc_trail=trail)


def make_window(ema_id="P001-E01", fill=None):
    streams = {}
    for s in CANONICAL_SPECS:
        vals = np.arange(s.expected_len, dtype=float) if fill is None else np.full(s.expected_len, fill)
        streams[s.name] = ResampledSeries(vals, s.period_s, 0, np.zeros(s.expected_len, bool))
    return SensorWindow(ema_id, "P001", 14400, streams, 7.5, 120)


class TestBank:
    def test_shipped_bank(self):
        keys = {c.key for c in CATEGORIES if c.index <= 13} | {"summary"}
        assert set(BANK) == keys
        assert all(len(v) == 10 and len(set(v)) == 10 for v in BANK.values())

    def test_validation(self):
        with pytest.raises(ValueError):
            ParaphraseBank({"k": ["a"] * 10})
        with pytest.raises(ValueError):
            ParaphraseBank({"k": ["a", "b"]})

    def test_uniform_frequency(self):
        rng = np.random.default_rng(0)
        key = "anhedonia"
        counts = Counter(sample_paraphrase(BANK, key, rng) for _ in range(10000))
        assert len(counts) == 10
        assert all(0.08 <= c / 10000 <= 0.12 for c in counts.values())

    def test_single_variant(self):
        bank = ParaphraseBank({"k": ["only"]}, expected=None)
        rng = np.random.default_rng(1)
        assert {sample_paraphrase(bank, "k", rng) for _ in range(20)} == {"only"}

    def test_same_seed_same_draws(self):
        a = [sample_paraphrase(BANK, "summary", np.random.default_rng(4)) for _ in range(3)]
        b = [sample_paraphrase(BANK, "summary", np.random.default_rng(4)) for _ in range(3)]
        assert a == b

    def test_missing_key(self):
        with pytest.raises(KeyError):
            sample_paraphrase(BANK, "nope", np.random.default_rng(0))

    @given(st.integers(0, 2**32 - 1), st.sampled_from(sorted(BANK)))
    def test_never_outside_bank(self, seed, key):
        assert sample_paraphrase(BANK, key, np.random.default_rng(seed)) in BANK[key]


class TestSplits:
    def test_258(self):
        ids = [f"P{i:03d}" for i in range(258)]
        sa = split_participants(ids, (0.70, 0.15, 0.15), seed=0)
        assert sa.sizes() == {"train": 180, "val": 38, "test": 40}

    def test_three(self):
        assert split_participants(["a", "b", "c"], seed=5).sizes() == {"train": 1, "val": 1, "test": 1}

    def test_deterministic(self):
        ids = [f"p{i}" for i in range(40)]
        assert split_participants(ids, seed=9).assignment == split_participants(ids, seed=9).assignment
        assert split_participants(ids, seed=9).assignment != split_participants(ids, seed=10).assignment

    def test_errors(self):
        with pytest.raises(ValueError):
            split_participants(["a", "b"])
        with pytest.raises(ValueError):
            split_participants(["a", "b", "c"], (0.5, 0.5, 0.5))
        with pytest.raises(ValueError):
            split_participants(["a", "b", "c"], (1.0, 0.0, 0.0))

    @given(st.integers(3, 400), st.integers(0, 1000))
    def test_total_and_disjoint(self, n, seed):
        ids = [f"p{i}" for i in range(n)]
        sa = split_participants(ids, seed=seed)
        assert set(sa.assignment) == set(ids)
        assert sum(sa.sizes().values()) == n and min(sa.sizes().values()) >= 1


class TestPairs:
    def test_item_and_summary(self):
        cats = select_item_categories("P001-E01", 2, seed=3)
        narrs = [accepted("P001-E01", c) for c in cats]
        rng = np.random.default_rng(0)
        items = build_item_qa("P001-E01", "P001-E01", narrs, BANK, rng, "val")
        summary = build_summary_qa("P001-E01", "P001-E01", accepted("P001-E01", kind="summary"), BANK, rng, "val")
        assert len(items) == 2 and summary is not None
        assert all(p.window_ref == "P001-E01" and p.split == "val" for p in items + [summary])
        for p in items:
            key = next(c.key for c in CATEGORIES if c.index == p.category)
            assert p.question in BANK[key]
        assert summary.question in BANK["summary"]
        assert len({p.id for p in items + [summary]}) == 3

    def test_rejected_skipped(self, caplog):
        template = Narrative("item", "template", "raw", "E", category=1)
        failed = Narrative("item", "enhanced", "x", "E", category=2, qc_trail=[{"pass": False}])
        assert build_item_qa("E", "E", [template, failed], BANK, np.random.default_rng(0)) == []
        assert build_summary_qa("E", "E", Narrative("summary", "template", "x", "E"), BANK,
                                np.random.default_rng(0)) is None

    def test_select_categories(self):
        cats = select_item_categories("X", 2, 0)
        assert len(cats) == 2 and len(set(cats)) == 2 and all(1 <= c <= 13 for c in cats)
        assert cats == select_item_categories("X", 2, 0)
        assert select_item_categories("X", 13, 0) == list(range(1, 14))
        with pytest.raises(ValueError):
            select_item_categories("X", 0, 0)

    def test_instruction_pairs(self):
        base = build_item_qa("E", "E", [accepted("E", 1, text='He said "hi".')], BANK, np.random.default_rng(0))
        out = build_instruction_pairs(base * 10, np.random.default_rng(1))
        assert all(p.kind == "instruction_following" and p.id.endswith(":if") for p in out)
        suffixes = [q.replace("{question}", "") for q, _ in IF_TEMPLATES]
        assert all(any(p.question.endswith(sfx) for sfx in suffixes) for p in out)
        assert any(p.answer == '{"answer": "He said \\"hi\\"."}' for p in out)

    def test_alignment_random(self):
        w = make_window()
        p = build_alignment_random_pair(w, np.random.default_rng(2))
        assert p.kind == "alignment_random" and "<ts></ts>" in p.question
        length = int(p.question.split("length ")[1].split()[0])
        assert 64 <= length <= 1440


class TestRandomLength:
    def test_band(self):
        rng = np.random.default_rng(0)
        x = np.array([sample_random_length(rng) for _ in range(100_000)])
        assert x.min() >= 64 and x.max() <= 1024
        assert x.min() == 64 and x.max() == 1024
        assert 530 <= x.mean() <= 558

    def test_seeded(self):
        a = [sample_random_length(np.random.default_rng(3)) for _ in range(5)]
        assert a == [sample_random_length(np.random.default_rng(3)) for _ in range(5)]


class TestMix:
    def test_four_way(self):
        assert apportion(MixSpec({"a": 0.3, "b": 0.3, "c": 0.2, "d": 0.2}), 1000) == {
            "a": 300, "b": 300, "c": 200, "d": 200}

    def test_eight_one_one(self):
        assert apportion(MixSpec({"align": 8, "narr": 1, "gen": 1}), 10) == {"align": 8, "narr": 1, "gen": 1}

    def test_single_source_identity(self):
        src = {"only": list(range(50))}
        out = mix_datasets(src, MixSpec({"only": 1.0}), 50, seed=0)
        assert sorted(x for _, x in out) == list(range(50))

    def test_insufficient(self):
        with pytest.raises(InsufficientSourceError):
            mix_datasets({"a": [1, 2]}, MixSpec({"a": 1}), 5, seed=0)
        assert len(mix_datasets({"a": [1, 2]}, MixSpec({"a": 1}), 5, seed=0, replace=True)) == 5

    def test_shuffled_and_deterministic(self):
        src = {"a": list(range(100)), "b": list(range(100, 200))}
        spec = MixSpec({"a": 0.5, "b": 0.5})
        one = mix_datasets(src, spec, 100, seed=4)
        assert one == mix_datasets(src, spec, 100, seed=4)
        names = [n for n, _ in one]
        assert names != sorted(names)

    @given(st.lists(st.floats(0.01, 10), min_size=1, max_size=6), st.integers(0, 5000))
    def test_apportion_properties(self, weights, total):
        spec = MixSpec({f"s{i}": w for i, w in enumerate(weights)})
        counts = apportion(spec, total)
        assert sum(counts.values()) == total
        for name, w in spec.weights:
            assert abs(counts[name] - w * total) < 1

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            MixSpec({"a": 0})
        with pytest.raises(ValueError):
            MixSpec({})


class TestTextBaseline:
    def test_stream_lengths(self):
        p = build_text_baseline_prompt(make_window())
        lists = [ln[ln.index("["):] for ln in p.user.splitlines() if "[" in ln and ln[:2].rstrip(".").isdigit()]
        assert [len(x.strip("[]").split(", ")) for x in lists] == [1440, 480, 240, 240, 24, 24, 240]
        assert "7.50 hours" in p.user and "120 seconds" in p.user

    def test_serialization(self):
        assert serialize_series([1.0, 2.5]) == "[1.0, 2.5]"

    def test_question_once(self):
        q = "How tired was the user in the past four hours?"
        assert build_text_baseline_prompt(make_window(), q).user.count(q) == 1

    def test_missing_stream(self):
        w = make_window()
        del w.streams["gps_lat"]
        with pytest.raises(KeyError):
            build_text_baseline_prompt(w)

    @settings(max_examples=25)
    @given(st.integers(0, 2**31), st.integers(0, 1439), st.integers(1, 50))
    def test_injective(self, seed, idx, delta):
        w1 = make_window(fill=1.0)
        w2 = make_window(fill=1.0)
        w2.streams["heart_rate"].values[idx] += delta / 10
        assert build_text_baseline_prompt(w1).user != build_text_baseline_prompt(w2).user


def test_leakage_scan():
    ids = [f"P{i:03d}" for i in range(30)]
    sa = split_participants(ids, seed=1)
    participant_of = {f"{p}-E01": p for p in ids}
    pairs = []
    for ema, pid in participant_of.items():
        pairs += build_item_qa(ema, ema, [accepted(ema, 1)], BANK, np.random.default_rng(0), sa[pid])
    assert leakage_violations(pairs, participant_of, sa) == []
    pairs[0].split = "test" if pairs[0].split != "test" else "train"
    assert leakage_violations(pairs, participant_of, sa) == [pairs[0].id]
