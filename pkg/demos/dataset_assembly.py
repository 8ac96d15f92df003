"""
Assembling QA data without participant leakage
==============================================

Participants, not samples, are split; questions come from a paraphrase bank;
the training mixture is drawn with largest-remainder quotas.
"""
import numpy as np

from lens_forge.qa import (
    MixSpec, apportion, load_bank, mix_datasets, sample_paraphrase, split_participants, sub_rng,
)

ids = [f"P{i:03d}" for i in range(258)]
sa = split_participants(ids, (0.70, 0.15, 0.15), seed=0)
print("split sizes:", sa.sizes())
print("three participants:", split_participants(["A", "B", "C"], seed=0).sizes())

bank = load_bank()
print(f"\n{len(bank)} question keys, {len(bank['summary'])} phrasings each")
rng = sub_rng(0, "demo")
for _ in range(3):
    print("  ", sample_paraphrase(bank, "summary", rng))

# how often each phrasing is drawn
draws = [sample_paraphrase(bank, "summary", rng) for _ in range(5000)]
freq = np.array([draws.count(v) for v in bank["summary"]]) / len(draws)
print("phrasing frequencies:", np.round(freq, 3))

spec = MixSpec({"item": 0.3, "summary": 0.3, "instruction_following": 0.2, "alignment_random": 0.2})
print("\nquotas for 1000:", apportion(spec, 1000))
print("quotas for 7:   ", apportion(spec, 7))
print("8:1:1 of 10:    ", apportion(MixSpec({"alignment": 8, "narrative": 1, "general": 1}), 10))

sources = {n: [f"{n}-{i}" for i in range(400)] for n in spec.names}
mixed = mix_datasets(sources, spec, 20, seed=1)
print("\nfirst draws:", [item for _, item in mixed[:6]])
