"""
From EMA scores to checked narratives
=====================================

Each self-report turns into thirteen item sentences and one summary. An LLM
rewrites the template text and a panel of judges decides whether the rewrite
keeps its meaning. Both roles are played here by deterministic mocks.
"""
import json

from lens_forge.judge import JudgeVerdict, QcConfig, Rejected, aggregate, refine_loop
from lens_forge.mocks import build_mock
from lens_forge.narratives import EmaResponse, NegativeEvent, bucket_frequency, synthesize_templates

scores = (10, 30, 55, 80, 0, 100, 26, 50, 51, 75, 76, 25, 40)
ema = EmaResponse("P042", "P042-E01", 1_700_000_000.0, scores, NegativeEvent(True, 62.0), "evening")

print("score -> bucket")
for s in sorted(set(scores)):
    print(f"  {s:>3} -> {bucket_frequency(s).name}")

items, summary = synthesize_templates(ema)
print("\nitem 4 template:", items[3].text)
print("\nsummary template, severity", summary.severity_label)
print(summary.text)

# how the panel votes are combined
panel = [
    JudgeVerdict((5, 4, 4, 4, 5), (0.9, 0.9, 0.85, 0.8, 0.9)),
    JudgeVerdict((4, 4, 5, 4, 4), (0.8, 0.9, 0.9, 0.9, 0.85)),
    JudgeVerdict((4, 5, 4, 4, 4), (0.9, 0.95, 0.9, 0.85, 0.8)),
]
print("\naggregate:", aggregate(panel).to_dict())

# a total of exactly 20 is not enough
flat = [JudgeVerdict((4,) * 5, (0.99,) * 5)] * 3
print("all fours:", aggregate(flat).to_dict())

# the loop with mock backends
rewriter = build_mock("rewriter", seed=1)
judges = [build_mock("judge", seed=s, behavior={"fail_rate": 0.4}) for s in (11, 12, 13)]
qc = QcConfig(max_rounds=3)
accepted = rejected = 0
for narrative in items + [summary]:
    out = refine_loop(narrative, qc, rewriter, judges, base_seed=100 + (narrative.category or 0))
    if isinstance(out, Rejected):
        rejected += 1
    else:
        accepted += 1
print(f"\n{accepted} accepted, {rejected} rejected after at most {qc.max_rounds} rounds each")
print("rewriter calls:", rewriter.call_count, "judge calls:", [j.call_count for j in judges])
print("last trail entry:", json.dumps(out.qc_trail[-1], sort_keys=True)[:200], "...")
