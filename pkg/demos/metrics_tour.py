"""
Scoring generated narratives
============================

Surface overlap (ROUGE, BLEU) and clinically grounded measures: did the model
mention the right symptoms, and at the right severity?
"""
from lens_forge.metrics import (
    SeverityPair, SymptomRecord, bleu4, coverage, item_alignment, linguistic_scores, rouge_l,
    severity_alignment, tokenize_simple,
)

ref = "The user often felt tired and had little energy, and sometimes felt down."
pred = "The user felt tired with little energy most of the time and was sometimes down."
print(tokenize_simple(pred))
print("ROUGE-L:", rouge_l(pred, ref))
print("BLEU-4: %.4f" % bleu4(pred, [ref]))
print(linguistic_scores(pred, ref))

# presence and severity per category
a     = (1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0)
a_hat = (1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)
s     = (2, 1, 3, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0)
s_hat = (2, 2, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)
rec = SymptomRecord(a, a_hat, s, s_hat)
print("\ncoverage:", coverage([rec]))
print("severity alignment:", severity_alignment([rec]))

print("\nsingle-category weights (both present):")
for delta in range(4):
    print(f"  |s - s_hat| = {delta}: {severity_alignment([SymptomRecord((1,), (1,), (0,), (delta,))])}")
print("absent in both:", severity_alignment([SymptomRecord((0,), (0,), (0,), (0,))]))

pairs = [SeverityPair(2, 2), SeverityPair(1, 2), SeverityPair(3, 0)]
print("\nitem alignment:", item_alignment(pairs))
