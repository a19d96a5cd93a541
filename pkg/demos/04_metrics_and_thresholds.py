"""Multi-label metric behavior: Jaccard vs micro/macro F1 under imbalance."""

import numpy as np

from panemo.metrics import compute_report, jaccard_accuracy, threshold

rng = np.random.default_rng(0)
n = 200

# build gold labels with very uneven class supports (like real emotion data)
support_rates = np.array([0.35, 0.12, 0.30, 0.15, 0.38, 0.10, 0.30, 0.10, 0.28, 0.04, 0.04])
gold = (rng.random((n, 11)) < support_rates).astype(int)

# a mediocre scorer: gold signal plus noise
scores = np.clip(gold * 0.55 + rng.random((n, 11)) * 0.55, 0.0, 1.0)

for tau in (0.3, 0.5, 0.7):
    pred = threshold(scores, tau)
    report = compute_report(pred, gold)
    print(
        f"tau={tau}: jaccard {report.jaccard:.3f}, "
        f"micro-F1 {report.micro_f1:.3f}, macro-F1 {report.macro_f1:.3f}"
    )

# rare classes drag macro-F1 below micro-F1
report = compute_report(threshold(scores, 0.5), gold)
print("\nper-class F1 vs support (rarer classes score lower):")
for c in sorted(report.per_class, key=lambda c: -c.support):
    print(f"  {c.name:<12} support {c.support:4d}  f1 {c.f1:.3f}")

# strict-threshold edge case: a score exactly at tau is negative
print("\nscore 0.5 at tau 0.5 ->", threshold(np.array([[0.5]]), 0.5)[0, 0])
print("empty pred vs empty gold scores", jaccard_accuracy(np.zeros((1, 11)), np.zeros((1, 11))))
