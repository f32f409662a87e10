"""Decide whether one run actually beats another: AUC and a paired t-test.

Run: python3 demos/07_significance.py
"""

import numpy as np

from moltext.evaluation import paired_ttest, roc_auc

# ROC AUC from tie-averaged ranks: the probability a random positive outranks
# a random negative.
labels = [0, 0, 1, 1, 0, 1]
scores = [0.1, 0.4, 0.35, 0.8, 0.35, 0.9]
print(f"AUC = {roc_auc(labels, scores):.4f}  (ties share credit)")

# Two methods evaluated with the same five seeds. The paired one-sided t-test
# asks: is the mean per-seed improvement positive?
method_a = [61.2, 63.0, 59.8, 64.1, 62.5]
method_b = [58.9, 60.1, 58.2, 61.0, 60.3]
result = paired_ttest(method_a, method_b)
print(f"\nmean improvement {result.mean_diff:.2f} points")
print(f"t = {result.t:.4f} with {result.df} degrees of freedom")
print(f"one-sided p = {result.p_value:.4f}")
print("significant at 0.05" if result.p_value < 0.05 else "not significant at 0.05")

# The textbook check: differences 1..5 give t = 4.2426 and p ~ 0.0066.
worked = paired_ttest([2.0, 3.0, 4.0, 5.0, 6.0], np.ones(5))
print(f"\nworked example: t = {worked.t:.4f}, p = {worked.p_value:.4f}")
