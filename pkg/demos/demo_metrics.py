"""Evaluation metrics tour: precision/recall, the precision-weighted F-score,
binarized raw agreement, and Krippendorff's alpha over ordinal ratings.

Run:  python3 demos/demo_metrics.py
"""

from treewise import f_beta, krippendorff_alpha, precision_recall, raw_agreement
from treewise.rdte_eval import DegenerateDataError

# F(beta=0.5) weighs precision twice as heavily as recall: a high-recall,
# low-precision judge scores poorly.
print("precision  recall   F0.5")
for precision, recall in [(0.55, 0.90), (0.68, 0.57), (0.39, 1.00), (0.90, 0.58)]:
    print(f"   {precision:.2f}     {recall:.2f}   {f_beta(precision, recall):.3f}")

# precision/recall from binary predictions
preds = [True, True, False, False, True]
golds = [True, False, True, False, True]
p, r = precision_recall(preds, golds)
print(f"\npredictions vs gold: precision {p:.2f}, recall {r:.2f}, F0.5 {f_beta(p, r):.2f}")

# raw agreement binarizes two annotators' 1-5 scores at >= 4 and counts matches
annotator_a = [5, 4, 2, 1, 3, 4]
annotator_b = [4, 5, 4, 1, 2, 4]
print(f"\nraw agreement (threshold 4): {raw_agreement(annotator_a, annotator_b):.3f}")

# Krippendorff's alpha with the ordinal metric; None marks a missing cell
ratings = [
    [1, 2, 3, 3, 2, 1, 4, 1, 2, None, 3],
    [1, 2, 3, 3, 2, 2, 4, 1, 2, 5, None],
    [None, 3, 3, 3, 2, 3, 4, 2, 2, 5, 1],
]
for metric in ("ordinal", "interval", "nominal"):
    print(f"krippendorff alpha ({metric:8s}): {krippendorff_alpha(ratings, metric):.4f}")

# degenerate data (everyone gave the same score) is an error, never a silent 1.0
try:
    krippendorff_alpha([[3, 3], [3, 3]])
except DegenerateDataError as exc:
    print(f"\ndegenerate matrix correctly rejected: {exc}")
