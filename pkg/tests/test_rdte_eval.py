from __future__ import annotations

import json
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from treewise.core import (
    Decomposition,
    Hypothesis,
    HypothesisKind,
    Provenance,
    Question,
    RdteJudgment,
    Statement,
)
from treewise.rdte_eval import (
    DegenerateDataError,
    RdteItem,
    RdteSchemaError,
    Split,
    evaluate_predictions,
    f_beta,
    krippendorff_alpha,
    load_rdte_dataset,
    paired_sufficiency,
    precision_recall,
    raw_agreement,
    split_counts,
)

# --- independent brute-force oracle for Krippendorff's alpha ---------------


def alpha_oracle(ratings, metric="ordinal"):
    """Direct enumeration: observed disagreement over all within-item value
    pairs, expected disagreement over all pairs of pairable values."""
    n_items = max(len(row) for row in ratings)
    units = []
    for j in range(n_items):
        values = [row[j] for row in ratings if j < len(row) and row[j] is not None]
        if len(values) >= 2:
            units.append(values)
    pooled = [v for unit in units for v in unit]
    freq = Counter(pooled)
    n = len(pooled)

    if metric == "nominal":
        d2 = lambda a, b: 0.0 if a == b else 1.0
    elif metric == "interval":
        d2 = lambda a, b: float(a - b) ** 2
    else:
        cumulative = {}
        total = 0.0
        for value in sorted(freq):
            cumulative[value] = total + freq[value] / 2.0
            total += freq[value]
        d2 = lambda a, b: (cumulative[a] - cumulative[b]) ** 2

    d_observed = 0.0
    for unit in units:
        m = len(unit)
        d_observed += sum(
            d2(unit[i], unit[j]) for i in range(m) for j in range(m) if i != j
        ) / (m - 1)
    d_observed /= n

    d_expected = sum(
        d2(pooled[i], pooled[j]) for i in range(n) for j in range(n) if i != j
    ) / (n * (n - 1))
    return 1.0 - d_observed / d_expected


def random_matrix(rng, n_annotators, n_items, missing_rate):
    while True:
        matrix = [
            [rng.randint(1, 5) if rng.random() > missing_rate else None for _ in range(n_items)]
            for _ in range(n_annotators)
        ]
        pairable_units = [
            [row[j] for row in matrix if row[j] is not None] for j in range(n_items)
        ]
        pairable_units = [u for u in pairable_units if len(u) >= 2]
        distinct = {v for unit in pairable_units for v in unit}
        if len(pairable_units) >= 2 and len(distinct) >= 2:
            return matrix


class TestKrippendorff:
    def test_perfect_agreement_two_values(self):
        matrix = [[1, 2, 5, 4], [1, 2, 5, 4]]
        assert krippendorff_alpha(matrix, "ordinal") == pytest.approx(1.0)
        assert krippendorff_alpha(matrix, "nominal") == pytest.approx(1.0)

    def test_hand_computed_nominal_value(self):
        # Units {1,1}, {1,2}, {2,2}, {2,2}: D_o = 1/4, D_e = 30/56, alpha = 8/15.
        matrix = [[1, 1, 2, 2], [1, 2, 2, 2]]
        assert krippendorff_alpha(matrix, "nominal") == pytest.approx(8.0 / 15.0, abs=1e-12)

    def test_toy_matrix_matches_oracle(self):
        matrix = [[1, 2, 3, 4], [1, 3, 3, 5]]
        for metric in ("ordinal", "nominal", "interval"):
            assert krippendorff_alpha(matrix, metric) == pytest.approx(
                alpha_oracle(matrix, metric), abs=1e-9
            )

    def test_degenerate_identical_values(self):
        with pytest.raises(DegenerateDataError):
            krippendorff_alpha([[3, 3, 3], [3, 3, 3]], "ordinal")

    def test_needs_two_pairable_items(self):
        with pytest.raises(ValueError):
            krippendorff_alpha([[1, None], [2, None]], "ordinal")

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            krippendorff_alpha([[1, 2], [2, 1]], "ratio")

    def test_invariant_under_annotator_and_item_permutation(self):
        rng = random.Random(7)
        matrix = random_matrix(rng, 3, 8, 0.2)
        baseline = krippendorff_alpha(matrix, "ordinal")
        shuffled_rows = list(matrix)
        rng.shuffle(shuffled_rows)
        assert krippendorff_alpha(shuffled_rows, "ordinal") == pytest.approx(baseline, abs=1e-12)
        order = list(range(len(matrix[0])))
        rng.shuffle(order)
        shuffled_cols = [[row[j] for j in order] for row in matrix]
        assert krippendorff_alpha(shuffled_cols, "ordinal") == pytest.approx(baseline, abs=1e-12)

    def test_matches_oracle_on_200_random_ordinal_matrices(self):
        rng = random.Random(1234)
        for _ in range(200):
            matrix = random_matrix(
                rng,
                rng.randint(2, 4),
                rng.randint(3, 10),
                rng.choice([0.0, 0.1, 0.2, 0.3]),
            )
            assert krippendorff_alpha(matrix, "ordinal") == pytest.approx(
                alpha_oracle(matrix, "ordinal"), abs=1e-9
            )

    def test_matches_oracle_on_200_random_binary_nominal_matrices(self):
        rng = random.Random(99)
        count = 0
        while count < 200:
            matrix = [[rng.randint(1, 2) for _ in range(rng.randint(2, 8))] for _ in range(2)]
            width = min(len(r) for r in matrix)
            matrix = [r[:width] for r in matrix]
            distinct = {v for row in matrix for v in row}
            if width < 2 or len(distinct) < 2:
                continue
            count += 1
            assert krippendorff_alpha(matrix, "nominal") == pytest.approx(
                alpha_oracle(matrix, "nominal"), abs=1e-9
            )


class TestFBeta:
    def test_reference_operating_point(self):
        # Precision .55, recall .90 prints as 59 on the percent scale.
        assert f_beta(0.55, 0.90, 0.5) == pytest.approx(0.596, abs=0.01)

    def test_equal_precision_recall_is_identity(self):
        for x in (0.1, 0.35, 0.8, 1.0):
            assert f_beta(x, x, 0.5) == pytest.approx(x, abs=1e-12)

    def test_zero_recall(self):
        assert f_beta(1.0, 0.0, 0.5) == 0.0

    def test_zero_zero_returns_zero(self):
        assert f_beta(0.0, 0.0, 0.5) == 0.0

    def test_beta_must_be_positive(self):
        with pytest.raises(ValueError):
            f_beta(0.5, 0.5, 0.0)

    @given(
        st.floats(min_value=0.01, max_value=1.0),
        st.floats(min_value=0.01, max_value=1.0),
    )
    def test_between_min_and_max(self, p, r):
        score = f_beta(p, r, 0.5)
        assert min(p, r) - 1e-12 <= score <= max(p, r) + 1e-12


class TestPrecisionRecall:
    def test_all_correct(self):
        assert precision_recall([True, True], [True, True]) == (1.0, 1.0)

    def test_no_positive_predictions(self):
        assert precision_recall([False, False], [True, False]) == (0.0, 0.0)

    def test_hand_counted(self):
        # tp=1, fp=1, fn=1 by enumeration.
        preds = [True, True, False, False]
        golds = [True, False, True, False]
        assert precision_recall(preds, golds) == (0.5, 0.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            precision_recall([True], [True, False])


class TestRawAgreement:
    def test_identical_lists(self):
        assert raw_agreement([5, 1, 3, 4], [5, 1, 3, 4]) == 1.0

    def test_hand_binarized(self):
        # binarized a=[1,1,0,0], b=[1,1,1,0]: agree on 3 of 4.
        assert raw_agreement([5, 4, 2, 1], [4, 5, 4, 1]) == 0.75

    def test_self_agreement_property(self):
        rng = random.Random(3)
        for _ in range(20):
            scores = [rng.randint(1, 5) for _ in range(rng.randint(1, 12))]
            assert raw_agreement(scores, scores) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            raw_agreement([1], [1, 2])


# --- dataset loading ---------------------------------------------------------


def item_line(split="arc", factuality=(5, 5), sufficiency=4, premises=("a b", "c d"), **extra):
    payload = {
        "question": {"id": "q1", "text": "Which?", "options": [
            {"label": "A", "text": "x"}, {"label": "B", "text": "y"}], "gold_label": "A"},
        "hypothesis": "the answer is x",
        "kind": "top_level_correct",
        "premises": list(premises),
        "factuality": list(factuality) if factuality is not None else None,
        "relevance": [5] * len(premises),
        "redundancy": [5] * len(premises),
        "sufficiency": sufficiency,
        "split": split,
    }
    payload.update(extra)
    return json.dumps(payload)


class TestLoadDataset:
    def test_two_line_file(self, tmp_path):
        path = tmp_path / "rdte.jsonl"
        path.write_text(
            item_line() + "\n" + item_line(split="hotpot", factuality=None, sufficiency=2) + "\n"
        )
        items = load_rdte_dataset(path)
        assert len(items) == 2
        assert split_counts(items) == {"arc": 1, "hotpot": 1}

    def test_hotpot_with_factuality_is_schema_error(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(item_line(split="hotpot", factuality=(5, 5)) + "\n")
        with pytest.raises(RdteSchemaError) as err:
            load_rdte_dataset(path)
        assert "line 1" in str(err.value) and "factuality" in str(err.value)

    def test_error_names_line_and_field(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(item_line() + "\n" + '{"split": "arc"}' + "\n")
        with pytest.raises(RdteSchemaError) as err:
            load_rdte_dataset(path)
        assert "line 2" in str(err.value)

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{nope\n")
        with pytest.raises(RdteSchemaError) as err:
            load_rdte_dataset(path)
        assert "line 1" in str(err.value)

    def test_two_annotator_form(self, tmp_path):
        payload = json.loads(item_line())
        for key in ("factuality", "relevance", "redundancy", "sufficiency"):
            payload.pop(key)
        payload["annotations"] = [
            {"factuality": [5, 5], "relevance": [5, 5], "redundancy": [5, 5], "sufficiency": 4},
            {"factuality": [5, 4], "relevance": [5, 5], "redundancy": [5, 5], "sufficiency": 3},
        ]
        payload["reconciled_sufficiency"] = 4
        path = tmp_path / "two.jsonl"
        path.write_text(json.dumps(payload) + "\n")
        items = load_rdte_dataset(path)
        assert len(items[0].judgments) == 2
        assert items[0].reconciled_sufficiency == 4
        a, b = paired_sufficiency(items)
        assert a == [4] and b == [3]


# --- prediction evaluation -----------------------------------------------------


def make_item(sufficiency, split=Split.ARC, qid="q1"):
    question = Question(id=qid, text="Which?")
    statement = Statement("h stands")
    hypothesis = Hypothesis(statement, qid, 0, HypothesisKind.TOP_LEVEL_CORRECT)
    premises = (Statement("p one"), Statement("p two"))
    decomposition = Decomposition(statement, premises, Provenance.EXTERNAL)
    judgment = RdteJudgment(
        relevance=(5, 5),
        redundancy=(5, 5),
        sufficiency=sufficiency,
        factuality=(5, 5) if split is Split.ARC else None,
    )
    return RdteItem(question, hypothesis, decomposition, (judgment,), sufficiency, split)


class TestEvaluatePredictions:
    def test_perfect_predictions(self):
        items = [make_item(s) for s in (5, 4, 2, 1)]
        report = evaluate_predictions(items, [5, 4, 2, 1])
        assert (report.precision, report.recall, report.f_beta) == (1.0, 1.0, 1.0)

    def test_all_ones_scores_zero(self):
        items = [make_item(s) for s in (5, 4, 2, 1)]
        report = evaluate_predictions(items, [1, 1, 1, 1])
        assert (report.precision, report.recall, report.f_beta) == (0.0, 0.0, 0.0)

    def test_one_of_each_outcome(self):
        # gold [1,0,1,0], preds [1,1,0,0]: tp=1 fp=1 fn=1 tn=1.
        items = [make_item(5), make_item(2), make_item(4), make_item(1)]
        report = evaluate_predictions(items, [5, 5, 1, 1])
        assert report.counts == {"tp": 1, "fp": 1, "fn": 1, "tn": 1}
        assert (report.precision, report.recall) == (0.5, 0.5)
        assert report.f_beta == pytest.approx(0.5)

    def test_per_split_breakdown(self):
        items = [make_item(5, Split.ARC), make_item(2, Split.HOTPOT)]
        report = evaluate_predictions(items, [5, 5])
        assert set(report.per_split) == {"arc", "hotpot"}
        assert report.per_split["arc"].precision == 1.0
        assert report.per_split["hotpot"].precision == 0.0

    def test_missing_reconciled_label_names_item(self):
        question = Question(id="q9", text="Which?")
        statement = Statement("h stands")
        item = RdteItem(
            question,
            Hypothesis(statement, "q9", 0, HypothesisKind.TOP_LEVEL_CORRECT),
            Decomposition(statement, (Statement("a x"), Statement("b y")), Provenance.EXTERNAL),
            (RdteJudgment((5, 5), (5, 5), 4, (5, 5)),),
            None,
            Split.ARC,
        )
        with pytest.raises(ValueError) as err:
            evaluate_predictions([item], [4])
        assert "q9" in str(err.value)
