from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from treewise.core import (
    Decomposition,
    DecompositionStep,
    DocumentLeaf,
    EntailmentTree,
    Hypothesis,
    HypothesisKind,
    ParaphraseLink,
    ProofResult,
    Provenance,
    Question,
    QuestionLeaf,
    QuestionOption,
    RdteJudgment,
    Statement,
    TreeJsonError,
    TreeStructureError,
    binarize_sufficiency,
    normalize_statement,
    tree_from_json,
    tree_integrity,
    tree_to_dot,
    tree_to_json,
    validate_tree,
)


def judgment(sufficiency: int, n: int = 2) -> RdteJudgment:
    return RdteJudgment(relevance=(5,) * n, redundancy=(5,) * n, sufficiency=sufficiency)


QUESTION = Question(
    id="q1",
    text="Which process widens canyons?",
    options=(QuestionOption("A", "erosion"), QuestionOption("B", "folding")),
    gold_label="A",
)


class TestStatement:
    def test_norm_lowercases_collapses_strips_period(self):
        assert Statement("  The  Moon Orbits. ").norm == "the moon orbits"

    def test_equality_is_norm_based(self):
        assert Statement("Erosion widens canyons.") == Statement("erosion  widens canyons")
        assert hash(Statement("A b.")) == hash(Statement("a B"))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Statement("   ")

    @given(st.text(min_size=1).filter(lambda t: t.strip()))
    def test_norm_idempotent(self, text):
        once = normalize_statement(text)
        assert normalize_statement(once) == once if once else True


class TestHypothesis:
    def test_depth_kind_invariant(self):
        Hypothesis(Statement("x y"), "q", 0, HypothesisKind.TOP_LEVEL_CORRECT)
        Hypothesis(Statement("x y"), "q", 2, HypothesisKind.RECURSIVE)
        with pytest.raises(ValueError):
            Hypothesis(Statement("x"), "q", 1, HypothesisKind.TOP_LEVEL_CORRECT)
        with pytest.raises(ValueError):
            Hypothesis(Statement("x"), "q", 0, HypothesisKind.RECURSIVE)


class TestDecomposition:
    def test_requires_two_premises(self):
        with pytest.raises(ValueError):
            Decomposition(Statement("h"), (Statement("a"),), Provenance.EXTERNAL)

    def test_rejects_norm_duplicates(self):
        with pytest.raises(ValueError):
            Decomposition(
                Statement("h"), (Statement("A b."), Statement("a  b")), Provenance.EXTERNAL
            )


class TestBinarize:
    def test_threshold_four_is_positive(self):
        assert binarize_sufficiency(4) is True

    def test_three_is_negative(self):
        assert binarize_sufficiency(3) is False

    def test_five_is_positive(self):
        assert binarize_sufficiency(5) is True


def single_leaf_tree(chunk_id: str = "doc#0", score: int = 4) -> EntailmentTree:
    return EntailmentTree("n0", {"n0": DocumentLeaf(Statement("erosion widens canyons"), chunk_id, score)})


def two_level_tree() -> EntailmentTree:
    return EntailmentTree(
        "n0",
        {
            "n0": DecompositionStep(Statement("erosion widens canyons"), ("n1", "n2"), judgment(5)),
            "n1": DocumentLeaf(Statement("water erodes rock"), "doc#0", 5),
            "n2": DocumentLeaf(Statement("rock removal widens canyons"), "doc#1", 5),
        },
    )


class TestValidateTree:
    def test_minimal_grounded_tree_is_clean(self):
        assert validate_tree(single_leaf_tree(), {"doc#0"}, QUESTION) == []

    def test_dangling_child_reported(self):
        tree = EntailmentTree(
            "n0",
            {"n0": DecompositionStep(Statement("h h"), ("n1", "nope"), judgment(5)),
             "n1": DocumentLeaf(Statement("a b"), "doc#0", 5)},
        )
        violations = validate_tree(tree, {"doc#0"}, QUESTION)
        assert any(v.startswith("dangling child nope") for v in violations)

    def test_unknown_chunk_reported(self):
        violations = validate_tree(single_leaf_tree("ghost#9"), {"doc#0"}, QUESTION)
        assert any(v.startswith("leaf not grounded") for v in violations)

    def test_question_leaf_must_match_question_or_options(self):
        ok = EntailmentTree("n0", {"n0": QuestionLeaf(Statement("erosion"))})
        assert validate_tree(ok, set(), QUESTION) == []
        bad = EntailmentTree("n0", {"n0": QuestionLeaf(Statement("plate tectonics"))})
        assert any("question leaf" in v for v in validate_tree(bad, set(), QUESTION))

    def test_cycle_detected(self):
        tree = EntailmentTree(
            "n0",
            {
                "n0": DecompositionStep(Statement("h h"), ("n1", "n2"), judgment(5)),
                "n1": ParaphraseLink(Statement("h h again"), "n0", 0.95),
                "n2": DocumentLeaf(Statement("a b"), "doc#0", 5),
            },
        )
        assert any("cycle" in v for v in validate_tree(tree, {"doc#0"}, QUESTION))

    def test_unreachable_and_single_child_reported(self):
        tree = EntailmentTree(
            "n0",
            {
                "n0": DecompositionStep(Statement("h h"), ("n1",), judgment(5, 1)),
                "n1": DocumentLeaf(Statement("a b"), "doc#0", 5),
                "n9": DocumentLeaf(Statement("orphan"), "doc#0", 5),
            },
        )
        violations = validate_tree(tree, {"doc#0"}, QUESTION)
        assert any("unreachable node n9" in v for v in violations)
        assert any("fewer than 2 children" in v for v in violations)

    def test_low_similarity_paraphrase_reported(self):
        tree = EntailmentTree(
            "n0",
            {
                "n0": ParaphraseLink(Statement("h h"), "n1", 0.5),
                "n1": DocumentLeaf(Statement("a b"), "doc#0", 5),
            },
        )
        assert any("paraphrase similarity" in v for v in validate_tree(tree, {"doc#0"}, QUESTION))

    def test_empty_tree_raises(self):
        with pytest.raises(TreeStructureError):
            validate_tree(EntailmentTree("n0", {}), set(), QUESTION)


class TestTreeIntegrity:
    def test_min_over_steps(self):
        tree = EntailmentTree(
            "n0",
            {
                "n0": DecompositionStep(Statement("top top"), ("n1", "n2"), judgment(5)),
                "n1": DecompositionStep(Statement("mid mid"), ("n3", "n4"), judgment(4)),
                "n2": DocumentLeaf(Statement("leaf two"), "d#0", 3),
                "n3": DocumentLeaf(Statement("leaf three"), "d#1", 5),
                "n4": QuestionLeaf(Statement("erosion")),
            },
        )
        assert tree_integrity(tree) == 3  # scores {5, 4, 3}

    def test_single_leaf(self):
        assert tree_integrity(single_leaf_tree(score=4)) == 4

    def test_all_perfect(self):
        assert tree_integrity(two_level_tree()) == 5

    def test_question_leaf_counts_five(self):
        tree = EntailmentTree("n0", {"n0": QuestionLeaf(Statement("erosion"))})
        assert tree_integrity(tree) == 5

    def test_paraphrase_inherits_target_subtree(self):
        tree = EntailmentTree(
            "n0",
            {
                "n0": ParaphraseLink(Statement("same thing"), "n1", 0.95),
                "n1": DocumentLeaf(Statement("a b"), "d#0", 3),
            },
        )
        assert tree_integrity(tree) == 3

    def test_unjudged_step_is_structural_error(self):
        tree = EntailmentTree(
            "n0",
            {
                "n0": DecompositionStep(Statement("h h"), ("n1", "n2")),
                "n1": DocumentLeaf(Statement("a b"), "d#0", 5),
                "n2": DocumentLeaf(Statement("c d"), "d#1", 5),
            },
        )
        with pytest.raises(TreeStructureError):
            tree_integrity(tree)

    def test_integrity_bounded_by_each_step_score(self):
        tree = two_level_tree()
        overall = tree_integrity(tree)
        for node in tree.nodes.values():
            if isinstance(node, DecompositionStep):
                assert overall <= node.judgment.sufficiency
            if isinstance(node, DocumentLeaf):
                assert overall <= node.entail_score


class TestSerialization:
    def test_round_trip_identity(self):
        tree = two_level_tree()
        assert tree_from_json(tree_to_json(tree)) == tree

    def test_parse_error_carries_position(self):
        with pytest.raises(TreeJsonError) as err:
            tree_from_json("{")
        assert "line 1" in str(err.value)

    def test_dot_single_node_has_one_declaration(self):
        dot = tree_to_dot(single_leaf_tree())
        assert dot.count("[label=") == 1
        assert dot.startswith("digraph")

    def test_dot_edges_parent_to_child(self):
        dot = tree_to_dot(two_level_tree())
        assert '"n0" -> "n1"' in dot and '"n0" -> "n2"' in dot

    def test_canonical_json_stable(self):
        tree = two_level_tree()
        assert tree_to_json(tree) == tree_to_json(tree_from_json(tree_to_json(tree)))


# Random-tree strategy: document/question leaves and judged steps.
_texts = st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd"), whitelist_characters=" "),
    min_size=1,
    max_size=24,
).filter(lambda t: t.strip())


@st.composite
def random_trees(draw):
    n_nodes = draw(st.integers(min_value=1, max_value=9))
    nodes = {}
    ids = [f"n{i}" for i in range(n_nodes)]
    for position, node_id in enumerate(reversed(ids)):
        index = n_nodes - 1 - position
        text = draw(_texts)
        later = ids[index + 1 :]
        kind = draw(st.sampled_from(["doc", "question", "step", "para"]))
        if kind == "step" and len(later) >= 2:
            children = tuple(draw(st.permutations(later))[: draw(st.integers(2, min(4, len(later))))])
            suff = draw(st.integers(1, 5))
            nodes[node_id] = DecompositionStep(
                Statement(text), children, judgment(suff, len(children))
            )
        elif kind == "para" and later:
            target = draw(st.sampled_from(later))
            nodes[node_id] = ParaphraseLink(Statement(text), target, draw(st.floats(0.9, 1.0)))
        elif kind == "question":
            nodes[node_id] = QuestionLeaf(Statement(text))
        else:
            nodes[node_id] = DocumentLeaf(Statement(text), f"d#{index}", draw(st.integers(1, 5)))
    return EntailmentTree("n0", dict(sorted(nodes.items())))


@given(random_trees())
def test_json_round_trip_property(tree):
    assert tree_from_json(tree_to_json(tree)) == tree


class TestProofResult:
    def test_requires_consistent_integrity(self):
        with pytest.raises(ValueError):
            ProofResult(single_leaf_tree(score=4), 5, 0, 0)

    def test_for_tree_computes_integrity(self):
        result = ProofResult.for_tree(single_leaf_tree(score=4), 2, 1)
        assert result.integrity == 4
