from __future__ import annotations

import pytest

from treewise.backends.client import BackendError
from treewise.baselines import make_step_judge
from treewise.core import (
    DecompositionStep,
    DocumentLeaf,
    EntailmentTree,
    Question,
    QuestionOption,
    RdteJudgment,
    SearchConfig,
    Statement,
    normalize_statement,
)
from treewise.qa import answer_question, evaluate_qa, integrity_report
from treewise.retrieval import build_index

from conftest import Scenario, make_chunks


def config(**overrides) -> SearchConfig:
    defaults = dict(first_stage_k=50, rerank_keep=5, n_generators=2, best_of_k=1)
    defaults.update(overrides)
    return SearchConfig(**defaults)


def orbit_question(qid="q-orbit"):
    return Question(
        id=qid,
        text="What does the Moon orbit?",
        options=(QuestionOption("A", "the planet Earth"), QuestionOption("B", "the star Sun")),
        gold_label="A",
    )


def orbit_scenario(gold_score=4):
    """Option A's declarativized hypothesis grounds directly in a chunk."""
    chunks = make_chunks(
        {"earth": "The Moon orbits the planet Earth.", "noise": "Rocks are hard minerals."}
    )
    scenario = Scenario(
        chunks=chunks,
        declaratives={
            "the planet Earth": "The Moon orbits the planet Earth.",
            "the star Sun": "The Moon orbits the star Sun.",
        },
        passage_scores={
            (normalize_statement("The Moon orbits the planet Earth."), "earth#0"): gold_score
        },
    )
    return scenario, build_index(chunks)


class TestAnswerQuestion:
    def test_unique_proof_wins_without_tie(self):
        scenario, index = orbit_scenario()
        result = answer_question(
            orbit_question(), "treewise", config(), scenario.engine_backends(), index
        )
        assert result.chosen_label == "A"
        assert result.tie_flag is False
        assert result.per_option["A"].integrity == 4
        assert result.per_option["B"].integrity == 0
        assert result.winning_tree is not None

    def test_chosen_integrity_is_maximal(self):
        scenario, index = orbit_scenario()
        result = answer_question(
            orbit_question(), "treewise", config(), scenario.engine_backends(), index
        )
        best = result.per_option[result.chosen_label].integrity
        assert all(best >= o.integrity for o in result.per_option.values())

    def test_no_tree_anywhere_defaults_to_first_with_tie(self):
        chunks = make_chunks({"noise": "Rocks are hard minerals."})
        scenario = Scenario(chunks=chunks)
        result = answer_question(
            orbit_question(), "treewise", config(), scenario.engine_backends(), build_index(chunks)
        )
        assert result.chosen_label == "A"
        assert result.tie_flag is True
        assert result.per_option["A"].integrity == 0
        assert result.winning_tree is None

    def test_equal_scores_tie_to_earlier_option(self):
        question = Question(
            id="q-tie",
            text="Which fact is provable?",
            options=(
                QuestionOption("A", "alpha claim"),
                QuestionOption("B", "missing claim"),
                QuestionOption("C", "gamma claim"),
            ),
            gold_label="C",
        )
        chunks = make_chunks({"a": "Alpha fact holds.", "g": "Gamma fact holds."})
        scenario = Scenario(
            chunks=chunks,
            declaratives={
                "alpha claim": "Alpha fact holds.",
                "missing claim": "Beta fact holds.",
                "gamma claim": "Gamma fact holds.",
            },
            passage_scores={
                (normalize_statement("Alpha fact holds."), "a#0"): 4,
                (normalize_statement("Gamma fact holds."), "g#0"): 4,
            },
        )
        result = answer_question(
            question, "treewise", config(), scenario.engine_backends(), build_index(chunks)
        )
        assert result.chosen_label == "A"
        assert result.tie_flag is True

    def test_not_multiple_choice_rejected(self):
        question = Question(id="q1", text="Why?", options=(QuestionOption("A", "only one"),))
        scenario = Scenario(chunks=make_chunks({"a": "text"}))
        with pytest.raises(ValueError):
            answer_question(question, "treewise", config(), scenario.engine_backends(),
                            build_index(scenario.chunks))

    def test_all_options_failing_raises(self):
        chunks = make_chunks({"a": "text"})
        scenario = Scenario(chunks=chunks)

        def explode(request):
            raise RuntimeError("backend down")

        scenario.backend.add_handler("declarativize", explode)
        with pytest.raises(BackendError):
            answer_question(
                orbit_question(), "treewise", config(), scenario.engine_backends(), build_index(chunks)
            )

    def test_declarativize_called_once_per_option(self):
        scenario, index = orbit_scenario()
        answer_question(orbit_question(), "treewise", config(), scenario.engine_backends(), index)
        assert scenario.backend.calls_by_template["declarativize"] == 2

    def test_unknown_engine(self):
        scenario, index = orbit_scenario()
        with pytest.raises(ValueError):
            answer_question(orbit_question(), "magic", config(), scenario.engine_backends(), index)


def three_question_suite(sabotaged: set[str] = frozenset()):
    """Three questions, each provable only via its gold option (which is
    deliberately not the first option, so degenerate ties miss it)."""
    questions, scenarios = [], []
    topics = [("tide", "Tides follow the moon."), ("wind", "Wind follows pressure."),
              ("rain", "Rain follows clouds.")]
    for i, (name, fact) in enumerate(topics):
        qid = f"q-{name}"
        question = Question(
            id=qid,
            text=f"What explains {name}?",
            options=(QuestionOption("A", f"{name} myth"), QuestionOption("B", f"{name} truth")),
            gold_label="B",
        )
        chunks = make_chunks({f"doc{i}": fact})
        score = 1 if qid in sabotaged else 5
        scenario = Scenario(
            chunks=chunks,
            declaratives={f"{name} truth": fact, f"{name} myth": f"The {name} myth holds."},
            passage_scores={(normalize_statement(fact), f"doc{i}#0"): score},
        )
        questions.append(question)
        scenarios.append((scenario, build_index(chunks)))
    return questions, scenarios


class TestEvaluateQa:
    def evaluate(self, sabotaged=frozenset()):
        questions, scenarios = three_question_suite(sabotaged)
        total_correct = 0
        integrities = []
        for question, (scenario, index) in zip(questions, scenarios):
            result = answer_question(
                question, "treewise", config(), scenario.engine_backends(), index
            )
            total_correct += result.chosen_label == question.gold_label
            integrities.append(result.per_option[result.chosen_label].integrity)
        return total_correct / len(questions), integrities

    def test_all_provable_via_gold_accuracy_one(self):
        accuracy, integrities = self.evaluate()
        assert accuracy == 1.0
        assert all(i == 5 for i in integrities)

    def test_sabotaging_one_proof_drops_to_two_thirds(self):
        accuracy, _ = self.evaluate(sabotaged={"q-tide"})
        assert accuracy == pytest.approx(2 / 3)

    def test_evaluate_qa_single_index_path(self):
        # evaluate_qa proper: one shared corpus carrying every gold fact
        chunks = make_chunks(
            {
                "t": "Tides follow the moon.",
                "w": "Wind follows pressure.",
                "r": "Rain follows clouds.",
            }
        )
        scenario = Scenario(
            chunks=chunks,
            declaratives={
                "tide truth": "Tides follow the moon.",
                "tide myth": "The tide myth holds.",
                "wind truth": "Wind follows pressure.",
                "wind myth": "The wind myth holds.",
                "rain truth": "Rain follows clouds.",
                "rain myth": "The rain myth holds.",
            },
            passage_scores={
                (normalize_statement("Tides follow the moon."), "t#0"): 5,
                (normalize_statement("Wind follows pressure."), "w#0"): 4,
                (normalize_statement("Rain follows clouds."), "r#0"): 5,
            },
        )
        questions = [
            Question(
                id=f"q-{name}",
                text=f"What explains {name}?",
                options=(QuestionOption("A", f"{name} truth"), QuestionOption("B", f"{name} myth")),
                gold_label="A",
            )
            for name in ("tide", "wind", "rain")
        ]
        evaluation = evaluate_qa(
            questions, "treewise", config(), scenario.engine_backends(), build_index(chunks)
        )
        assert evaluation.accuracy == 1.0
        assert evaluation.mean_integrity == pytest.approx((5 + 4 + 5) / 3)
        assert evaluation.accuracy == sum(
            r.chosen_label == q.gold_label for r, q in zip(evaluation.results, questions)
        ) / len(questions)

    def test_empty_dataset_rejected(self):
        scenario = Scenario(chunks=make_chunks({"a": "text"}))
        with pytest.raises(ValueError):
            evaluate_qa([], "treewise", config(), scenario.engine_backends(),
                        build_index(scenario.chunks))


class TestIntegrityReport:
    def two_step_tree(self):
        return EntailmentTree(
            "n0",
            {
                "n0": DecompositionStep(Statement("top claim here"), ("n1", "n2")),
                "n1": DecompositionStep(Statement("middle claim here"), ("n3", "n4")),
                "n2": DocumentLeaf(Statement("leaf one text"), "d#0", 5),
                "n3": DocumentLeaf(Statement("leaf two text"), "d#1", 5),
                "n4": DocumentLeaf(Statement("leaf three text"), "d#2", 5),
            },
        )

    def test_min_of_rejudged_steps(self):
        scores = {"top claim here": 5, "middle claim here": 4}

        def judge(statement, premises):
            return RdteJudgment(
                relevance=(5,) * len(premises),
                redundancy=(5,) * len(premises),
                sufficiency=scores[statement.norm],
            )

        report = integrity_report(self.two_step_tree(), judge)
        assert report.per_step == {"n0": 5, "n1": 4}
        assert report.overall == 4

    def test_judge_failure_fails_step_closed(self):
        scenario = Scenario(chunks=make_chunks({"a": "text"}))
        scenario.backend.add_handler("rdte_judge_zero_shot", lambda request: "not parseable")
        judge = make_step_judge(
            orbit_question(), scenario.engine_backends().judgment, config()
        )
        report = integrity_report(self.two_step_tree(), judge)
        assert report.overall == 1

    def test_leaf_only_tree_scores_leaf(self):
        tree = EntailmentTree("n0", {"n0": DocumentLeaf(Statement("solo leaf"), "d#0", 3)})
        report = integrity_report(tree, lambda s, p: None)
        assert report.overall == 3 and report.per_step == {}
