import pytest
from hypothesis import given, strategies as st

from conftest import (
    REASONING_SCORE_06,
    REASONING_SCORE_0625,
    REASONING_SCORE_10,
    fixture_corpus,
    make_reasoning_trajectory,
    rafs_rating_entries,
)
from rare.errors import ValidationError
from rare.factuality import (
    generate_queries,
    rate_statement,
    score_candidates,
    score_trajectory,
    split_sentences,
    split_statements,
)
from rare.lm import ScriptEntry, ScriptedBackend
from rare.retrieval import build_index
from rare.types import (
    ActionKind,
    ActionStep,
    DocumentRef,
    Question,
    SearchConfig,
    Trajectory,
)


@pytest.fixture
def question(conjunctivitis_question):
    return conjunctivitis_question


@pytest.fixture
def index():
    return build_index(fixture_corpus())


@pytest.fixture
def backend():
    return ScriptedBackend(rafs_rating_entries())


CFG = SearchConfig()


class TestSplitStatements:
    def test_worked_reasoning_splits_into_five(self, question):
        traj = make_reasoning_trajectory(question, REASONING_SCORE_06, "C")
        statements = split_statements(traj)
        assert len(statements) == 5
        assert statements[-1] == "The answer is C: Warm compresses."
        assert statements[0].startswith("Given the patient's symptoms")

    def test_single_sentence_without_terminator(self, question):
        traj = make_reasoning_trajectory(question, "a bare thought without end", "C")
        assert split_statements(traj) == ["a bare thought without end"]

    def test_decimal_number_not_a_boundary(self):
        assert split_sentences("Dose is 2.5 mg. Next step.") == [
            "Dose is 2.5 mg.", "Next step."]

    def test_single_letter_abbreviation_guarded(self):
        assert split_sentences("Cultures grew E. coli in the sample. Treat it.") == [
            "Cultures grew E. coli in the sample.", "Treat it."]

    def test_option_label_continuation_guarded(self):
        text = "Which treatment fits? A: drops, B: compresses. It depends."
        assert split_sentences(text) == [
            "Which treatment fits? A: drops, B: compresses.", "It depends."]

    def test_short_fragments_merge_into_previous(self):
        assert split_sentences("The culture was taken from blood. mg dose.") == [
            "The culture was taken from blood. mg dose."]

    def test_empty_trajectory_rejected(self, question):
        with pytest.raises(ValidationError):
            split_statements(Trajectory(question.id, ()))

    def test_multi_step_outputs_concatenated(self, question):
        steps = (
            ActionStep(ActionKind.A3, "p", "The cause is pollen.",
                       sub_question="What causes it?"),
            ActionStep(ActionKind.A2, "p", "The answer is B: Ketotifen eye drops."),
        )
        traj = Trajectory(question.id, steps, final_answer="B")
        assert split_statements(traj) == [
            "The cause is pollen.", "The answer is B: Ketotifen eye drops."]

    @given(st.text(alphabet=" .?!abcdefgXYZ123,", max_size=120))
    def test_statements_preserve_every_token(self, text):
        if not text.strip():
            return
        statements = split_sentences(text)
        assert statements
        assert " ".join(statements).split() == text.split()


class TestGenerateQueries:
    def test_two_lines_for_n_three(self):
        backend = ScriptedBackend([ScriptEntry("query_gen",
                                               ("first query\nsecond query",))])
        assert generate_queries("stmt", backend, 3) == ["first query", "second query"]

    def test_blank_reply_falls_back_to_statement(self):
        backend = ScriptedBackend([ScriptEntry("query_gen", ("   \n  ",))])
        assert generate_queries("the statement", backend, 3) == ["the statement"]

    def test_n_one_truncates_to_first_line(self):
        backend = ScriptedBackend([ScriptEntry("query_gen", ("one\ntwo\nthree",))])
        assert generate_queries("stmt", backend, 1) == ["one"]


class TestRateStatement:
    def rate(self, reply):
        backend = ScriptedBackend([ScriptEntry("rating", (reply,))])
        evidence = (DocumentRef("d", 1.0, "snippet text"),)
        return rate_statement("stmt", evidence, backend)

    def test_supported_label(self):
        assert self.rate("Label: Supported") == "supported"

    def test_not_supported_checked_first(self):
        assert self.rate("This is not supported by the evidence") == "not_supported"

    def test_unparseable_defaults_to_not_supported(self):
        assert self.rate("unclear") == "not_supported"

    def test_mixed_reply_prefers_not_supported(self):
        assert self.rate("Supported? No: not supported on balance.") == "not_supported"


class TestScoreTrajectory:
    def test_worked_example_three_of_five(self, question, backend, index):
        traj = make_reasoning_trajectory(question, REASONING_SCORE_06, "C")
        report = score_trajectory(traj, backend, index, CFG)
        assert report.supported_count == 3
        assert report.not_supported_count == 2
        assert report.score == 0.6
        labels = [s.label for s in report.statements]
        assert labels == ["supported", "supported", "supported",
                          "not_supported", "not_supported"]

    def test_all_supported_scores_one(self, question, backend, index):
        traj = make_reasoning_trajectory(question, REASONING_SCORE_10, "B")
        report = score_trajectory(traj, backend, index, CFG)
        assert len(report.statements) == 10
        assert report.supported_count == 10
        assert report.score == 1.0

    def test_five_of_eight_scores_0625(self, question, backend, index):
        traj = make_reasoning_trajectory(question, REASONING_SCORE_0625, "D")
        report = score_trajectory(traj, backend, index, CFG)
        assert len(report.statements) == 8
        assert report.supported_count == 5
        assert report.score == 0.625

    def test_score_is_counts_division_done_last(self, question, backend, index):
        traj = make_reasoning_trajectory(question, REASONING_SCORE_0625, "D")
        report = score_trajectory(traj, backend, index, CFG)
        assert 0.0 <= report.score <= 1.0
        assert report.score == report.supported_count / len(report.statements)
        assert report.supported_count + report.not_supported_count == len(
            report.statements)

    def test_statements_carry_queries_and_evidence(self, question, backend, index):
        traj = make_reasoning_trajectory(question, REASONING_SCORE_06, "C")
        report = score_trajectory(traj, backend, index, CFG)
        for stmt in report.statements:
            assert stmt.queries
            assert len(stmt.queries) <= CFG.queries_per_call
            assert len(stmt.evidence) <= CFG.retrieval_top_k

    def test_disabled_scorer_rejected(self, question, backend, index):
        traj = make_reasoning_trajectory(question, REASONING_SCORE_06, "C")
        from dataclasses import replace

        with pytest.raises(ValidationError):
            score_trajectory(traj, backend, index, replace(CFG, rafs_enabled=False))

    def test_pipeline_deterministic(self, question, index):
        def run():
            backend = ScriptedBackend(rafs_rating_entries())
            traj = make_reasoning_trajectory(question, REASONING_SCORE_06, "C")
            report = score_trajectory(traj, backend, index, CFG)
            return [(s.text, s.label, tuple(e.doc_id for e in s.evidence))
                    for s in report.statements]

        assert run() == run()


class TestScoreCandidates:
    def test_scores_are_independent_of_candidate_order(self, question, index):
        trajs = [
            make_reasoning_trajectory(question, REASONING_SCORE_10, "B"),
            make_reasoning_trajectory(question, REASONING_SCORE_0625, "D"),
            make_reasoning_trajectory(question, REASONING_SCORE_06, "C"),
        ]

        def score_order(order):
            backend = ScriptedBackend(rafs_rating_entries())
            scored = score_candidates([trajs[i] for i in order], backend, index, CFG)
            return {t.final_answer: t.factuality.score for t in scored}

        assert score_order([0, 1, 2]) == score_order([2, 0, 1]) == {
            "B": 1.0, "D": 0.625, "C": 0.6}

    def test_always_supported_rater_gives_one_everywhere(self, question, index):
        backend = ScriptedBackend([
            ScriptEntry("rating", ("Supported",)),
            ScriptEntry("query_gen", ("evidence query",)),
        ])
        trajs = [
            make_reasoning_trajectory(question, REASONING_SCORE_06, "C"),
            make_reasoning_trajectory(question, REASONING_SCORE_0625, "D"),
        ]
        scored = score_candidates(trajs, backend, index, CFG)
        assert all(t.factuality.score == 1.0 for t in scored)

    def test_backend_failure_leaves_score_minus_one(self, question, index):
        # rating entries missing entirely: the report aborts per trajectory
        backend = ScriptedBackend([ScriptEntry("query_gen", ("q",))])
        traj = make_reasoning_trajectory(question, REASONING_SCORE_06, "C")
        scored = score_candidates([traj], backend, index, CFG)
        assert scored[0].factuality is None
        assert scored[0].factuality_score() == -1.0
