import logging

import pytest

from papercode.ingest import Document, DocumentKind
from papercode.kg import KnowledgeGraph, Triple, graph_from_triples
from papercode.retrieval import HashEmbeddingProvider, RetrievalIndex, build_dynamic_database
from papercode.rrag import (
    CodeArtifact,
    GenerationError,
    Intent,
    NoCodeBlock,
    Query,
    Retrieved,
    RetrievedAnswer,
    Stage,
    UnparseableQueries,
    answer_queries,
    answer_query,
    extract_code_blocks,
    fit_context,
    formulate_queries,
    generate_baseline_code,
    generate_intermediate_code,
    parse_queries,
    refine_code,
)

PAPER = Document("paper:p", DocumentKind.PAPER, "We pad every convolution.\n\nThe kernel size is 3.")
DRAFT = CodeArtifact(Stage.INTERMEDIATE, "def conv(x):\n    return x", "gpt-4o", "fp", "digest")


def hit(entry_id: int, sim: float, text: str) -> Retrieved:
    return Retrieved(entry_id, sim, "paper:p", entry_id, text)


class TestCodeBlocks:
    def test_one_block(self):
        assert extract_code_blocks("Here:\n```python\nx = 1\n```\nbye") == "x = 1"

    def test_blocks_joined(self):
        text = "```python\na = 1\n```\nand\n```\nb = 2\n```"
        assert extract_code_blocks(text) == "a = 1\n\nb = 2"

    def test_no_block(self):
        with pytest.raises(NoCodeBlock):
            extract_code_blocks("just prose")


class TestGeneration:
    def test_intermediate_prompt_has_paper_and_graph(self, scripted_gateway):
        kg = graph_from_triples([Triple("method", "conv", "Misc", "Hyperparameter", "kernel 3")])
        gateway = scripted_gateway(["```python\ndef conv(): pass\n```"])
        artifact = generate_intermediate_code(PAPER, kg, gateway)
        prompt = gateway.provider.calls[0].user_prompt
        assert "We pad every convolution." in prompt and "kernel 3" in prompt
        assert artifact.stage is Stage.INTERMEDIATE
        assert artifact.source_text == "def conv(): pass"
        assert artifact.model_id == gateway.model_for("coder")

    def test_empty_graph_still_generates(self, scripted_gateway):
        gateway = scripted_gateway(["```python\npass\n```"])
        assert generate_intermediate_code(PAPER, KnowledgeGraph(), gateway).source_text == "pass"

    def test_no_fence_fails(self, scripted_gateway):
        with pytest.raises(NoCodeBlock):
            generate_intermediate_code(PAPER, KnowledgeGraph(), scripted_gateway(["no code, sorry"]))

    def test_empty_fence_fails(self, scripted_gateway):
        with pytest.raises(NoCodeBlock):
            generate_baseline_code(PAPER, scripted_gateway(["```python\n   \n```"]))

    def test_baseline_uses_its_own_template(self, scripted_gateway):
        gateway = scripted_gateway(["```python\npass\n```"] * 2)
        baseline = generate_baseline_code(PAPER, gateway)
        intermediate = generate_intermediate_code(PAPER, KnowledgeGraph(), gateway)
        assert baseline.stage is Stage.BASELINE
        assert baseline.template_digest != intermediate.template_digest
        assert "Knowledge graph" not in gateway.provider.calls[0].user_prompt

    def test_session_tag_changes_fingerprint(self, scripted_gateway):
        gateway = scripted_gateway(["```python\npass\n```"] * 2)
        a = generate_baseline_code(PAPER, gateway, session=1)
        b = generate_baseline_code(PAPER, gateway, session=2)
        assert a.prompt_fingerprint != b.prompt_fingerprint


class TestQueries:
    def test_three_lines(self):
        text = (
            "EXPLAIN_CONCEPT | What is padding?\n"
            "IMPLEMENTATION_DETAIL | Which padding value?\n"
            "PROCEDURE_STEPS | In which order are layers applied?\n"
        )
        queries = parse_queries(text, 8)
        assert [q.query_id for q in queries] == [0, 1, 2]
        assert [q.origin for q in queries] == list(Intent)

    def test_truncated_to_max(self):
        text = "\n".join(f"{i}. IMPLEMENTATION_DETAIL | question {i}?" for i in range(10))
        queries = parse_queries(text, 8)
        assert len(queries) == 8 and queries[-1].text == "question 7?"

    def test_nothing_parseable(self):
        with pytest.raises(UnparseableQueries):
            parse_queries("I have no questions.", 8)

    def test_unknown_intent_defaults(self, caplog):
        with caplog.at_level(logging.WARNING, logger="papercode"):
            [query] = parse_queries("CURIOSITY | why?", 8)
        assert query.origin is Intent.IMPLEMENTATION_DETAIL
        assert "CURIOSITY" in caplog.text

    def test_lenient_intent_spelling(self):
        [query] = parse_queries("- procedure steps | how?", 3)
        assert query.origin is Intent.PROCEDURE_STEPS

    def test_formulate_sends_draft(self, scripted_gateway):
        gateway = scripted_gateway(["EXPLAIN_CONCEPT | What is conv?"])
        queries = formulate_queries(PAPER, DRAFT, gateway, max_queries=4)
        prompt = gateway.provider.calls[0].user_prompt
        assert DRAFT.source_text in prompt and "4" in prompt
        assert queries == [Query(0, "What is conv?", Intent.EXPLAIN_CONCEPT)]

    def test_formulate_rejects_zero_max(self, scripted_gateway):
        with pytest.raises(ValueError):
            formulate_queries(PAPER, DRAFT, scripted_gateway(["x"]), max_queries=0)


def small_index() -> RetrievalIndex:
    return build_dynamic_database(PAPER, [], HashEmbeddingProvider(32))


class TestAnswering:
    def test_answer_from_context(self, scripted_gateway):
        gateway = scripted_gateway(["Use padding=1."])
        query = Query(0, "What padding is used?", Intent.IMPLEMENTATION_DETAIL)
        answer = answer_query(query, small_index(), HashEmbeddingProvider(32), gateway, k=1)
        assert answer.answer == "Use padding=1."
        assert len(answer.retrieved) == 1
        assert answer.retrieved[0].text in gateway.provider.calls[0].user_prompt

    def test_k_larger_than_index(self, scripted_gateway):
        query = Query(0, "kernel?", Intent.EXPLAIN_CONCEPT)
        answer = answer_query(query, small_index(), HashEmbeddingProvider(32), scripted_gateway(["3"]), k=50)
        assert len(answer.retrieved) == 2

    def test_empty_database_warns(self, scripted_gateway, caplog):
        query = Query(0, "kernel?", Intent.EXPLAIN_CONCEPT)
        with caplog.at_level(logging.WARNING, logger="papercode"):
            answer = answer_query(query, RetrievalIndex(8).freeze(), HashEmbeddingProvider(8), scripted_gateway(["?"]))
        assert answer.retrieved == ()
        assert "empty" in caplog.text

    def test_blank_answer_is_error(self, scripted_gateway):
        query = Query(0, "kernel?", Intent.EXPLAIN_CONCEPT)
        with pytest.raises(GenerationError):
            answer_query(query, small_index(), HashEmbeddingProvider(32), scripted_gateway(["  "]))

    def test_answers_keep_query_order(self, scripted_gateway):
        queries = [Query(i, f"q{i}", Intent.EXPLAIN_CONCEPT) for i in range(6)]

        def script(request):
            return "answer to " + request.user_prompt.split("Question:\n", 1)[1].split("\n", 1)[0]

        answers = answer_queries(queries, small_index(), HashEmbeddingProvider(32), scripted_gateway(script))
        assert [a.answer for a in answers] == [f"answer to q{i}" for i in range(6)]


class TestContextBudget:
    def test_fits_untouched(self):
        hits = [hit(0, 0.9, "aaaa"), hit(1, 0.5, "bbbb")]
        assert fit_context(hits, 8) == hits

    def test_drops_least_similar_first(self):
        hits = [hit(0, 0.9, "aaaa"), hit(1, 0.2, "bbbb"), hit(2, 0.5, "cccc")]
        assert [h.entry_id for h in fit_context(hits, 8)] == [0, 2]

    def test_tie_drops_later_entry(self):
        hits = [hit(0, 0.5, "aaaa"), hit(1, 0.5, "bbbb")]
        assert [h.entry_id for h in fit_context(hits, 5)] == [0]

    def test_nothing_fits(self):
        assert fit_context([hit(0, 1.0, "x" * 100)], 10) == []


class TestRefine:
    def test_answers_reach_prompt(self, scripted_gateway):
        answers = [RetrievedAnswer(Query(0, "pad?", Intent.IMPLEMENTATION_DETAIL), (), "Use padding=1.")]
        gateway = scripted_gateway(["```python\ndef conv(x, padding=1):\n    return x\n```"])
        final = refine_code(DRAFT, answers, PAPER, gateway)
        prompt = gateway.provider.calls[0].user_prompt
        assert "Use padding=1." in prompt and DRAFT.source_text in prompt
        assert final.stage is Stage.FINAL and "padding=1" in final.source_text

    def test_no_answers_warns(self, scripted_gateway, caplog):
        with caplog.at_level(logging.WARNING, logger="papercode"):
            refine_code(DRAFT, [], PAPER, scripted_gateway(["```python\npass\n```"]))
        assert "without any answered questions" in caplog.text
