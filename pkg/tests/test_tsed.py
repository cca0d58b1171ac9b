import logging
import random

import pytest
from treegen import chain, random_tree, random_weights

from papercode.tsed import (
    DEFAULT_WEIGHTS,
    EditWeights,
    ResourceLimit,
    SizeLimit,
    SourceSyntaxError,
    Tree,
    UnknownGrammar,
    available_grammars,
    brute_force_ted,
    compare_sources,
    node_count,
    parse_to_tree,
    tree_edit_distance,
    tsed_score,
)

W = DEFAULT_WEIGHTS


class TestTree:
    def test_node_count(self):
        assert node_count(None) == 0
        assert node_count(Tree("a")) == 1
        assert node_count(Tree.parse("a(b,c)")) == 3

    def test_compact_notation_round_trip(self):
        text = "a(b(c,d),e,f(g))"
        assert Tree.parse(text).to_sexpr() == text
        assert Tree.parse("") is None

    def test_bad_notation(self):
        with pytest.raises(ValueError):
            Tree.parse("a(b")

    def test_empty_label_rejected(self):
        with pytest.raises(ValueError):
            Tree("")


class TestEditWeights:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            EditWeights(-1, 0.7, 0.1)

    def test_parse_and_render(self):
        w = EditWeights.parse("4,0.7,0.1")
        assert w == DEFAULT_WEIGHTS
        assert w.render() == "(4,0.7,0.1)"
        assert EditWeights.parse("(1.7, 0.7, 0.1)").as_tuple() == (1.7, 0.7, 0.1)

    def test_ordering_warns_but_does_not_fail(self, caplog):
        with caplog.at_level(logging.WARNING, logger="papercode"):
            assert EditWeights(4, 0.7, 1).check_ordering() is False
        assert "delete > insert > rename" in caplog.text
        assert DEFAULT_WEIGHTS.check_ordering() is True

    def test_swapped(self):
        assert EditWeights(4, 0.7, 0.1).swapped() == EditWeights(0.7, 4, 0.1)


class TestTreeEditDistance:
    def test_identical_is_zero(self):
        t = Tree.parse("a(b(c),d)")
        assert tree_edit_distance(t, t, EditWeights(3, 2, 1)) == 0

    def test_empty_origin_only_inserts(self):
        target = Tree.parse("a(b,c,d,e,f,g,h,i,j)")
        assert tree_edit_distance(None, target, EditWeights(4, 0.7, 0.1)) == pytest.approx(7.0, abs=1e-12)

    def test_single_rename(self):
        assert tree_edit_distance(Tree.parse("a(b,c)"), Tree.parse("a(b,d)"), W) == pytest.approx(0.1)

    def test_chain_vs_single(self):
        assert tree_edit_distance(Tree.parse("a(b(c))"), Tree("d"), W) == pytest.approx(8.1)

    def test_delete_splices_children(self):
        # deleting b lifts c and d into a
        assert tree_edit_distance(Tree.parse("a(b(c,d))"), Tree.parse("a(c,d)"), W) == pytest.approx(4.0)
        assert tree_edit_distance(Tree.parse("a(c,d)"), Tree.parse("a(b(c,d))"), W) == pytest.approx(0.7)

    def test_resource_limit(self):
        big = Tree("r", tuple(Tree("x") for _ in range(2999)))
        with pytest.raises(ResourceLimit):
            tree_edit_distance(big, big, W)
        assert tree_edit_distance(big, Tree("r"), W, pair_limit=None) == pytest.approx(2999 * 4)

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            tree_edit_distance(Tree("a"), Tree("b"), W, backend="fortran")

    def test_backends_agree(self):
        rng = random.Random(11)
        for _ in range(20):
            a, b = random_tree(rng, 40), random_tree(rng, 40)
            w = random_weights(rng)
            if a is None or b is None:
                continue
            py = tree_edit_distance(a, b, w, backend="python")
            nb = tree_edit_distance(a, b, w, backend="numba")
            assert nb == pytest.approx(py, abs=1e-9)

    def test_zero_rename_equal_shape(self):
        a, b = Tree.parse("a(b,c(d))"), Tree.parse("w(x,y(z))")
        assert tree_edit_distance(a, b, EditWeights(4, 0.7, 0)) == 0


class TestOracle:
    def test_examples(self):
        t = Tree.parse("a(b,c)")
        assert brute_force_ted(t, t, W) == 0
        assert brute_force_ted(Tree("a"), Tree("b"), W) == pytest.approx(0.1)
        assert brute_force_ted(Tree.parse("a(b(c))"), Tree("d"), W) == pytest.approx(8.1)
        assert brute_force_ted(chain("abcde"), Tree("f"), W) == pytest.approx(16.1)

    def test_size_limit(self):
        with pytest.raises(SizeLimit):
            brute_force_ted(chain("abcdefgh"), Tree("a"), W)

    def test_agrees_with_fast_algorithm_sample(self):
        rng = random.Random(3)
        for _ in range(100):
            a, b = random_tree(rng, 5), random_tree(rng, 5)
            w = random_weights(rng)
            assert tree_edit_distance(a, b, w) == pytest.approx(brute_force_ted(a, b, w), abs=1e-9)


class TestTsedScore:
    def test_identity(self):
        t = Tree.parse("a(b,c(d))")
        assert tsed_score(t, t, W).tsed == 1.0

    def test_empty_vs_ten(self):
        result = tsed_score(None, Tree.parse("a(b,c,d,e,f,g,h,i,j)"), W)
        assert result.ted == 7.0
        assert result.max_nodes == 10
        assert result.tsed == 0.3

    def test_clamped(self):
        result = tsed_score(chain("abcde"), Tree("f"), W)
        assert result.ted == pytest.approx(16.1)
        assert result.tsed == 0.0

    def test_both_empty(self):
        assert tsed_score(None, None, W).tsed == 1.0

    def test_direction_and_percent(self):
        result = tsed_score(Tree("a"), Tree("b"), W)
        assert (result.origin, result.target) == ("generated", "ground_truth")
        assert result.tsed_percent == pytest.approx(90.0)


class TestParsing:
    def test_python_registered(self):
        assert "python" in available_grammars()

    def test_pinned_shape(self):
        tree = parse_to_tree("x = 1")
        assert tree.to_sexpr() == "module(expression_statement(assignment(identifier:x,=:=,integer:1)))"

    def test_deterministic(self):
        source = "def f(a, b=2):\n    return a + b\n"
        assert parse_to_tree(source) == parse_to_tree(source)

    def test_syntax_error_has_position(self):
        with pytest.raises(SourceSyntaxError) as info:
            parse_to_tree("def f(:")
        assert info.value.line == 1

    def test_unknown_grammar(self):
        with pytest.raises(UnknownGrammar):
            parse_to_tree("x", "cobol")


class TestCompareSources:
    def test_self_similarity(self):
        source = "import os\n\nprint(os.getcwd())\n"
        assert compare_sources(source, source).tsed == 1.0

    def test_generated_side_identified(self):
        with pytest.raises(SourceSyntaxError) as info:
            compare_sources("def f(:", "x = 1")
        assert info.value.side == "generated"

    def test_ground_truth_side_identified(self):
        with pytest.raises(SourceSyntaxError) as info:
            compare_sources("x = 1", "def f(:")
        assert info.value.side == "ground_truth"

    def test_duality_on_sources(self):
        gen, truth = "x = 1\ny = 2\n", "x = 1\n"
        w = EditWeights(4, 0.7, 0.1)
        forward = compare_sources(gen, truth, weights=w).ted
        backward = compare_sources(truth, gen, weights=w.swapped()).ted
        assert forward == pytest.approx(backward, abs=1e-9)

    def test_hallucinated_code_costs_deletions(self):
        # extra generated content is deleted (d), missing content is inserted (i)
        extra = compare_sources("x = 1\ny = 2\n", "x = 1\n").ted
        missing = compare_sources("x = 1\n", "x = 1\ny = 2\n").ted
        assert extra > missing
