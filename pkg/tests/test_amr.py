import numpy as np
import pytest

from graphsel import amr
from graphsel.errors import (
    BadAlignment,
    DuplicateSentence,
    DuplicateVariable,
    MalformedPenman,
    ManifestError,
    MissingMetadata,
)

WANT = "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))"


def test_parse_single_concept():
    g = amr.parse_amr("(b / boy)")
    assert g.variables == [("b", "boy")]
    assert g.edges == []
    assert g.top == "b"


def test_parse_reentrancy():
    g = amr.parse_amr(WANT)
    assert dict(g.variables) == {"w": "want-01", "b": "boy", "g": "go-02"}
    triples = {(e.source, e.role, e.target) for e in g.edges}
    assert triples == {("w", ":ARG0", "b"), ("w", ":ARG1", "g"), ("g", ":ARG0", "b")}
    assert all(e.target_is_var for e in g.edges)
    assert g.top == "w"
    assert g.reentrancy_count() == 1  # b referenced twice


@pytest.mark.parametrize("text", [
    "(w / want-01 :ARG0",
    "(b / boy))",
    "(b boy)",
    "(b / boy :ARG0)",
    "(b /)",
    "",
    "(b / boy) stray",
])
def test_malformed_inputs(text):
    with pytest.raises(MalformedPenman):
        amr.parse_amr(text)


def test_duplicate_variable():
    with pytest.raises(DuplicateVariable):
        amr.parse_amr("(b / boy :ARG0 (b / bag))")


def test_alignment_suffixes():
    assert amr.parse_amr("(b / boy~e.1)").alignments == {"b": (1,)}
    assert amr.parse_amr("(b / boy~1)").alignments == {"b": (1,)}
    assert amr.parse_amr("(b / boy~e.1,3,2)").alignments == {"b": (1, 2, 3)}
    with pytest.raises(BadAlignment):
        amr.parse_amr("(b / boy~e.x)")


def test_constants_are_edge_targets():
    g = amr.parse_amr('(p / person :name (n / name :op1 "Rango"~e.0) :age 7 :polarity -)')
    assert set(g.var_names()) == {"p", "n"}
    by_role = {e.role: e for e in g.edges}
    assert by_role[":op1"].target == '"Rango"'
    assert not by_role[":op1"].target_is_var
    assert by_role[":op1"].target_alignment == (0,)
    assert by_role[":age"].target == "7"
    assert by_role[":polarity"].target == "-"


def test_tilde_inside_string_is_not_alignment():
    g = amr.parse_amr('(x / thing :name (n / name :op1 "a~b"))')
    edge = [e for e in g.edges if e.role == ":op1"][0]
    assert edge.target == '"a~b"'
    assert edge.target_alignment == ()


def test_serialize_trivial():
    assert amr.serialize_amr(amr.parse_amr("(b / boy)")) == "(b / boy)"


def test_serialize_keeps_alignment_format():
    out = amr.serialize_amr(amr.parse_amr("(b / boy~e.1)"))
    assert "boy~e.1" in out


def test_roundtrip_reentrant_fixture():
    g = amr.parse_amr(WANT)
    again = amr.parse_amr(amr.serialize_amr(g))
    assert amr.isomorphic(g, again)
    assert again.reentrancy_count() == g.reentrancy_count()


def random_amr(rng: np.random.Generator, index: int) -> amr.AmrGraph:
    """Seeded random graph with reentrancies, constants, inverse roles,
    and alignments; always reachable from the top."""
    concepts = ["want-01", "go-02", "boy", "city", "name", "person", "thing",
                "run-02", "see-01", "dog", "big", "quiet"]
    roles = [":ARG0", ":ARG1", ":ARG2", ":mod", ":location", ":ARG0-of",
             ":ARG1-of", ":time", ":op1"]
    n_vars = int(rng.integers(1, 8))
    variables = [(f"v{index}x{i}", concepts[int(rng.integers(len(concepts)))])
                 for i in range(n_vars)]
    edges = []
    for i in range(1, n_vars):  # spanning tree keeps everything reachable
        parent = int(rng.integers(i))
        edges.append(amr.AmrEdge(variables[parent][0],
                                 roles[int(rng.integers(len(roles)))],
                                 variables[i][0], True))
    for _ in range(int(rng.integers(0, 3))):  # extra edges create reentrancies
        a, b = rng.integers(n_vars, size=2)
        if a == b:
            continue
        edges.append(amr.AmrEdge(variables[int(a)][0],
                                 roles[int(rng.integers(len(roles)))],
                                 variables[int(b)][0], True))
    for _ in range(int(rng.integers(0, 3))):
        holder = variables[int(rng.integers(n_vars))][0]
        kind = int(rng.integers(3))
        value = ['"Rango"', "42", "-"][kind]
        align = (int(rng.integers(0, 30)),) if rng.random() < 0.5 else ()
        edges.append(amr.AmrEdge(holder, ":value", value, False, align))
    alignments = {}
    for name, _ in variables:
        if rng.random() < 0.6:
            count = int(rng.integers(1, 3))
            alignments[name] = tuple(sorted({int(i) for i in rng.integers(0, 30, count)}))
    return amr.AmrGraph(f"rand{index}", variables, edges, alignments, variables[0][0])


def test_roundtrip_random_corpus():
    rng = np.random.default_rng(42)
    for index in range(60):
        g = random_amr(rng, index)
        text = amr.serialize_amr(g)
        parsed = amr.parse_amr(text, sentence_id=g.sentence_id)
        assert amr.isomorphic(g, parsed), text
        assert parsed.reentrancy_count() == g.reentrancy_count()
        # a second round trip is stable
        assert amr.isomorphic(parsed, amr.parse_amr(amr.serialize_amr(parsed)))


BLOCK = """# ::id d1.s1
# ::snt The boy wants to go.
# ::tok The boy wants to go .
(w / want-01~e.2 :ARG0 (b / boy~e.1) :ARG1 (g / go-02~e.4 :ARG0 b))
"""


def test_parse_corpus_single_block():
    docs = amr.parse_corpus(BLOCK)
    assert len(docs) == 1
    doc = docs[0]
    sentence = doc.sentences["d1.s1"]
    assert sentence.tokens == ["The", "boy", "wants", "to", "go", "."]
    assert sentence.amr.top == "w"
    assert doc.sentence_order == ["d1.s1"]


def test_parse_corpus_missing_tok():
    bad = "# ::id s1\n# ::snt hi\n(b / boy)\n"
    with pytest.raises(MissingMetadata):
        amr.parse_corpus(bad)


def test_parse_corpus_duplicate_id():
    with pytest.raises(DuplicateSentence):
        amr.parse_corpus(BLOCK + "\n" + BLOCK)


def test_parse_corpus_alignment_out_of_range():
    bad = "# ::id s1\n# ::snt hi\n# ::tok hi\n(b / boy~e.5)\n"
    with pytest.raises(BadAlignment):
        amr.parse_corpus(bad)


def test_parse_corpus_propagates_parse_error_with_context():
    bad = "# ::id s9\n# ::snt broken\n# ::tok broken\n(w / want-01 :ARG0\n"
    with pytest.raises(MalformedPenman, match="s9"):
        amr.parse_corpus(bad)


def test_manifest_grouping():
    blocks = []
    for i in range(3):
        blocks.append(f"# ::id s{i}\n# ::snt t\n# ::tok t\n(b{i} / boy)\n")
    text = "\n".join(blocks)
    manifest = {"docA": [["p1", ["s0", "s1"]], ["p2", ["s2"]]]}
    (doc,) = amr.parse_corpus(text, manifest)
    assert doc.doc_id == "docA"
    assert doc.sentence_order == ["s0", "s1", "s2"]
    assert doc.sentence_index("s2") == 2

    with pytest.raises(ManifestError):
        amr.parse_corpus(text, {"docA": [["p1", ["missing"]]]})


def test_manifest_object_form():
    text = "# ::id s0\n# ::snt t\n# ::tok t\n(b / boy)\n"
    manifest = {"d": [{"passage_id": "p", "sentence_ids": ["s0"]}]}
    (doc,) = amr.parse_corpus(text, manifest)
    assert doc.passages == [("p", ["s0"])]


def test_format_block_roundtrip():
    docs = amr.parse_corpus(BLOCK)
    sentence = docs[0].sentences["d1.s1"]
    text = amr.format_block(sentence.sentence_id, sentence.text,
                            sentence.tokens, sentence.amr)
    again = amr.parse_corpus(text)[0].sentences["d1.s1"]
    assert amr.isomorphic(sentence.amr, again.amr)
