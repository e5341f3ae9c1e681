import numpy as np
import pytest

from graphsel import amr, dialog, semgraph as sg
from graphsel.embeddings import HashedContextEncoder, write_embedding_file, PrecomputedContextSource
from graphsel.errors import MissingContextEmbedding, NoGoldLabel, UnknownSentence

from test_semgraph import CORPUS, MANIFEST, CLUSTER


def make_base():
    doc = amr.parse_corpus(CORPUS, MANIFEST)[0]
    return sg.build_document_graph(doc, sg.CorefClusters.from_json(CLUSTER))


def make_turn(**overrides):
    raw = {
        "dialog_id": "d0",
        "turn_index": 3,
        "doc_id": "doc1",
        "history": [
            {"speaker": "system", "text": "welcome"},
            {"speaker": "user", "text": "tell me about rango"},
            {"speaker": "system", "text": "he is a lizard"},
        ],
        "candidates": [
            {"sentence_id": "s1", "text": "Rango the lizard visits a quiet town."},
            {"sentence_id": "s2", "text": "He fights the drought bravely."},
        ],
        "gold_sentence_id": "s2",
        "gold_span": {"sentence_id": "s2", "start": 0, "end": 6},
    }
    raw.update(overrides)
    return dialog.DialogTurn.from_json(raw)


def test_make_context_window():
    history = [(f"u{i % 2}", f"turn {i}", []) for i in range(5)]
    history = [("user" if i % 2 else "system", f"turn {i}", []) for i in range(5)]
    out = dialog.make_context(history, window=2)
    assert out == "U: turn 3 S: turn 4"
    assert dialog.make_context(history[:1], window=2) == "S: turn 0"
    assert dialog.make_context([], window=2) == ""
    with pytest.raises(ValueError):
        dialog.make_context(history, window=0)


def test_build_dialog_graph_counts():
    base = make_base()
    graph = dialog.build_dialog_graph(base, make_turn(), HashedContextEncoder(8, seed=1))
    assert len(graph.context_nodes) == 2
    edges = graph.context_edges()
    assert len(edges) == 4
    link_pairs = {(e.src, e.dst) for e in edges}
    assert ("ctx::s1", "s1") in link_pairs and ("s1", "ctx::s1") in link_pairs
    assert all(e.edge_type is sg.EdgeType.CONTEXT_LINK for e in edges)


def test_build_dialog_graph_unknown_sentence():
    base = make_base()
    turn = make_turn(candidates=[{"sentence_id": "s99", "text": "x"}])
    with pytest.raises(UnknownSentence, match="s99"):
        dialog.build_dialog_graph(base, turn, HashedContextEncoder(8))


def test_build_dialog_graph_precomputed(tmp_path):
    base = make_base()
    turn = make_turn()
    path = tmp_path / "ctx.bin"
    records = {
        f"d0:3:{sid}": (np.full(8, float(i)), None)
        for i, sid in enumerate(["s1", "s2"])
    }
    write_embedding_file(path, records, dim=8)
    source = PrecomputedContextSource(path)
    graph = dialog.build_dialog_graph(base, turn, source)
    np.testing.assert_array_equal(graph.context_nodes[1][2], np.full(8, 1.0))

    missing = make_turn(turn_index=9)
    with pytest.raises(MissingContextEmbedding):
        dialog.build_dialog_graph(base, missing, source)


def test_context_encoder_deterministic():
    enc = HashedContextEncoder(8, seed=5)
    a = enc.encode("some candidate", "U: hello S: hi")
    b = HashedContextEncoder(8, seed=5).encode("some candidate", "U: hello S: hi")
    np.testing.assert_array_equal(a, b)
    c = enc.encode("another candidate", "U: hello S: hi")
    assert not np.array_equal(a, c)


def test_derive_labels_span_containment():
    base = make_base()
    labels = dialog.derive_labels(make_turn(), base)
    assert labels.positive_context_id == "ctx::s2"
    merged = sg.concept_node_id("s1", "p")  # one mention inside the span, one outside
    assert labels.concept_relevance[merged] == 1
    drought = sg.concept_node_id("s2", "d")
    assert labels.concept_relevance[drought] == 1
    town = sg.concept_node_id("s1", "t")  # only mention is in s1, span is in s2
    assert labels.concept_relevance[town] == 0
    assert set(labels.concept_relevance.values()) <= {0, 1}
    assert len(labels.concept_relevance) == len(base.concept_nodes())


def test_derive_labels_partial_span():
    base = make_base()
    turn = make_turn(gold_span={"sentence_id": "s2", "start": 2, "end": 4})
    labels = dialog.derive_labels(turn, base)
    assert labels.concept_relevance[sg.concept_node_id("s2", "d")] == 1
    assert labels.concept_relevance[sg.concept_node_id("s1", "p")] == 0  # he-span [0,1) outside


def test_derive_labels_whole_sentence_when_no_span():
    base = make_base()
    turn = make_turn(gold_span=None)
    labels = dialog.derive_labels(turn, base)
    assert labels.positive_context_id == "ctx::s2"
    assert labels.concept_relevance[sg.concept_node_id("s2", "d")] == 1


def test_derive_labels_requires_gold():
    base = make_base()
    turn = make_turn(gold_sentence_id=None, gold_span=None)
    with pytest.raises(NoGoldLabel):
        dialog.derive_labels(turn, base)


def test_labels_ignore_history():
    base = make_base()
    a = dialog.derive_labels(make_turn(), base)
    b = dialog.derive_labels(make_turn(history=[{"speaker": "user", "text": "zzz"}]), base)
    assert a == b


def test_dialog_jsonl_roundtrip(tmp_path):
    turns = [make_turn(), make_turn(turn_index=5, gold_span=None)]
    path = tmp_path / "dialogs.jsonl"
    dialog.save_dialogs(path, turns)
    again = dialog.load_dialogs(path)
    assert [t.to_json() for t in again] == [t.to_json() for t in turns]
    assert again[0].key == "d0:3"
