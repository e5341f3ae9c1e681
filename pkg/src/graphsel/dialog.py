"""Per-turn dialog-aware graphs: context nodes, links, and labels.

Each dialog turn copies the document graph and attaches one context node
per candidate knowledge sentence; the context node's embedding encodes the
candidate paired with the recent dialog history (candidate text first).
Supervision comes from the turn's gold sentence and optional gold span.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .embeddings import simple_tokenize
from .errors import MissingContextEmbedding, NoGoldLabel, UnknownSentence
from .semgraph import DocumentSemanticGraph, EdgeType, GraphEdge, NodeType

CONTEXT_WINDOW = 2  # how many most-recent turns feed the context encoding


@dataclass
class DialogTurn:
    dialog_id: str
    turn_index: int
    doc_id: str
    history: list[tuple[str, str, list[str]]]  # (speaker, text, tokens)
    candidates: list[tuple[str, str]]          # (sentence_id, text)
    gold_sentence_id: str | None = None
    gold_span: tuple[str, int, int] | None = None

    @staticmethod
    def from_json(raw: dict) -> "DialogTurn":
        history = [(h["speaker"], h["text"], simple_tokenize(h["text"]))
                   for h in raw.get("history", [])]
        candidates = [(c["sentence_id"], c["text"]) for c in raw["candidates"]]
        span = None
        if raw.get("gold_span"):
            s = raw["gold_span"]
            span = (s["sentence_id"], int(s["start"]), int(s["end"]))
        gold = raw.get("gold_sentence_id")
        if gold is None and span is not None:
            gold = span[0]
        return DialogTurn(raw["dialog_id"], int(raw["turn_index"]), raw["doc_id"],
                          history, candidates, gold, span)

    def to_json(self) -> dict:
        out = {
            "dialog_id": self.dialog_id,
            "turn_index": self.turn_index,
            "doc_id": self.doc_id,
            "history": [{"speaker": s, "text": t} for s, t, _ in self.history],
            "candidates": [{"sentence_id": sid, "text": t} for sid, t in self.candidates],
            "gold_sentence_id": self.gold_sentence_id,
        }
        if self.gold_span is not None:
            sid, start, end = self.gold_span
            out["gold_span"] = {"sentence_id": sid, "start": start, "end": end}
        return out

    @property
    def key(self) -> str:
        return f"{self.dialog_id}:{self.turn_index}"

    def has_gold(self) -> bool:
        return self.gold_sentence_id is not None or self.gold_span is not None


def load_dialogs(path) -> list[DialogTurn]:
    turns = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                turns.append(DialogTurn.from_json(json.loads(line)))
    return turns


def save_dialogs(path, turns: list[DialogTurn]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for turn in turns:
            fh.write(json.dumps(turn.to_json()) + "\n")


def _speaker_marker(speaker: str) -> str:
    return "U:" if speaker.lower().startswith("u") else "S:"


def make_context(history: list[tuple[str, str, list[str]]], window: int = CONTEXT_WINDOW) -> str:
    """Concatenate the last `window` turns, oldest first, with speaker markers."""
    if window < 1:
        raise ValueError("window must be >= 1")
    recent = history[-window:]
    return " ".join(f"{_speaker_marker(speaker)} {text}" for speaker, text, _ in recent)


def context_node_id(sentence_id: str) -> str:
    return f"ctx::{sentence_id}"


@dataclass
class LabelSet:
    positive_context_id: str
    concept_relevance: dict[str, int]


@dataclass
class DialogGraph:
    base: DocumentSemanticGraph
    dialog_id: str
    turn_index: int
    # (context node id, candidate sentence id, raw context embedding)
    context_nodes: list[tuple[str, str, np.ndarray]]
    labels: LabelSet | None = None

    def context_edges(self) -> list[GraphEdge]:
        edges = []
        for context_id, sentence_id, _ in self.context_nodes:
            edges.append(GraphEdge(context_id, EdgeType.CONTEXT_LINK, sentence_id))
            edges.append(GraphEdge(sentence_id, EdgeType.CONTEXT_LINK, context_id))
        return edges

    @property
    def candidate_sentence_ids(self) -> list[str]:
        return [sid for _, sid, _ in self.context_nodes]


def build_dialog_graph(base: DocumentSemanticGraph, turn: DialogTurn,
                       context_source, window: int = CONTEXT_WINDOW) -> DialogGraph:
    """Attach one context node per candidate.

    `context_source` either encodes texts (`encode(candidate, context)`)
    or looks vectors up from a precomputed table
    (`lookup(dialog_id, turn_index, sentence_id)`).
    """
    context_text = make_context(turn.history, window)
    context_nodes = []
    for sentence_id, candidate_text in turn.candidates:
        if not base.has_node(sentence_id):
            raise UnknownSentence(sentence_id)
        if hasattr(context_source, "lookup"):
            vector = context_source.lookup(turn.dialog_id, turn.turn_index, sentence_id)
        elif hasattr(context_source, "encode"):
            vector = context_source.encode(candidate_text, context_text)
        else:
            raise MissingContextEmbedding(
                f"context source {type(context_source).__name__} offers neither encode nor lookup")
        context_nodes.append((context_node_id(sentence_id), sentence_id,
                              np.asarray(vector, dtype=np.float64)))
    return DialogGraph(base, turn.dialog_id, turn.turn_index, context_nodes)


def derive_labels(turn: DialogTurn, base: DocumentSemanticGraph) -> LabelSet:
    """Positive context node plus concept relevance from the gold span.

    A concept counts as relevant when any of its provenance mentions lies
    fully inside the gold span.  Turns with a gold sentence but no span
    treat the whole sentence as the span.
    """
    if not turn.has_gold():
        raise NoGoldLabel(turn.key)
    if turn.gold_span is not None:
        gold_sid, start, end = turn.gold_span
    else:
        gold_sid, start, end = turn.gold_sentence_id, 0, None

    relevance: dict[str, int] = {}
    for node in base.concept_nodes():
        hit = any(
            mention.sentence_id == gold_sid
            and mention.start >= start
            and (end is None or mention.end <= end)
            for mention in node.mentions
        )
        relevance[node.node_id] = 1 if hit else 0
    positive = turn.gold_sentence_id if turn.gold_sentence_id is not None else gold_sid
    return LabelSet(context_node_id(positive), relevance)
