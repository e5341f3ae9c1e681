"""Seeded synthetic corpus generator for selection experiments.

Documents plant entities with two aliases each: an "anchor" sentence
introduces the entity under its primary alias and a "detail" sentence
continues under the secondary alias.  Coreference clusters tie the two
mentions together.  Each dialog turn mentions an entity's primary alias
and must select that entity's detail sentence from the pool of detail
sentences, which by construction shares no surface token with the dialog
context: only the merged concept node bridges the two, so the graph
structure is the sole route to the gold sentence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .amr import CorpusDocument, format_block, parse_corpus
from .dialog import CONTEXT_WINDOW, DialogTurn, make_context, save_dialogs
from .embeddings import HashedContextEncoder, HashedEncoder, write_embedding_file

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SynthConfig:
    docs: int = 5
    sentences_per_doc: int = 8      # two sentences per planted entity
    vocab: int = 4000               # cap on distinct pseudo-words
    coref_rate: float = 1.0
    dim: int = 32                   # embedding width written to files

    @property
    def entities_per_doc(self) -> int:
        return max(1, self.sentences_per_doc // 2)


class _WordMint:
    """Unique pseudo-words; uniqueness keeps planted lexical signals clean."""

    def __init__(self, rng: np.random.Generator, limit: int):
        self.rng = rng
        self.limit = limit
        self.used: set[str] = set()

    def word(self) -> str:
        for _ in range(1000):
            syllables = int(self.rng.integers(2, 4))
            word = "".join(
                _CONSONANTS[int(self.rng.integers(len(_CONSONANTS)))]
                + _VOWELS[int(self.rng.integers(len(_VOWELS)))]
                for _ in range(syllables)
            )
            if word not in self.used:
                if len(self.used) >= self.limit:
                    raise ValueError("vocabulary cap exhausted")
                self.used.add(word)
                return word
        raise ValueError("could not mint a fresh word")


@dataclass
class SyntheticDataset:
    documents: list[CorpusDocument]
    corpus_text: str
    manifest: dict
    corefs: list[dict]
    dialogs: list[DialogTurn]
    embedding_records: dict
    context_records: dict
    dim: int

    def coref_for(self, doc_id: str) -> dict:
        for entry in self.corefs:
            if entry["doc_id"] == doc_id:
                return entry
        raise KeyError(doc_id)

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": out / "corpus.amr",
            "manifest": out / "manifest.json",
            "coref": out / "coref.json",
            "dialogs": out / "dialogs.jsonl",
            "embeddings": out / "embeddings.bin",
            "context_embeddings": out / "context_embeddings.bin",
        }
        paths["corpus"].write_text(self.corpus_text, encoding="utf-8")
        paths["manifest"].write_text(json.dumps(self.manifest, indent=1), encoding="utf-8")
        paths["coref"].write_text(json.dumps(self.corefs, indent=1), encoding="utf-8")
        save_dialogs(paths["dialogs"], self.dialogs)
        write_embedding_file(paths["embeddings"], self.embedding_records, self.dim)
        write_embedding_file(paths["context_embeddings"], self.context_records, self.dim)
        return paths


def _anchor_block(sid: str, alias: list[str], verb: str, obj: str) -> tuple[str, list[str]]:
    tokens = alias + [verb, obj]
    op_parts = " ".join(f':op{i + 1} "{w}"~e.{i}' for i, w in enumerate(alias))
    graph = (f"(v / {verb}-01~e.{len(alias)} "
             f":ARG0 (p / person :name (n / name {op_parts})) "
             f":ARG1 (o / {obj}~e.{len(alias) + 1}))")
    return graph, tokens


def _detail_block(sid: str, alias: str, verb: str, obj: str) -> tuple[str, list[str]]:
    tokens = [alias, verb, obj]
    graph = (f"(v / {verb}-01~e.1 :ARG0 (p / person~e.0) "
             f":ARG1 (o / {obj}~e.2))")
    return graph, tokens


def gen_synthetic(seed: int, config: SynthConfig | None = None) -> SyntheticDataset:
    """Deterministic dataset: same seed, same bytes."""
    config = config or SynthConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD0C5]))
    mint = _WordMint(rng, config.vocab)

    blocks: list[str] = []
    manifest: dict[str, list] = {}
    corefs: list[dict] = []
    dialogs: list[DialogTurn] = []
    token_map: dict[str, list[str]] = {}

    for doc_index in range(config.docs):
        doc_id = f"doc{doc_index}"
        sentence_ids: list[str] = []
        clusters = []
        details: list[tuple[str, str]] = []   # (sentence_id, text) candidate pool
        entities = []
        for ent in range(config.entities_per_doc):
            primary = [mint.word(), mint.word()]
            secondary = mint.word()
            anchor_sid = f"{doc_id}.s{2 * ent}"
            detail_sid = f"{doc_id}.s{2 * ent + 1}"
            a_graph, a_tokens = _anchor_block(anchor_sid, primary, mint.word(), mint.word())
            d_graph, d_tokens = _detail_block(detail_sid, secondary, mint.word(), mint.word())
            blocks.append(f"# ::id {anchor_sid}\n# ::snt {' '.join(a_tokens)}\n"
                          f"# ::tok {' '.join(a_tokens)}\n{a_graph}\n")
            blocks.append(f"# ::id {detail_sid}\n# ::snt {' '.join(d_tokens)}\n"
                          f"# ::tok {' '.join(d_tokens)}\n{d_graph}\n")
            token_map[anchor_sid] = a_tokens
            token_map[detail_sid] = d_tokens
            sentence_ids.extend([anchor_sid, detail_sid])
            details.append((detail_sid, " ".join(d_tokens)))
            entities.append((primary, secondary, anchor_sid, detail_sid))
            if rng.random() < config.coref_rate:
                clusters.append([
                    {"sentence_id": anchor_sid, "start": 0, "end": len(primary)},
                    {"sentence_id": detail_sid, "start": 0, "end": 1},
                ])
        manifest[doc_id] = [["p0", sentence_ids]]
        corefs.append({"doc_id": doc_id, "clusters": clusters})

        for ent, (primary, _, _, detail_sid) in enumerate(entities):
            opener = f"{mint.word()} {mint.word()}"
            asking = f"{mint.word()} {' '.join(primary)} {mint.word()}"
            turn = DialogTurn(
                dialog_id=f"dlg{doc_index}",
                turn_index=ent,
                doc_id=doc_id,
                history=[("system", opener, opener.split()),
                         ("user", asking, asking.split())],
                candidates=list(details),
                gold_sentence_id=detail_sid,
                gold_span=(detail_sid, 0, len(token_map[detail_sid])),
            )
            dialogs.append(turn)

    corpus_text = "\n".join(blocks)
    documents = parse_corpus(corpus_text, manifest)

    encoder = HashedEncoder(config.dim, seed=seed + 1)
    embedding_records = {}
    for doc in documents:
        for sid, sentence in doc.sentences.items():
            cls, tokens = encoder.sentence(sentence.tokens)
            embedding_records[sid] = (cls, tokens)

    context_encoder = HashedContextEncoder(config.dim, seed=seed + 1)
    context_records = {}
    for turn in dialogs:
        context_text = make_context(turn.history, CONTEXT_WINDOW)
        for sid, text in turn.candidates:
            key = f"{turn.dialog_id}:{turn.turn_index}:{sid}"
            context_records[key] = (context_encoder.encode(text, context_text), None)

    return SyntheticDataset(documents, corpus_text, manifest, corefs, dialogs,
                            embedding_records, context_records, config.dim)
