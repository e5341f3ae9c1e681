"""PENMAN notation parsing and serialization for sentence-level AMR graphs.

Supports token alignments in both the `~e.1,2` and bare `~1,2` suffix forms
on concepts and constants.  Reentrancies stay repeated variable references;
constants (quoted strings, numbers, `-` polarity, bare symbols that are
never defined as variables) are edge targets, not nodes.  Role labels are
kept verbatim; inverse `-of` roles are normalized later, at graph build
time, so the parser remains a faithful reader.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import (
    BadAlignment,
    DuplicateSentence,
    DuplicateVariable,
    MalformedPenman,
    ManifestError,
    MissingMetadata,
)

_ALIGN_RE = re.compile(r"^(?:e\.)?(\d+(?:,\d+)*)$")


@dataclass
class AmrEdge:
    source: str
    role: str
    target: str
    target_is_var: bool
    # alignments on constant targets; variable alignments live on the graph
    target_alignment: tuple[int, ...] = ()


@dataclass
class AmrGraph:
    """One sentence's AMR: concepts, typed role edges, alignments, top."""

    sentence_id: str
    variables: list[tuple[str, str]]
    edges: list[AmrEdge]
    alignments: dict[str, tuple[int, ...]]
    top: str

    def concept_of(self, var: str) -> str:
        for name, concept in self.variables:
            if name == var:
                return concept
        raise KeyError(var)

    def var_names(self) -> set[str]:
        return {name for name, _ in self.variables}

    def reentrancy_count(self) -> int:
        """Variables referenced two or more times as edge endpoints."""
        seen: dict[str, int] = {name: 0 for name, _ in self.variables}
        for edge in self.edges:
            if edge.target_is_var:
                seen[edge.target] += 1
        if self.top in seen:
            seen[self.top] += 1
        return sum(1 for count in seen.values() if count >= 2)

    def validate(self) -> None:
        names = [name for name, _ in self.variables]
        if len(names) != len(set(names)):
            raise DuplicateVariable(f"{self.sentence_id}: duplicate variable names")
        known = set(names)
        if self.top not in known:
            raise MalformedPenman(f"{self.sentence_id}: top {self.top!r} is not a variable")
        for edge in self.edges:
            if edge.source not in known:
                raise MalformedPenman(f"{self.sentence_id}: edge source {edge.source!r} undefined")
            if edge.target_is_var and edge.target not in known:
                raise MalformedPenman(f"{self.sentence_id}: edge target {edge.target!r} undefined")
        for var, indices in self.alignments.items():
            if var not in known:
                raise BadAlignment(f"{self.sentence_id}: alignment for unknown variable {var!r}")
            if any(i < 0 for i in indices):
                raise BadAlignment(f"{self.sentence_id}: negative alignment index on {var!r}")


# --- tokenizer ---

_LPAREN = "("
_RPAREN = ")"
_SLASH = "/"


def _tokenize(text: str) -> list[tuple[str, str]]:
    """Yield (kind, value) with kinds: ( ) / role string atom."""
    tokens: list[tuple[str, str]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()/":
            tokens.append((ch, ch))
            i += 1
        elif ch == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 1
            if j >= n:
                raise MalformedPenman("unterminated string literal")
            j += 1
            # alignment suffix may follow the closing quote
            k = j
            while k < n and not text[k].isspace() and text[k] not in "()/":
                k += 1
            tokens.append(("string", text[i:k]))
            i = k
        elif ch == ":":
            j = i + 1
            while j < n and not text[j].isspace() and text[j] not in "()/":
                j += 1
            if j == i + 1:
                raise MalformedPenman("empty role label")
            tokens.append(("role", text[i:j]))
            i = j
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()/":
                j += 1
            tokens.append(("atom", text[i:j]))
            i = j
    return tokens


def _split_alignment(token: str) -> tuple[str, tuple[int, ...]]:
    """Strip a trailing `~e.i,j` / `~i,j` suffix and return (body, indices)."""
    start = 0
    if token.startswith('"'):
        closing = token.find('"', 1)
        start = closing + 1 if closing > 0 else len(token)
    cut = token.find("~", start)
    if cut < 0:
        return token, ()
    body, suffix = token[:cut], token[cut + 1:]
    if not body:
        raise MalformedPenman(f"bare alignment suffix {token!r}")
    match = _ALIGN_RE.match(suffix)
    if match is None:
        raise BadAlignment(f"unparseable alignment suffix on {token!r}")
    return body, tuple(int(part) for part in match.group(1).split(","))


# --- parser ---

class _Parser:
    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.pos = 0
        self.variables: list[tuple[str, str]] = []
        self.alignments: dict[str, list[int]] = {}
        # (source, role, raw target token, alignment) resolved after parsing
        self.raw_edges: list[tuple[str, str, str, tuple[int, ...]]] = []

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, kind: str | None = None) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise MalformedPenman("unexpected end of input")
        if kind is not None and tok[0] != kind:
            raise MalformedPenman(f"expected {kind!r}, found {tok[1]!r}")
        self.pos += 1
        return tok

    def parse_node(self) -> str:
        self.take(_LPAREN)
        _, var_token = self.take("atom")
        var, var_align = _split_alignment(var_token)
        self.take(_SLASH)
        _, concept_token = self.take("atom")
        concept, concept_align = _split_alignment(concept_token)
        if any(var == name for name, _ in self.variables):
            raise DuplicateVariable(f"variable {var!r} defined twice")
        self.variables.append((var, concept))
        for idx in var_align + concept_align:
            self.alignments.setdefault(var, []).append(idx)

        while True:
            tok = self.peek()
            if tok is None:
                raise MalformedPenman("unbalanced parentheses")
            kind, value = tok
            if kind == _RPAREN:
                self.take()
                return var
            if kind != "role":
                raise MalformedPenman(f"expected role or ')', found {value!r}")
            self.take()
            role, _ = _split_alignment(value)  # alignments on roles are dropped
            nxt = self.peek()
            if nxt is None:
                raise MalformedPenman(f"role {role!r} has no target")
            if nxt[0] == _LPAREN:
                child = self.parse_node()
                self.raw_edges.append((var, role, child, ()))
            elif nxt[0] in ("atom", "string"):
                self.take()
                body, align = _split_alignment(nxt[1])
                self.raw_edges.append((var, role, body, align))
            else:
                raise MalformedPenman(f"role {role!r} has no target")


def parse_amr(text: str, sentence_id: str = "") -> AmrGraph:
    """Parse one PENMAN s-expression into an AmrGraph."""
    tokens = _tokenize(text)
    if not tokens:
        raise MalformedPenman("empty input")
    parser = _Parser(tokens)
    top = parser.parse_node()
    if parser.peek() is not None:
        raise MalformedPenman(f"trailing content after graph: {parser.peek()[1]!r}")

    defined = {name for name, _ in parser.variables}
    edges: list[AmrEdge] = []
    for source, role, target, align in parser.raw_edges:
        if target in defined and not target.startswith('"'):
            # reentrant reference; alignments on references fold into the variable
            for idx in align:
                parser.alignments.setdefault(target, []).append(idx)
            edges.append(AmrEdge(source, role, target, True))
        else:
            edges.append(AmrEdge(source, role, target, False, align))

    alignments = {
        var: tuple(sorted(set(indices)))
        for var, indices in parser.alignments.items()
    }
    graph = AmrGraph(sentence_id, parser.variables, edges, alignments, top)
    graph.validate()
    return graph


# --- serializer ---

def _align_suffix(indices: tuple[int, ...]) -> str:
    if not indices:
        return ""
    return "~e." + ",".join(str(i) for i in indices)


def serialize_amr(graph: AmrGraph) -> str:
    """Emit PENMAN text; parse_amr of the result is isomorphic to `graph`.

    Each variable is defined at its first reachable occurrence in a
    depth-first walk from the top; later references come out bare.
    """
    graph.validate()
    concept = dict(graph.variables)
    children: dict[str, list[AmrEdge]] = {name: [] for name, _ in graph.variables}
    for edge in graph.edges:
        children[edge.source].append(edge)

    emitted: set[str] = set()

    def render(var: str) -> str:
        emitted.add(var)
        suffix = _align_suffix(graph.alignments.get(var, ()))
        parts = [f"({var} / {concept[var]}{suffix}"]
        for edge in children[var]:
            if edge.target_is_var:
                if edge.target in emitted:
                    target = edge.target
                else:
                    target = render(edge.target)
            else:
                target = edge.target + _align_suffix(edge.target_alignment)
            parts.append(f"{edge.role} {target}")
        return " ".join(parts) + ")"

    text = render(graph.top)
    unreachable = graph.var_names() - emitted
    if unreachable:
        raise ValueError(f"unreachable variables, cannot serialize: {sorted(unreachable)}")
    return text


def isomorphic(a: AmrGraph, b: AmrGraph) -> bool:
    """Same variable/concept/edge/alignment sets and the same top."""
    def canon(g: AmrGraph):
        return (
            sorted(g.variables),
            sorted((e.source, e.role, e.target, e.target_is_var, tuple(e.target_alignment))
                   for e in g.edges),
            sorted((v, idx) for v, idx in g.alignments.items() if idx),
            g.top,
        )

    return canon(a) == canon(b)


# --- corpus files ---

@dataclass
class Sentence:
    sentence_id: str
    text: str
    tokens: list[str]
    amr: AmrGraph


@dataclass
class CorpusDocument:
    doc_id: str
    passages: list[tuple[str, list[str]]]
    sentences: dict[str, Sentence]

    @property
    def sentence_order(self) -> list[str]:
        return [sid for _, sids in self.passages for sid in sids]

    def sentence_index(self, sentence_id: str) -> int:
        return self.sentence_order.index(sentence_id)


def _parse_block(block: str) -> Sentence:
    meta: dict[str, str] = {}
    graph_lines: list[str] = []
    for line in block.splitlines():
        stripped = line.strip()
        if stripped.startswith("# ::"):
            body = stripped[4:]
            tag, _, value = body.partition(" ")
            if tag in ("id", "snt", "tok") and tag not in meta:
                meta[tag] = value.strip()
        elif stripped.startswith("#"):
            continue
        elif stripped:
            graph_lines.append(stripped)

    missing = [tag for tag in ("id", "snt", "tok") if tag not in meta]
    if missing:
        raise MissingMetadata(f"block missing metadata line(s): {', '.join(missing)}")
    if not graph_lines:
        raise MalformedPenman(f"sentence {meta['id']!r}: no graph in block")

    sentence_id = meta["id"]
    tokens = meta["tok"].split()
    try:
        amr = parse_amr(" ".join(graph_lines), sentence_id=sentence_id)
    except (MalformedPenman, DuplicateVariable, BadAlignment) as exc:
        raise type(exc)(f"sentence {sentence_id!r}: {exc}") from exc

    limit = len(tokens)
    used = [i for indices in amr.alignments.values() for i in indices]
    used += [i for e in amr.edges for i in e.target_alignment]
    for index in used:
        if index >= limit:
            raise BadAlignment(
                f"sentence {sentence_id!r}: alignment index {index} >= {limit} tokens")
    return Sentence(sentence_id, meta["snt"], tokens, amr)


def parse_corpus(text: str, manifest: dict | None = None) -> list[CorpusDocument]:
    """Read blank-line-separated sentence blocks, group them per manifest.

    The manifest maps doc_id to an ordered list of passages; each passage
    is either ["passage_id", [sentence_ids]] or an object with passage_id
    and sentence_ids keys.  Without a manifest all sentences form one
    document with a single passage, in file order.
    """
    sentences: dict[str, Sentence] = {}
    for chunk in re.split(r"\n\s*\n", text):
        if not chunk.strip():
            continue
        sentence = _parse_block(chunk)
        if sentence.sentence_id in sentences:
            raise DuplicateSentence(f"sentence id {sentence.sentence_id!r} appears twice")
        sentences[sentence.sentence_id] = sentence

    if manifest is None:
        order = list(sentences)
        return [CorpusDocument("doc", [("p0", order)], dict(sentences))]

    documents = []
    for doc_id, passages_raw in manifest.items():
        passages: list[tuple[str, list[str]]] = []
        doc_sentences: dict[str, Sentence] = {}
        for entry in passages_raw:
            if isinstance(entry, dict):
                passage_id, sids = entry["passage_id"], list(entry["sentence_ids"])
            else:
                passage_id, sids = entry[0], list(entry[1])
            for sid in sids:
                if sid not in sentences:
                    raise ManifestError(f"doc {doc_id!r}: unknown sentence id {sid!r}")
                if sid in doc_sentences:
                    raise ManifestError(f"doc {doc_id!r}: sentence {sid!r} listed twice")
                doc_sentences[sid] = sentences[sid]
            passages.append((passage_id, sids))
        documents.append(CorpusDocument(doc_id, passages, doc_sentences))
    return documents


def load_corpus(corpus_path, manifest_path=None) -> list[CorpusDocument]:
    with open(corpus_path, "r", encoding="utf-8") as fh:
        text = fh.read()
    manifest = None
    if manifest_path is not None:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    return parse_corpus(text, manifest)


def format_block(sentence_id: str, text: str, tokens: list[str], graph: AmrGraph) -> str:
    """Render one corpus block (metadata lines plus the PENMAN graph)."""
    return (
        f"# ::id {sentence_id}\n"
        f"# ::snt {text}\n"
        f"# ::tok {' '.join(tokens)}\n"
        f"{serialize_amr(graph)}\n"
    )
