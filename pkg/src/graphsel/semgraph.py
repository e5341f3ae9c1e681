"""Document semantic graphs built from sentence AMRs and coreference.

Concept nodes come from AMR variables; coreferential mentions merge into a
single node that keeps the longest mention as its canonical name.
Structural nodes (one source node per passage, one sentence node per
sentence) tie the content graph to the document layout: sentences chain in
narrative order, every concept links back to its sentence(s), and every
directed edge carries a paired inverse so attention can flow both ways.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .amr import AmrGraph, CorpusDocument
from .errors import MissingEmbedding

log = logging.getLogger(__name__)


class NodeType(Enum):
    SOURCE = "source"
    SENTENCE = "sentence"
    CONCEPT = "concept"
    CONTEXT = "context"


class EdgeType(Enum):
    ARG0 = "arg0"
    ARG1 = "arg1"
    ARG2 = "arg2"
    ARG3 = "arg3"
    ARG4 = "arg4"
    ARG5 = "arg5"
    ARG0_INV = "arg0_inv"
    ARG1_INV = "arg1_inv"
    ARG2_INV = "arg2_inv"
    ARG3_INV = "arg3_inv"
    ARG4_INV = "arg4_inv"
    ARG5_INV = "arg5_inv"
    MOD = "mod"
    MOD_INV = "mod_inv"
    OTHER_ROLE = "other_role"
    OTHER_ROLE_INV = "other_role_inv"
    SENTENCE_MEMBER = "sentence_member"
    NARRATIVE_NEXT = "narrative_next"
    NARRATIVE_PREV = "narrative_prev"
    SOURCE_CONTAINS = "source_contains"
    SOURCE_CONTAINS_INV = "source_contains_inv"
    CONTEXT_LINK = "context_link"


_ARGS = [EdgeType.ARG0, EdgeType.ARG1, EdgeType.ARG2,
         EdgeType.ARG3, EdgeType.ARG4, EdgeType.ARG5]
_ARGS_INV = [EdgeType.ARG0_INV, EdgeType.ARG1_INV, EdgeType.ARG2_INV,
             EdgeType.ARG3_INV, EdgeType.ARG4_INV, EdgeType.ARG5_INV]

EDGE_INVERSE: dict[EdgeType, EdgeType] = {
    **{f: i for f, i in zip(_ARGS, _ARGS_INV)},
    **{i: f for f, i in zip(_ARGS, _ARGS_INV)},
    EdgeType.MOD: EdgeType.MOD_INV,
    EdgeType.MOD_INV: EdgeType.MOD,
    EdgeType.OTHER_ROLE: EdgeType.OTHER_ROLE_INV,
    EdgeType.OTHER_ROLE_INV: EdgeType.OTHER_ROLE,
    EdgeType.NARRATIVE_NEXT: EdgeType.NARRATIVE_PREV,
    EdgeType.NARRATIVE_PREV: EdgeType.NARRATIVE_NEXT,
    EdgeType.SOURCE_CONTAINS: EdgeType.SOURCE_CONTAINS_INV,
    EdgeType.SOURCE_CONTAINS_INV: EdgeType.SOURCE_CONTAINS,
    # symmetric types are their own inverse
    EdgeType.SENTENCE_MEMBER: EdgeType.SENTENCE_MEMBER,
    EdgeType.CONTEXT_LINK: EdgeType.CONTEXT_LINK,
}

ROLE_EDGE_TYPES = frozenset(_ARGS + _ARGS_INV + [
    EdgeType.MOD, EdgeType.MOD_INV, EdgeType.OTHER_ROLE, EdgeType.OTHER_ROLE_INV])

CORE_ROLES = frozenset(f":ARG{i}" for i in range(6))


class Variant(Enum):
    FULL = "full"
    SENTENCE_ONLY = "sentence"
    COREF_ONLY = "coref"
    HOMOGENEOUS = "homogeneous"


def classify_role(role: str) -> tuple[EdgeType, bool]:
    """Map a verbatim AMR role to (forward edge type, was_inverted)."""
    body = role[1:] if role.startswith(":") else role
    inverted = body.endswith("-of")
    if inverted:
        body = body[:-3]
    upper = body.upper()
    if upper.startswith("ARG") and len(upper) == 4 and upper[3] in "012345":
        return _ARGS[int(upper[3])], inverted
    if body.lower() == "mod":
        return EdgeType.MOD, inverted
    return EdgeType.OTHER_ROLE, inverted


def canonical_role(role: str) -> str:
    """Forward-direction form of a role label (inverse marker stripped)."""
    body = role[1:] if role.startswith(":") else role
    if body.endswith("-of"):
        body = body[:-3]
    return ":" + body


@dataclass(frozen=True)
class Mention:
    sentence_id: str
    variable: str
    start: int
    end: int
    surface: str

    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class GraphEdge:
    src: str
    edge_type: EdgeType
    dst: str
    tag: str = ""


@dataclass
class GraphNode:
    node_id: str
    node_type: NodeType
    name: str
    # concept provenance: merged nodes carry every member mention
    mentions: tuple[Mention, ...] = ()
    # origin sentences for concepts, self id for sentences, members for sources
    sentence_ids: tuple[str, ...] = ()
    concept_label: str = ""


@dataclass
class CorefClusters:
    clusters: list[list[tuple[str, int, int]]]

    @staticmethod
    def from_json(data: dict) -> "CorefClusters":
        clusters = [[(m["sentence_id"], int(m["start"]), int(m["end"])) for m in cluster]
                    for cluster in data.get("clusters", [])]
        return CorefClusters(clusters)


@dataclass
class GraphStats:
    nodes: int = 0
    edges: int = 0
    merges: int = 0
    dropped_mentions: int = 0
    skipped_variables: int = 0


@dataclass
class DocumentSemanticGraph:
    doc_id: str
    variant: Variant
    nodes: list[GraphNode]
    edges: list[GraphEdge]
    sentence_order: list[str]
    stats: GraphStats = field(default_factory=GraphStats)

    def __post_init__(self):
        self._index = {node.node_id: i for i, node in enumerate(self.nodes)}
        if len(self._index) != len(self.nodes):
            raise ValueError("duplicate node ids")

    def node(self, node_id: str) -> GraphNode:
        return self.nodes[self._index[node_id]]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._index

    def node_index(self, node_id: str) -> int:
        return self._index[node_id]

    def neighbors(self, node_id: str) -> list[GraphEdge]:
        return [e for e in self.edges if e.src == node_id]

    def concept_nodes(self) -> list[GraphNode]:
        return [n for n in self.nodes if n.node_type is NodeType.CONCEPT]

    def sentence_node_id(self, sentence_id: str) -> str:
        return sentence_id

    def node_type_id(self, node: GraphNode) -> int:
        if self.variant is Variant.HOMOGENEOUS:
            return 0
        return list(NodeType).index(node.node_type)

    def edge_type_id(self, edge: GraphEdge) -> int:
        if self.variant is Variant.HOMOGENEOUS:
            return 0
        return list(EdgeType).index(edge.edge_type)


def concept_node_id(sentence_id: str, variable: str) -> str:
    return f"{sentence_id}::{variable}"


def source_node_id(passage_id: str) -> str:
    return f"src::{passage_id}"


# --- mention extraction ---

def _name_subtree_alignment(amr: AmrGraph, var: str) -> list[int]:
    """Alignment indices of `var` expanded over its :name subtree."""
    indices = list(amr.alignments.get(var, ()))
    name_roots = [e.target for e in amr.edges
                  if e.source == var and canonical_role(e.role) == ":name" and e.target_is_var]
    stack = list(name_roots)
    seen: set[str] = set()
    while stack:
        current = stack.pop()
        if current in seen:
            continue
        seen.add(current)
        indices.extend(amr.alignments.get(current, ()))
        for edge in amr.edges:
            if edge.source != current:
                continue
            if edge.target_is_var:
                stack.append(edge.target)
            else:
                indices.extend(edge.target_alignment)
    return indices


def extract_mentions(amr: AmrGraph, tokens: list[str]) -> tuple[list[Mention], list[str]]:
    """One mention per variable that fills a core role of a predicate.

    The token span is the min-max hull of the variable's alignments
    (expanded over its :name subtree); unaligned fillers are skipped and
    reported in the second return value.
    """
    fillers: list[str] = []
    seen: set[str] = set()
    for edge in amr.edges:
        if not edge.target_is_var:
            continue
        if canonical_role(edge.role) not in CORE_ROLES:
            continue
        filler = edge.source if edge.role.endswith("-of") else edge.target
        if filler not in seen:
            seen.add(filler)
            fillers.append(filler)

    mentions: list[Mention] = []
    skipped: list[str] = []
    for var in fillers:
        indices = _name_subtree_alignment(amr, var)
        if not indices:
            skipped.append(var)
            continue
        start, end = min(indices), max(indices) + 1
        surface = " ".join(tokens[start:end])
        mentions.append(Mention(amr.sentence_id, var, start, end, surface))
    return mentions, skipped


# --- coreference resolution and merging ---

def _overlap(a: tuple[int, int], b: tuple[int, int]) -> int:
    return max(0, min(a[1], b[1]) - max(a[0], b[0]))


def _resolve_cluster_mention(mention: tuple[str, int, int],
                             by_sentence: dict[str, list[Mention]]) -> Mention | None:
    """Best AMR mention for a coref span: max overlap, then smaller span,
    then earliest start."""
    sentence_id, start, end = mention
    best: Mention | None = None
    best_key = None
    for candidate in by_sentence.get(sentence_id, []):
        overlap = _overlap((start, end), candidate.span())
        if overlap <= 0:
            continue
        key = (-overlap, candidate.end - candidate.start, candidate.start)
        if best_key is None or key < best_key:
            best, best_key = candidate, key
    return best


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, item: str) -> str:
        self.parent.setdefault(item, item)
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def build_document_graph(doc: CorpusDocument, coref: CorefClusters | None = None,
                         variant: Variant = Variant.FULL) -> DocumentSemanticGraph:
    """Assemble the full graph for one document, then apply `variant`."""
    coref = coref or CorefClusters([])
    order = doc.sentence_order
    order_index = {sid: i for i, sid in enumerate(order)}

    mentions_by_sentence: dict[str, list[Mention]] = {}
    skipped_total = 0
    for sid in order:
        sentence = doc.sentences[sid]
        mentions, skipped = extract_mentions(sentence.amr, sentence.tokens)
        mentions_by_sentence[sid] = mentions
        skipped_total += len(skipped)

    mention_by_key = {(m.sentence_id, m.variable): m
                      for ms in mentions_by_sentence.values() for m in ms}

    # union concept keys per cluster; unresolvable spans are dropped
    uf = _UnionFind()
    dropped = 0
    for cluster in coref.clusters:
        resolved: list[str] = []
        for raw in cluster:
            match = _resolve_cluster_mention(raw, mentions_by_sentence)
            if match is None:
                dropped += 1
                log.warning("coref mention %s overlaps no extracted mention; dropped", raw)
                continue
            key = concept_node_id(match.sentence_id, match.variable)
            if key not in resolved:
                resolved.append(key)
        for other in resolved[1:]:
            uf.union(resolved[0], other)

    # enumerate concept keys in corpus order
    concept_keys: list[tuple[str, str]] = []
    for sid in order:
        for var, _ in doc.sentences[sid].amr.variables:
            concept_keys.append((sid, var))

    groups: dict[str, list[tuple[str, str]]] = {}
    group_order: list[str] = []
    for sid, var in concept_keys:
        root = uf.find(concept_node_id(sid, var))
        if root not in groups:
            groups[root] = []
            group_order.append(root)
        groups[root].append((sid, var))

    def corpus_key(mention: Mention) -> tuple[int, int]:
        return (order_index[mention.sentence_id], mention.start)

    node_of_key: dict[tuple[str, str], str] = {}
    concept_nodes: list[GraphNode] = []
    merges = 0
    for root in group_order:
        members = groups[root]
        rep_sid, rep_var = members[0]
        node_id = concept_node_id(rep_sid, rep_var)
        mentions = sorted((mention_by_key[key] for key in members if key in mention_by_key),
                          key=corpus_key)
        if len(members) > 1:
            merges += len(members) - 1
        if mentions:
            # longest surface wins; ties go to the earliest corpus occurrence
            name = max(mentions, key=lambda m: (m.end - m.start, [-k for k in corpus_key(m)])).surface
        else:
            name = doc.sentences[rep_sid].amr.concept_of(rep_var)
        origin = sorted({sid for sid, _ in members}, key=order_index.__getitem__)
        concept_nodes.append(GraphNode(
            node_id, NodeType.CONCEPT, name,
            mentions=tuple(mentions),
            sentence_ids=tuple(origin),
            concept_label=doc.sentences[rep_sid].amr.concept_of(rep_var),
        ))
        for key in members:
            node_of_key[key] = node_id

    # structural nodes
    nodes: list[GraphNode] = []
    edges: list[GraphEdge] = []
    for passage_id, sids in doc.passages:
        nodes.append(GraphNode(source_node_id(passage_id), NodeType.SOURCE, passage_id,
                               sentence_ids=tuple(sids)))
    for sid in order:
        nodes.append(GraphNode(sid, NodeType.SENTENCE, sid, sentence_ids=(sid,)))
    nodes.extend(concept_nodes)

    def add_pair(src: str, edge_type: EdgeType, dst: str, tag: str = "") -> None:
        edges.append(GraphEdge(src, edge_type, dst, tag))
        edges.append(GraphEdge(dst, EDGE_INVERSE[edge_type], src, tag))

    for passage_id, sids in doc.passages:
        for sid in sids:
            add_pair(source_node_id(passage_id), EdgeType.SOURCE_CONTAINS, sid)
        for left, right in zip(sids, sids[1:]):
            add_pair(left, EdgeType.NARRATIVE_NEXT, right)

    for node in concept_nodes:
        for sid in node.sentence_ids:
            edges.append(GraphEdge(sid, EdgeType.SENTENCE_MEMBER, node.node_id))
            edges.append(GraphEdge(node.node_id, EdgeType.SENTENCE_MEMBER, sid))

    # AMR role edges between (possibly merged) concept nodes
    seen_role_edges: set[tuple[str, EdgeType, str]] = set()
    for sid in order:
        for edge in doc.sentences[sid].amr.edges:
            if not edge.target_is_var:
                continue
            edge_type, inverted = classify_role(edge.role)
            src_key = (sid, edge.target) if inverted else (sid, edge.source)
            dst_key = (sid, edge.source) if inverted else (sid, edge.target)
            src, dst = node_of_key[src_key], node_of_key[dst_key]
            if src == dst:
                continue  # merging can fold a role edge into a self-loop
            if (src, edge_type, dst) in seen_role_edges:
                continue
            seen_role_edges.add((src, edge_type, dst))
            seen_role_edges.add((dst, EDGE_INVERSE[edge_type], src))
            tag = canonical_role(edge.role)
            edges.append(GraphEdge(src, edge_type, dst, tag))
            edges.append(GraphEdge(dst, EDGE_INVERSE[edge_type], src, tag + "-of"))

    stats = GraphStats(nodes=len(nodes), edges=len(edges), merges=merges,
                       dropped_mentions=dropped, skipped_variables=skipped_total)
    graph = DocumentSemanticGraph(doc.doc_id, Variant.FULL, nodes, edges, list(order), stats)
    if variant is not Variant.FULL:
        graph = apply_variant(graph, variant)
    return graph


def apply_variant(graph: DocumentSemanticGraph, variant: Variant) -> DocumentSemanticGraph:
    """Project the full graph onto an ablation variant (idempotent)."""
    if graph.variant is variant:
        return graph
    if graph.variant is not Variant.FULL:
        raise ValueError(f"cannot derive {variant.value} from a {graph.variant.value} graph")

    if variant is Variant.FULL:
        return graph
    if variant is Variant.HOMOGENEOUS:
        # same topology; type collapsing happens in node/edge_type_id
        return DocumentSemanticGraph(graph.doc_id, variant, list(graph.nodes),
                                     list(graph.edges), list(graph.sentence_order), graph.stats)
    if variant is Variant.SENTENCE_ONLY:
        keep = [n for n in graph.nodes if n.node_type is not NodeType.CONCEPT]
        kept_ids = {n.node_id for n in keep}
        edges = [e for e in graph.edges if e.src in kept_ids and e.dst in kept_ids]
        return DocumentSemanticGraph(graph.doc_id, variant, keep, edges,
                                     list(graph.sentence_order), graph.stats)
    if variant is Variant.COREF_ONLY:
        edges = [e for e in graph.edges if e.edge_type not in ROLE_EDGE_TYPES]
        return DocumentSemanticGraph(graph.doc_id, variant, list(graph.nodes), edges,
                                     list(graph.sentence_order), graph.stats)
    raise ValueError(f"unknown variant {variant!r}")


# --- node embedding initialization ---

@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]

    def matrix(self, node_ids: list[str]) -> np.ndarray:
        return np.stack([self.vectors[node_id] for node_id in node_ids])


def init_node_embeddings(graph: DocumentSemanticGraph, source) -> EmbeddingTable:
    """Sentence nodes take the summary (CLS) vector, concept nodes average
    the token vectors pooled over every provenance mention span, and each
    source node averages its sentences' summary vectors.  Concepts with no
    aligned mention fall back to the mean over their origin sentences'
    token vectors so unaligned predicates still carry a grounded signal.
    """
    vectors: dict[str, np.ndarray] = {}
    for node in graph.nodes:
        if node.node_type is NodeType.SENTENCE:
            vectors[node.node_id] = np.asarray(source.cls(node.node_id), dtype=np.float64)
        elif node.node_type is NodeType.SOURCE:
            members = [np.asarray(source.cls(sid), dtype=np.float64)
                       for sid in node.sentence_ids]
            vectors[node.node_id] = np.mean(members, axis=0)
        elif node.node_type is NodeType.CONCEPT:
            rows = []
            for mention in node.mentions:
                token_mat = source.tokens(mention.sentence_id)
                rows.append(token_mat[mention.start:mention.end])
            if not rows:
                rows = [source.tokens(sid) for sid in node.sentence_ids]
            rows = [r for r in rows if len(r)]
            if rows:
                vectors[node.node_id] = np.concatenate(rows, axis=0).mean(axis=0)
            else:  # tokenless origin sentences; fall back to their summaries
                vectors[node.node_id] = np.mean(
                    [np.asarray(source.cls(sid), dtype=np.float64)
                     for sid in node.sentence_ids], axis=0)
        else:
            raise ValueError(f"unexpected node type in document graph: {node.node_type}")
    dim = len(next(iter(vectors.values()))) if vectors else 0
    table = EmbeddingTable(dim, vectors)
    for node_id, vec in vectors.items():
        if vec.shape != (dim,) or not np.all(np.isfinite(vec)):
            raise MissingEmbedding(f"bad embedding for node {node_id!r}")
    return table


# --- graph traversal for path linearization ---

def linearize_paths(graph: DocumentSemanticGraph, start_sentence_id: str,
                    max_hops: int) -> list[tuple]:
    """Breadth-first walk from a sentence node emitting role tuples.

    Arg/other-role edges come out as (subject, role, object); mod edges as
    (modifier, subject).  Inverse-typed duplicates are skipped, results are
    deduplicated in first-seen order, and the walk stops after max_hops.
    """
    if not graph.has_node(start_sentence_id):
        raise KeyError(start_sentence_id)
    outgoing: dict[str, list[GraphEdge]] = {}
    for edge in graph.edges:
        outgoing.setdefault(edge.src, []).append(edge)

    emitted: dict[tuple, None] = {}
    visited = {start_sentence_id}
    frontier = [start_sentence_id]
    for _ in range(max_hops):
        if not frontier:
            break
        next_frontier: list[str] = []
        for node_id in frontier:
            for edge in outgoing.get(node_id, ()):
                if edge.edge_type in ROLE_EDGE_TYPES and not edge.edge_type.value.endswith("_inv"):
                    subject = graph.node(edge.src).name
                    obj = graph.node(edge.dst).name
                    role = edge.tag.lstrip(":") if edge.tag else edge.edge_type.value
                    if edge.edge_type is EdgeType.MOD:
                        tup = (obj, subject)  # (modifier, subject)
                    else:
                        tup = (subject, role, obj)
                    emitted.setdefault(tup)
                if edge.dst not in visited:
                    visited.add(edge.dst)
                    next_frontier.append(edge.dst)
        frontier = next_frontier
    return list(emitted)


# --- JSON dump / load ---

def dump_graph(graph: DocumentSemanticGraph) -> dict:
    return {
        "doc_id": graph.doc_id,
        "variant": graph.variant.value,
        "sentence_order": graph.sentence_order,
        "nodes": [
            {
                "id": n.node_id,
                "type": n.node_type.value,
                "name": n.name,
                "sentence_ids": list(n.sentence_ids),
                "concept_label": n.concept_label,
                "mentions": [
                    {"sentence_id": m.sentence_id, "variable": m.variable,
                     "start": m.start, "end": m.end, "surface": m.surface}
                    for m in n.mentions
                ],
            }
            for n in graph.nodes
        ],
        "edges": [
            {"src": e.src, "type": e.edge_type.value, "dst": e.dst, "tag": e.tag}
            for e in graph.edges
        ],
        "stats": {
            "nodes": graph.stats.nodes, "edges": graph.stats.edges,
            "merges": graph.stats.merges, "dropped_mentions": graph.stats.dropped_mentions,
            "skipped_variables": graph.stats.skipped_variables,
        },
    }


def load_graph(data: dict) -> DocumentSemanticGraph:
    nodes = [
        GraphNode(
            raw["id"], NodeType(raw["type"]), raw["name"],
            mentions=tuple(Mention(m["sentence_id"], m["variable"], m["start"],
                                   m["end"], m["surface"]) for m in raw["mentions"]),
            sentence_ids=tuple(raw["sentence_ids"]),
            concept_label=raw.get("concept_label", ""),
        )
        for raw in data["nodes"]
    ]
    edges = [GraphEdge(raw["src"], EdgeType(raw["type"]), raw["dst"], raw.get("tag", ""))
             for raw in data["edges"]]
    stats_raw = data.get("stats", {})
    stats = GraphStats(**{k: stats_raw.get(k, 0) for k in
                          ("nodes", "edges", "merges", "dropped_mentions", "skipped_variables")})
    return DocumentSemanticGraph(data["doc_id"], Variant(data["variant"]), nodes, edges,
                                 list(data["sentence_order"]), stats)


def save_graph_json(graph: DocumentSemanticGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dump_graph(graph), fh, indent=1)


def load_graph_json(path) -> DocumentSemanticGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return load_graph(json.load(fh))
