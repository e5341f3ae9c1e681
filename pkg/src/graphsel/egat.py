"""Edge-aware graph attention over dialog-aware graphs.

Message passing is typed: each message adds a node-type-aware projection of
the sender state and an edge-type projection; attention keys concatenate
the receiver state with its node-type embedding and the edge-type
embedding, so a key varies per incoming edge.  Layers share parameters and
update states through a residual GELU block.  Two heads score relevance:
one for context nodes (candidate sentence paired with dialog history) and
a sigmoid head for concept nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dialog import DialogGraph
from .errors import NonFinite, NoPositive
from .semgraph import EdgeType, NodeType, Variant

NUM_NODE_TYPES = len(NodeType)
NUM_EDGE_TYPES = len(EdgeType)

_CLAMP = 1e-12


@dataclass
class EgatConfig:
    input_dim: int
    hidden_dim: int = 200
    layers: int = 2
    type_dim: int = 20
    beta: float = 1.0
    negatives: int = 5

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "layers", "type_dim", "negatives"):
            if getattr(self, name) < (0 if name in ("layers", "negatives") else 1):
                raise ValueError(f"{name} must be positive")

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "layers": self.layers,
            "type_dim": self.type_dim,
            "beta": self.beta,
            "negatives": self.negatives,
        }

    @staticmethod
    def from_json(raw: dict) -> "EgatConfig":
        return EgatConfig(**raw)


def _xavier(rng: np.random.Generator, rows: int, cols: int) -> T.Tensor:
    limit = np.sqrt(6.0 / (rows + cols))
    return T.parameter(rng.uniform(-limit, limit, (rows, cols)))


def _zeros(size: int) -> T.Tensor:
    return T.parameter(np.zeros(size))


class EgatParams:
    """All trainable tensors, created in a fixed order from one seed."""

    def __init__(self, config: EgatConfig, seed: int = 0):
        self.config = config
        d, t = config.hidden_dim, config.type_dim
        rng = np.random.default_rng(seed)
        self.input_w = _xavier(rng, config.input_dim, d)
        self.input_b = _zeros(d)
        self.node_type_emb = _xavier(rng, NUM_NODE_TYPES, t)
        self.edge_type_emb = _xavier(rng, NUM_EDGE_TYPES, t)
        self.msg_node_w = _xavier(rng, d + t, d)
        self.msg_edge_w = _xavier(rng, t, d)
        self.query_w = _xavier(rng, d + t, d)
        self.key_w = _xavier(rng, d + 2 * t, d)
        self.update_w1 = _xavier(rng, d, d)
        self.update_b1 = _zeros(d)
        self.update_w2 = _xavier(rng, d, d)
        self.update_b2 = _zeros(d)
        self.context_w1 = _xavier(rng, 2 * d, d)
        self.context_b1 = _zeros(d)
        self.context_w2 = _xavier(rng, d, 1)
        self.context_b2 = _zeros(1)
        self.concept_w1 = _xavier(rng, d, d)
        self.concept_b1 = _zeros(d)
        self.concept_w2 = _xavier(rng, d, 1)
        self.concept_b2 = _zeros(1)

    _ORDER = [
        "input_w", "input_b", "node_type_emb", "edge_type_emb",
        "msg_node_w", "msg_edge_w", "query_w", "key_w",
        "update_w1", "update_b1", "update_w2", "update_b2",
        "context_w1", "context_b1", "context_w2", "context_b2",
        "concept_w1", "concept_b1", "concept_w2", "concept_b2",
    ]

    def named(self) -> dict[str, T.Tensor]:
        return {name: getattr(self, name) for name in self._ORDER}

    def all(self) -> list[T.Tensor]:
        return list(self.named().values())

    def zero_grad(self) -> None:
        for tensor in self.all():
            tensor.zero_grad()


def save_checkpoint(path, params: EgatParams) -> None:
    """Binary tensor file plus a JSON manifest recording the config."""
    T.save_tensors(path, params.named())
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(params.config.to_json(), fh, indent=1)


def load_checkpoint(path) -> EgatParams:
    with open(str(path) + ".json", "r", encoding="utf-8") as fh:
        config = EgatConfig.from_json(json.load(fh))
    params = EgatParams(config, seed=0)
    stored = T.load_tensors(path)
    for name, tensor in params.named().items():
        if name not in stored:
            raise ValueError(f"checkpoint missing tensor {name!r}")
        if stored[name].shape != tensor.data.shape:
            raise ValueError(f"checkpoint tensor {name!r} has shape {stored[name].shape}, "
                             f"expected {tensor.data.shape}")
        tensor.data = stored[name]
        tensor.grad = np.zeros_like(tensor.data)
    return params


# --- graph preparation ---

def group_edges_by_target(src: np.ndarray, dst: np.ndarray, types: np.ndarray,
                          n_nodes: int) -> tuple[np.ndarray, ...]:
    """Order edges into contiguous per-target segments.

    Targets appear in order of their first occurrence in the edge list and
    edges keep their list order within a segment, so the layout depends
    only on the edge list, never on node index values.  That makes node
    relabelings permute all downstream row computations bitwise.
    """
    if len(dst) == 0:
        empty = np.zeros(0, np.intp)
        return src, dst, types, empty, empty
    uniq, first, counts = np.unique(dst, return_index=True, return_counts=True)
    appearance = np.argsort(first, kind="stable")
    targets = uniq[appearance]
    lengths = counts[appearance]
    rank = np.empty(n_nodes, dtype=np.intp)
    rank[targets] = np.arange(len(targets))
    order = np.argsort(rank[dst], kind="stable")
    return src[order], dst[order], types[order], lengths, targets


@dataclass
class PreparedGraph:
    """Index arrays for one dialog graph, ready for batched passes.

    Rows are base nodes first (in graph order) then context nodes (in
    candidate order).  Edges form contiguous per-target attention segments
    via group_edges_by_target.
    """

    node_ids: list[str]
    raw: np.ndarray
    node_type_ids: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_type_ids: np.ndarray
    seg_lengths: np.ndarray
    seg_targets: np.ndarray
    context_rows: np.ndarray          # aligned with candidate_sentence_ids
    candidate_sentence_ids: list[str]
    concept_rows: np.ndarray
    concept_ids: list[str]

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def subset(self, keep_sentence_ids: set[str]) -> "PreparedGraph":
        """Drop context nodes outside `keep_sentence_ids` (training-time
        restriction to the sampled candidates); base rows keep their indices."""
        keep_mask = np.array([sid in keep_sentence_ids for sid in self.candidate_sentence_ids])
        drop_rows = set(self.context_rows[~keep_mask].tolist())
        if not drop_rows:
            return self
        old_n = self.n_nodes
        row_keep = np.ones(old_n, dtype=bool)
        row_keep[list(drop_rows)] = False
        remap = np.cumsum(row_keep) - 1

        edge_keep = row_keep[self.edge_src] & row_keep[self.edge_dst]
        src = remap[self.edge_src[edge_keep]]
        dst = remap[self.edge_dst[edge_keep]]
        types = self.edge_type_ids[edge_keep]
        n_kept = int(row_keep.sum())
        src, dst, types, lengths, targets = group_edges_by_target(src, dst, types, n_kept)

        node_ids = [nid for nid, keep in zip(self.node_ids, row_keep) if keep]
        kept_sids = [sid for sid, keep in zip(self.candidate_sentence_ids, keep_mask) if keep]
        return PreparedGraph(
            node_ids=node_ids,
            raw=self.raw[row_keep],
            node_type_ids=self.node_type_ids[row_keep],
            edge_src=src, edge_dst=dst, edge_type_ids=types,
            seg_lengths=lengths, seg_targets=targets,
            context_rows=remap[self.context_rows[keep_mask]],
            candidate_sentence_ids=kept_sids,
            concept_rows=remap[self.concept_rows],
            concept_ids=list(self.concept_ids),
        )


def prepare(graph: DialogGraph, embeddings, collapse_types: bool | None = None) -> PreparedGraph:
    """Lay a dialog graph out as index arrays.

    `embeddings` maps base node ids to raw input vectors (an
    EmbeddingTable); context nodes carry their own vectors.  When
    `collapse_types` is None the graph's variant decides whether all type
    ids fold to a single shared id.
    """
    base = graph.base
    if collapse_types is None:
        collapse_types = base.variant is Variant.HOMOGENEOUS

    node_type_list = list(NodeType)
    edge_type_list = list(EdgeType)

    node_ids = [n.node_id for n in base.nodes]
    rows = {nid: i for i, nid in enumerate(node_ids)}
    raw_rows = [np.asarray(embeddings.vectors[nid], dtype=np.float64) for nid in node_ids]
    type_ids = [0 if collapse_types else node_type_list.index(n.node_type)
                for n in base.nodes]

    context_rows, candidate_sids = [], []
    for context_id, sentence_id, vector in graph.context_nodes:
        rows[context_id] = len(node_ids)
        node_ids.append(context_id)
        raw_rows.append(np.asarray(vector, dtype=np.float64))
        type_ids.append(0 if collapse_types else node_type_list.index(NodeType.CONTEXT))
        context_rows.append(rows[context_id])
        candidate_sids.append(sentence_id)

    src, dst, etypes = [], [], []
    for edge in list(base.edges) + graph.context_edges():
        src.append(rows[edge.src])
        dst.append(rows[edge.dst])
        etypes.append(0 if collapse_types else edge_type_list.index(edge.edge_type))

    src = np.asarray(src, dtype=np.intp)
    dst = np.asarray(dst, dtype=np.intp)
    etypes = np.asarray(etypes, dtype=np.intp)
    src, dst, etypes, lengths, targets = group_edges_by_target(src, dst, etypes, len(node_ids))

    concept_ids = [n.node_id for n in base.concept_nodes()]
    return PreparedGraph(
        node_ids=node_ids,
        raw=np.stack(raw_rows) if raw_rows else np.zeros((0, 0)),
        node_type_ids=np.asarray(type_ids, dtype=np.intp),
        edge_src=src, edge_dst=dst, edge_type_ids=etypes,
        seg_lengths=lengths, seg_targets=targets,
        context_rows=np.asarray(context_rows, dtype=np.intp),
        candidate_sentence_ids=candidate_sids,
        concept_rows=np.asarray([rows[c] for c in concept_ids], dtype=np.intp),
        concept_ids=concept_ids,
    )


# --- forward pass ---

@dataclass
class EgatStates:
    layers: list[T.Tensor]          # h^0 .. h^L, each [n_nodes, hidden_dim]
    attention: list[np.ndarray] = field(default_factory=list)  # per layer, per edge

    @property
    def first(self) -> T.Tensor:
        return self.layers[0]

    @property
    def last(self) -> T.Tensor:
        return self.layers[-1]


def egat_forward(prepared: PreparedGraph, params: EgatParams,
                 collect_attention: bool = False) -> EgatStates:
    """Run L shared-parameter layers; nodes without incoming edges keep a
    zero aggregate and update through the residual block only."""
    cfg = params.config
    scale = 1.0 / np.sqrt(cfg.hidden_dim)
    raw = T.constant(prepared.raw)
    h = T.add_bias(T.matmul(raw, params.input_w), params.input_b)
    states = EgatStates([h])
    has_edges = len(prepared.edge_src) > 0
    for layer in range(cfg.layers):
        try:
            if has_edges:
                src_h = T.gather_rows(h, prepared.edge_src)
                dst_h = T.gather_rows(h, prepared.edge_dst)
                src_tv = T.gather_rows(params.node_type_emb,
                                       prepared.node_type_ids[prepared.edge_src])
                dst_tv = T.gather_rows(params.node_type_emb,
                                       prepared.node_type_ids[prepared.edge_dst])
                edge_tv = T.gather_rows(params.edge_type_emb, prepared.edge_type_ids)

                msg = T.add(T.matmul(T.concat_cols([src_h, src_tv]), params.msg_node_w),
                            T.matmul(edge_tv, params.msg_edge_w))
                query = T.matmul(T.concat_cols([src_h, src_tv]), params.query_w)
                key = T.matmul(T.concat_cols([dst_h, dst_tv, edge_tv]), params.key_w)
                logits = T.affine(T.row_dot(query, key), scale)
                alpha = T.segment_softmax(logits, prepared.seg_lengths)
                if collect_attention:
                    states.attention.append(alpha.data.copy())
                agg = T.segment_sum(T.scale_rows(msg, alpha), prepared.seg_lengths,
                                    prepared.seg_targets, prepared.n_nodes)
            else:
                agg = T.constant(np.zeros((prepared.n_nodes, cfg.hidden_dim)))
            hidden = T.gelu(T.add_bias(T.matmul(agg, params.update_w1), params.update_b1))
            update = T.add_bias(T.matmul(hidden, params.update_w2), params.update_b2)
            h = T.gelu(T.add(update, h))
        except NonFinite as exc:
            raise NonFinite(f"layer {layer}: {exc}") from exc
        states.layers.append(h)
    return states


# --- single-edge reference operations (mirror the batched math) ---

def message(h_s: np.ndarray, node_type_id: int, edge_type_id: int,
            params: EgatParams) -> np.ndarray:
    """Sum of the node-aware and edge-aware message for one edge."""
    node_part = np.concatenate([h_s, params.node_type_emb.data[node_type_id]])
    return node_part @ params.msg_node_w.data + \
        params.edge_type_emb.data[edge_type_id] @ params.msg_edge_w.data


def attention_weights(h_t: np.ndarray, target_type_id: int,
                      neighbors: list[tuple[np.ndarray, int, int]],
                      params: EgatParams) -> np.ndarray:
    """Softmaxed scaled dot products over (h_s, src_type_id, edge_type_id)
    incoming neighbors; the key varies per edge through its type embedding."""
    if not neighbors:
        raise ValueError("attention_weights needs at least one neighbor")
    scale = 1.0 / np.sqrt(params.config.hidden_dim)
    logits = []
    for h_s, src_type_id, edge_type_id in neighbors:
        query = np.concatenate([h_s, params.node_type_emb.data[src_type_id]]) @ params.query_w.data
        key = np.concatenate([h_t, params.node_type_emb.data[target_type_id],
                              params.edge_type_emb.data[edge_type_id]]) @ params.key_w.data
        logits.append(float(query @ key) * scale)
    logits = np.asarray(logits)
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


# --- scoring ---

def score_contexts(states: EgatStates, prepared: PreparedGraph, params: EgatParams) -> T.Tensor:
    """Logits for every context node from [h^L; h^0] (both projected)."""
    last = T.gather_rows(states.last, prepared.context_rows)
    first = T.gather_rows(states.first, prepared.context_rows)
    pair = T.concat_cols([last, first])
    hidden = T.gelu(T.add_bias(T.matmul(pair, params.context_w1), params.context_b1))
    return T.flatten(T.add_bias(T.matmul(hidden, params.context_w2), params.context_b2))


def score_concepts(states: EgatStates, prepared: PreparedGraph, params: EgatParams) -> T.Tensor:
    """Sigmoid relevance probabilities for every concept node, kept
    strictly inside (0, 1)."""
    rows = T.gather_rows(states.last, prepared.concept_rows)
    hidden = T.gelu(T.add_bias(T.matmul(rows, params.concept_w1), params.concept_b1))
    logits = T.flatten(T.add_bias(T.matmul(hidden, params.concept_w2), params.concept_b2))
    return T.clamp(T.sigmoid(logits), _CLAMP, 1.0 - _CLAMP)


def score_context(h_last: np.ndarray, h_first: np.ndarray, params: EgatParams) -> float:
    """Single-vector form of the context head."""
    pair = np.concatenate([h_last, h_first])
    hidden = T.gelu(T.constant(pair @ params.context_w1.data + params.context_b1.data)).data
    return float(hidden @ params.context_w2.data[:, 0] + params.context_b2.data[0])


def score_concept(h_last: np.ndarray, params: EgatParams) -> float:
    """Single-vector form of the concept head (probability in (0, 1))."""
    hidden = T.gelu(T.constant(h_last @ params.concept_w1.data + params.concept_b1.data)).data
    logit = float(hidden @ params.concept_w2.data[:, 0] + params.concept_b2.data[0])
    prob = float(T.sigmoid(T.constant(np.array([logit]))).data[0])
    return min(max(prob, _CLAMP), 1.0 - _CLAMP)


# --- losses ---

def loss_sentence(scores: T.Tensor, positive_index: int | None) -> T.Tensor:
    """Cross entropy of the positive against the sampled pool."""
    if positive_index is None or not 0 <= positive_index < scores.shape[0]:
        raise NoPositive("positive candidate missing from the sampled pool")
    return T.add(T.logsumexp(scores), T.affine(T.pick(scores, positive_index), -1.0))


def loss_concept(probs: T.Tensor, labels: np.ndarray) -> tuple[T.Tensor, bool]:
    """Full binary cross entropy over all concept nodes.

    Returns (loss, empty_flag); an empty concept set (sentence-only
    graphs) contributes a constant zero.
    """
    n = probs.shape[0]
    if n == 0:
        return T.constant(np.asarray(0.0)), True
    labels = np.asarray(labels, dtype=np.float64)
    safe = T.clamp(probs, _CLAMP, 1.0 - _CLAMP)
    pos = T.mul(T.constant(labels), T.log(safe))
    neg = T.mul(T.constant(1.0 - labels), T.log(T.affine(safe, -1.0, 1.0)))
    return T.affine(T.mean_all(T.add(pos, neg)), -1.0), False


def total_loss(sentence_part: T.Tensor, concept_part: T.Tensor, beta: float) -> T.Tensor:
    return T.add(sentence_part, T.affine(concept_part, beta))
