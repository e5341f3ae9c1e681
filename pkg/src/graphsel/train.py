"""Training loop with negative sampling, and knowledge-selection inference.

Per turn the loss is computed over the dialog graph restricted to the
positive context node plus the sampled negatives (all concept nodes stay
in).  Gradients accumulate across a batch, then one optimizer step runs;
everything is keyed off one seed so two runs with the same inputs produce
identical loss logs and bitwise-identical checkpoints.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import egat, tensor as T
from .dialog import DialogGraph, DialogTurn, LabelSet, build_dialog_graph, derive_labels
from .egat import EgatConfig, EgatParams, PreparedGraph
from .errors import NoGoldLabel, NoLabeledTurns
from .semgraph import DocumentSemanticGraph, EmbeddingTable, init_node_embeddings

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    batch_size: int = 16
    epochs: int = 3
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
        }

    @staticmethod
    def from_json(raw: dict) -> "TrainConfig":
        return TrainConfig(**raw)


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: list[T.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.steps = 0
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.steps += 1
        correct1 = 1.0 - self.beta1 ** self.steps
        correct2 = 1.0 - self.beta2 ** self.steps
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def _stream_rng(*key_parts) -> np.random.Generator:
    digest = hashlib.sha256("|".join(str(p) for p in key_parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def sample_negatives(turn: DialogTurn, k: int, seed: int, epoch: int) -> list[str]:
    """min(k, pool) non-gold candidate ids, drawn without replacement from
    a stream keyed by (seed, dialog_id, turn_index, epoch)."""
    pool = [sid for sid, _ in turn.candidates if sid != turn.gold_sentence_id]
    n = min(k, len(pool))
    if n == 0:
        return []
    rng = _stream_rng(seed, turn.dialog_id, turn.turn_index, epoch)
    picked = rng.choice(len(pool), size=n, replace=False)
    chosen = {pool[i] for i in picked}
    return [sid for sid in pool if sid in chosen]  # keep candidate order


@dataclass
class TurnData:
    """One turn with its full-pool dialog graph, labels, and index arrays."""

    turn: DialogTurn
    graph: DialogGraph
    labels: LabelSet | None
    prepared: PreparedGraph
    corpus_rank: dict[str, int]


def assemble_turns(turns: list[DialogTurn], graphs: dict[str, DocumentSemanticGraph],
                   tables: dict[str, EmbeddingTable], context_source,
                   require_labels: bool = False) -> list[TurnData]:
    """Build dialog graphs and prepared arrays; turns without gold labels
    keep labels=None (they are skipped by training, kept for inference)."""
    out = []
    for turn in turns:
        base = graphs[turn.doc_id]
        graph = build_dialog_graph(base, turn, context_source)
        try:
            labels = derive_labels(turn, base)
        except NoGoldLabel:
            labels = None
        prepared = egat.prepare(graph, tables[turn.doc_id])
        rank = {sid: i for i, sid in enumerate(base.sentence_order)}
        out.append(TurnData(turn, graph, labels, prepared, rank))
    return out


def build_tables(graphs: dict[str, DocumentSemanticGraph], node_source) -> dict[str, EmbeddingTable]:
    return {doc_id: init_node_embeddings(g, node_source) for doc_id, g in graphs.items()}


def _turn_loss(data: TurnData, params: EgatParams, beta: float,
               seed: int, epoch: int) -> tuple[T.Tensor, float, float]:
    """Loss over the sampled-candidate restriction of the turn's graph."""
    turn = data.turn
    negatives = sample_negatives(turn, params.config.negatives, seed, epoch)
    keep = set(negatives) | {turn.gold_sentence_id}
    prepared = data.prepared.subset(keep)

    states = egat.egat_forward(prepared, params)
    scores = egat.score_contexts(states, prepared, params)
    # a single-candidate pool degenerates to a one-class softmax: loss 0
    positive_index = prepared.candidate_sentence_ids.index(turn.gold_sentence_id)
    sentence_part = egat.loss_sentence(scores, positive_index)

    probs = egat.score_concepts(states, prepared, params)
    label_vec = np.array([data.labels.concept_relevance[cid] for cid in prepared.concept_ids],
                         dtype=np.float64)
    concept_part, empty = egat.loss_concept(probs, label_vec)
    total = egat.total_loss(sentence_part, concept_part, beta)
    return total, float(sentence_part.data), float(concept_part.data)


@dataclass
class TrainResult:
    params: EgatParams
    # rows of (epoch, step, loss_c, loss_n, loss_total), one per optimizer step
    loss_log: list[tuple[int, int, float, float, float]]
    epoch_means: list[float] = field(default_factory=list)


def train(turn_data: list[TurnData], egat_config: EgatConfig,
          config: TrainConfig) -> TrainResult:
    labeled = [d for d in turn_data if d.labels is not None]
    if not labeled:
        raise NoLabeledTurns("no training turns carry gold labels")

    params = EgatParams(egat_config, seed=config.seed)
    optimizer = Adam(params.all(), config.learning_rate,
                     config.adam_beta1, config.adam_beta2, config.adam_eps)
    loss_log: list[tuple[int, int, float, float, float]] = []
    epoch_means: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        order = _stream_rng(config.seed, "shuffle", epoch).permutation(len(labeled))
        epoch_total = 0.0
        batch: list[tuple[float, float, float]] = []
        for position, turn_index in enumerate(order):
            data = labeled[int(turn_index)]
            with T.Tape() as tape:
                total, loss_c, loss_n = _turn_loss(data, params, egat_config.beta,
                                                   config.seed, epoch)
                tape.backward(total)
            batch.append((loss_c, loss_n, float(total.data)))
            epoch_total += float(total.data)
            if len(batch) == config.batch_size or position == len(order) - 1:
                scale = 1.0 / len(batch)
                for p in params.all():
                    p.grad *= scale
                optimizer.step()
                optimizer.zero_grad()
                means = [sum(col) / len(batch) for col in zip(*batch)]
                step += 1
                loss_log.append((epoch, step, means[0], means[1], means[2]))
                batch = []
        epoch_means.append(epoch_total / len(labeled))
        log.info("epoch %d mean loss %.6f", epoch, epoch_means[-1])
    return TrainResult(params, loss_log, epoch_means)


# --- inference ---

@dataclass
class RankedSelection:
    dialog_id: str
    turn_index: int
    ranking: list[tuple[str, float]]     # (sentence_id, score), best first
    concept_probs: dict[str, float]

    @property
    def key(self) -> str:
        return f"{self.dialog_id}:{self.turn_index}"

    @property
    def top(self) -> str:
        return self.ranking[0][0]

    def ranked_ids(self) -> list[str]:
        return [sid for sid, _ in self.ranking]

    def to_json(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "turn_index": self.turn_index,
            "ranking": [[sid, score] for sid, score in self.ranking],
            "concepts": self.concept_probs,
        }


def select_knowledge(params: EgatParams, data: TurnData) -> RankedSelection:
    """Score the full candidate pool in one forward pass; ties break by
    sentence corpus order."""
    states = egat.egat_forward(data.prepared, params)
    scores = egat.score_contexts(states, data.prepared, params).data
    probs = egat.score_concepts(states, data.prepared, params).data
    order = sorted(
        range(len(scores)),
        key=lambda i: (-scores[i], data.corpus_rank.get(data.prepared.candidate_sentence_ids[i],
                                                        len(data.corpus_rank))),
    )
    ranking = [(data.prepared.candidate_sentence_ids[i], float(scores[i])) for i in order]
    concept_probs = {cid: float(p) for cid, p in zip(data.prepared.concept_ids, probs)}
    return RankedSelection(data.turn.dialog_id, data.turn.turn_index, ranking, concept_probs)


def eval_concept_ranking(selections: list[RankedSelection],
                         relevant_by_turn: dict[str, set[str]]) -> dict[str, float]:
    """MAP/MRR over concept nodes ranked by predicted relevance."""
    from .metrics import average_precision, reciprocal_rank

    aps, rrs = [], []
    for selection in selections:
        relevant = relevant_by_turn.get(selection.key, set())
        if not relevant:
            continue
        ranked = sorted(selection.concept_probs,
                        key=lambda cid: (-selection.concept_probs[cid], cid))
        aps.append(average_precision(ranked, relevant))
        rrs.append(reciprocal_rank(ranked, relevant))
    if not aps:
        return {"map": 0.0, "mrr": 0.0, "n_turns": 0}
    return {"map": sum(aps) / len(aps), "mrr": sum(rrs) / len(rrs), "n_turns": len(aps)}
