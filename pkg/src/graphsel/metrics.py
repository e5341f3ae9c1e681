"""Ranking metrics (P@1, MAP, MRR) and ROUGE (1, 2, L) F1 scores."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .embeddings import simple_tokenize
from .errors import MissingGold


def average_precision(ranked_ids: list[str], relevant: set[str]) -> float:
    """Mean of precision@rank over the ranks holding relevant items."""
    if not relevant:
        return 0.0
    hits = 0
    precisions = []
    for rank, item in enumerate(ranked_ids, start=1):
        if item in relevant:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return 0.0
    return sum(precisions) / len(relevant)


def reciprocal_rank(ranked_ids: list[str], relevant: set[str]) -> float:
    for rank, item in enumerate(ranked_ids, start=1):
        if item in relevant:
            return 1.0 / rank
    return 0.0


@dataclass
class RankingReport:
    p_at_1: float
    map: float
    mrr: float
    n_turns: int
    per_turn: list[dict]

    def to_json(self) -> dict:
        return {"p_at_1": self.p_at_1, "map": self.map, "mrr": self.mrr,
                "n_turns": self.n_turns, "per_turn": self.per_turn}


def eval_ranking(rankings: dict[str, list[str]], gold: dict[str, set[str]]) -> RankingReport:
    """Score per-turn ranked candidate ids against gold id sets.

    Multiple gold sentences per turn are allowed; every turn must have at
    least one.
    """
    if not rankings:
        raise MissingGold("no turns to evaluate")
    per_turn = []
    for key, ranked in rankings.items():
        relevant = gold.get(key)
        if not relevant:
            raise MissingGold(f"turn {key!r} has no gold sentence")
        correct = bool(ranked) and ranked[0] in relevant
        per_turn.append({
            "turn": key,
            "ap": average_precision(ranked, relevant),
            "rr": reciprocal_rank(ranked, relevant),
            "correct": correct,
        })
    n = len(per_turn)
    return RankingReport(
        p_at_1=sum(t["correct"] for t in per_turn) / n,
        map=sum(t["ap"] for t in per_turn) / n,
        mrr=sum(t["rr"] for t in per_turn) / n,
        n_turns=n,
        per_turn=per_turn,
    )


# --- ROUGE ---

def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(matches: int, candidate_total: int, reference_total: int) -> float:
    if matches == 0 or candidate_total == 0 or reference_total == 0:
        return 0.0
    precision = matches / candidate_total
    recall = matches / reference_total
    return 2.0 * precision * recall / (precision + recall)


def _rouge_n(candidate: list[str], reference: list[str], n: int) -> float:
    cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
    matches = sum(min(count, ref[gram]) for gram, count in cand.items())
    return _f1(matches, max(len(candidate) - n + 1, 0), max(len(reference) - n + 1, 0))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(prev[j - 1] + 1)
            else:
                current.append(max(prev[j], current[-1]))
        prev = current
    return prev[-1]


def _rouge_l(candidate: list[str], reference: list[str]) -> float:
    return _f1(_lcs_length(candidate, reference), len(candidate), len(reference))


def rouge(candidate: str, references: list[str]) -> dict[str, float]:
    """Unigram/bigram overlap F1 and LCS F1; the best reference wins per
    metric.  An empty candidate scores zero everywhere."""
    cand = simple_tokenize(candidate)
    if not cand:
        return {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    scores = {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    for reference in references:
        ref = simple_tokenize(reference)
        scores["rouge1"] = max(scores["rouge1"], _rouge_n(cand, ref, 1))
        scores["rouge2"] = max(scores["rouge2"], _rouge_n(cand, ref, 2))
        scores["rougeL"] = max(scores["rougeL"], _rouge_l(cand, ref))
    return scores
