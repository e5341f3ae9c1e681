"""Embedding sources for graph nodes and dialog contexts.

Two interchangeable providers exist for per-sentence vectors: a binary
file written by an external encoder, and a deterministic hash-seeded
fallback that needs no model downloads.  The file layout is:

    u32 record_count, u32 dim                     (little endian)
    per record:
        u32 id_len, id bytes (utf-8)
        dim * f32            summary (CLS) vector
        u32 token_count
        token_count * dim * f32  token vectors

Context embeddings reuse the same layout with token_count = 0 and records
keyed by "dialog_id:turn_index:sentence_id".
"""

from __future__ import annotations

import hashlib
import re
import struct

import numpy as np

from .errors import MissingContextEmbedding, MissingEmbedding

_WORD_RE = re.compile(r"[a-z0-9]+")


def simple_tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters."""
    return _WORD_RE.findall(text.lower())


def _hash_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


class HashedEncoder:
    """Deterministic per-token vectors drawn from a token-keyed seeded RNG.

    The sentence summary vector is the mean of its token vectors, standing
    in for a real encoder's pooled output.
    """

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            rng = _hash_rng("tok", self.seed, token)
            vec = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            self._cache[token] = vec
        return vec

    def token_matrix(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.token_vector(t) for t in tokens])

    def sentence(self, tokens: list[str]) -> tuple[np.ndarray, np.ndarray]:
        mat = self.token_matrix(tokens)
        cls = mat.mean(axis=0) if len(tokens) else np.zeros(self.dim)
        return cls, mat


# --- per-sentence sources used by node initialization ---

class FileEmbeddingSource:
    """Sentence vectors read from the binary embedding file."""

    def __init__(self, path):
        self._records = read_embedding_file(path)
        self.dim = self._records["__dim__"]

    def _get(self, sentence_id: str):
        try:
            return self._records[sentence_id]
        except KeyError:
            raise MissingEmbedding(sentence_id) from None

    def cls(self, sentence_id: str) -> np.ndarray:
        return self._get(sentence_id)[0]

    def tokens(self, sentence_id: str) -> np.ndarray:
        return self._get(sentence_id)[1]


class HashedEmbeddingSource:
    """Fallback source computing sentence vectors from corpus tokens."""

    def __init__(self, tokens_by_sentence: dict[str, list[str]], dim: int, seed: int = 0):
        self._tokens = tokens_by_sentence
        self._encoder = HashedEncoder(dim, seed)
        self.dim = dim

    def _sentence_tokens(self, sentence_id: str) -> list[str]:
        try:
            return self._tokens[sentence_id]
        except KeyError:
            raise MissingEmbedding(sentence_id) from None

    def cls(self, sentence_id: str) -> np.ndarray:
        cls, _ = self._encoder.sentence(self._sentence_tokens(sentence_id))
        return cls

    def tokens(self, sentence_id: str) -> np.ndarray:
        return self._encoder.token_matrix(self._sentence_tokens(sentence_id))


# --- context encoders (candidate sentence paired with dialog context) ---

class HashedContextEncoder:
    """Mean-pooled hash vectors of the candidate and context halves,
    concatenated and sent through a fixed seeded projection back to dim."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self._encoder = HashedEncoder(dim, seed)
        limit = np.sqrt(6.0 / (3 * dim))
        self._projection = _hash_rng("ctxproj", seed).uniform(-limit, limit, (2 * dim, dim))

    def encode(self, candidate_text: str, context_text: str) -> np.ndarray:
        cand, _ = self._encoder.sentence(simple_tokenize(candidate_text))
        ctx, _ = self._encoder.sentence(simple_tokenize(context_text))
        return np.concatenate([cand, ctx]) @ self._projection


class PrecomputedContextSource:
    """Context vectors looked up from a binary file."""

    def __init__(self, path):
        self._records = read_embedding_file(path)
        self.dim = self._records["__dim__"]

    def lookup(self, dialog_id: str, turn_index: int, sentence_id: str) -> np.ndarray:
        key = f"{dialog_id}:{turn_index}:{sentence_id}"
        try:
            return self._records[key][0]
        except KeyError:
            raise MissingContextEmbedding(key) from None


# --- binary file I/O ---

def write_embedding_file(path, records: dict[str, tuple[np.ndarray, np.ndarray]], dim: int) -> None:
    """Write {key: (summary_vector, token_matrix)} in the binary layout."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", len(records), dim))
        for key, (cls, tokens) in records.items():
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(cls, dtype="<f4").tobytes())
            count = 0 if tokens is None else len(tokens)
            fh.write(struct.pack("<I", count))
            if count:
                fh.write(np.asarray(tokens, dtype="<f4").tobytes())


def read_embedding_file(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    count, dim = struct.unpack_from("<II", blob, 0)
    offset = 8
    records: dict = {"__dim__": dim}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        key = blob[offset:offset + id_len].decode("utf-8")
        offset += id_len
        cls = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += 4 * dim
        (token_count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        tokens = np.frombuffer(blob, dtype="<f4", count=token_count * dim,
                               offset=offset).astype(np.float64).reshape(token_count, dim)
        offset += 4 * token_count * dim
        records[key] = (cls, tokens)
    return records
