"""Question/passage encoding contract: a deterministic hashing encoder, a
small trainable bag-of-token-embeddings encoder, the in-batch-negative NLL
training objective with exact gradients, and binary parameter persistence.

Trainable parameters persist as: magic "XLENC001", u32 LE vocab_size,
u32 LE dim, then row-major float32 LE question-tower rows followed by
passage-tower rows.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Passage, is_charwise
from .generator import Question

DEFAULT_DIM = 768
DEFAULT_VOCAB_SIZE = 4096

PARAMS_MAGIC = b"XLENC001"

EmbeddingVector = np.ndarray


def serialize_passage_input(title: str, text: str) -> str:
    return f"[CLS] {title} [SEP] {text} [SEP]"


def encoder_tokens(text: str, lang: str) -> list[str]:
    """Token stream for the toy encoders: whitespace pieces, with bracketed
    special tokens kept atomic and charwise scripts split per character."""
    tokens: list[str] = []
    charwise = is_charwise(lang)
    for piece in text.split():
        if piece.startswith("[") and piece.endswith("]"):
            tokens.append(piece)
        elif charwise:
            tokens.extend(piece)
        else:
            tokens.append(piece)
    return tokens


def _token_hash(token: str, seed: int) -> int:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8,
        key=str(seed).encode("ascii")).digest()
    return int.from_bytes(digest, "little")


class HashEncoder:
    """Deterministic untrained encoder: tokens hashed into dim buckets with
    signs, then L2-normalized. Gives non-degenerate retrieval without any
    training."""

    kind = "toy-hash"

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def encode(self, text: str, tower: str, lang: str = "") -> EmbeddingVector:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in encoder_tokens(text, lang):
            h = _token_hash(token, self.seed)
            bucket = (h >> 1) % self.dim
            sign = 1.0 if h & 1 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec.astype(np.float32)


class TrainableEncoder:
    """Bag-of-token-embeddings dual encoder with mean pooling.

    Tokens are hashed into vocab_size rows; separate parameter matrices for
    the question and passage towers. Parameters are held in float64 so the
    analytic gradients can be checked against finite differences.
    """

    kind = "toy-trainable"

    def __init__(self, dim: int = DEFAULT_DIM, vocab_size: int = DEFAULT_VOCAB_SIZE,
                 seed: int = 0, init_scale: float = 0.1,
                 freeze_query_tower: bool = False):
        self.dim = dim
        self.vocab_size = vocab_size
        self.seed = seed
        self.freeze_query_tower = freeze_query_tower
        rng = np.random.default_rng(seed)
        self.wq = rng.normal(0.0, init_scale, size=(vocab_size, dim))
        self.wp = rng.normal(0.0, init_scale, size=(vocab_size, dim))

    def token_rows(self, text: str, lang: str = "") -> np.ndarray:
        tokens = encoder_tokens(text, lang)
        if not tokens:
            return np.empty(0, dtype=np.int64)
        return np.array([_token_hash(t, self.seed) % self.vocab_size for t in tokens],
                        dtype=np.int64)

    def _tower(self, tower: str) -> np.ndarray:
        if tower == "question":
            return self.wq
        if tower == "passage":
            return self.wp
        raise ValueError(f"unknown tower: {tower}")

    def embed64(self, text: str, tower: str, lang: str = "") -> np.ndarray:
        rows = self.token_rows(text, lang)
        if rows.size == 0:
            return np.zeros(self.dim, dtype=np.float64)
        return self._tower(tower)[rows].mean(axis=0)

    def encode(self, text: str, tower: str, lang: str = "") -> EmbeddingVector:
        return self.embed64(text, tower, lang).astype(np.float32)


@dataclass(frozen=True)
class RemoteEncoder:
    kind: str = "remote"
    endpoint: str = ""
    dim: int = DEFAULT_DIM
    batch_size: int = 64


@dataclass(frozen=True)
class TrainingExample:
    question: Question
    positives: tuple[Passage, ...]
    negatives: tuple[Passage, ...] = ()

    def __post_init__(self):
        if not self.positives:
            raise ValueError("positives must be non-empty")
        pos_ids = {p.passage_id for p in self.positives}
        neg_ids = {p.passage_id for p in self.negatives}
        shared = pos_ids & neg_ids
        if shared:
            raise ValueError(f"passages in both positives and negatives: {sorted(shared)}")


def encode_passage(handle, passage: Passage) -> EmbeddingVector:
    """Encode "[CLS] title [SEP] text [SEP]" through the passage tower."""
    serialized = serialize_passage_input(passage.title, passage.text)
    if isinstance(handle, RemoteEncoder):
        from .remote import remote_encode

        return remote_encode(handle, [serialized], mode="passage")[0]
    return handle.encode(serialized, tower="passage", lang=passage.lang)


def encode_question(handle, question: Question) -> EmbeddingVector:
    """Encode the bare question text through the question tower."""
    if isinstance(handle, RemoteEncoder):
        from .remote import remote_encode

        return remote_encode(handle, [question.text], mode="question")[0]
    return handle.encode(question.text, tower="question", lang=question.lang)


def relevance_score(q: EmbeddingVector, p: EmbeddingVector) -> float:
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if q.shape != p.shape:
        raise ValueError(f"dimension mismatch: {q.shape[0]} vs {p.shape[0]}")
    return float(q @ p)


def _logsumexp(values: np.ndarray) -> float:
    peak = values.max()
    return float(peak + np.log(np.exp(values - peak).sum()))


def batch_nll_loss(question_vecs: Sequence, positive_vecs: Sequence,
                   extra_negative_vecs: Sequence[Sequence] | None = None) -> float:
    """Mean negative log likelihood of each question's positive against all
    in-batch positives plus the question's own extra negatives."""
    m = len(question_vecs)
    if m == 0:
        raise ValueError("empty batch")
    if len(positive_vecs) != m:
        raise ValueError("question_vecs and positive_vecs must have equal length")
    q_mat = np.asarray(question_vecs, dtype=np.float64)
    p_mat = np.asarray(positive_vecs, dtype=np.float64)
    scores = q_mat @ p_mat.T
    total = 0.0
    for i in range(m):
        candidates = scores[i]
        if extra_negative_vecs is not None and len(extra_negative_vecs[i]):
            extra = np.asarray(extra_negative_vecs[i], dtype=np.float64) @ q_mat[i]
            candidates = np.concatenate([candidates, extra])
        total += _logsumexp(candidates) - scores[i, i]
    return total / m


def _pooled(encoder: TrainableEncoder, rows: np.ndarray, tower: np.ndarray) -> np.ndarray:
    if rows.size == 0:
        return np.zeros(encoder.dim, dtype=np.float64)
    return tower[rows].mean(axis=0)


def _example_inputs(encoder: TrainableEncoder, batch: Sequence[TrainingExample]):
    """Token rows for each question, its first positive, and its extra
    negatives. Multi-positive examples train on their first positive."""
    q_rows, pos_rows, neg_rows = [], [], []
    for example in batch:
        q_rows.append(encoder.token_rows(example.question.text, example.question.lang))
        positive = example.positives[0]
        pos_rows.append(encoder.token_rows(
            serialize_passage_input(positive.title, positive.text), positive.lang))
        neg_rows.append([
            encoder.token_rows(serialize_passage_input(n.title, n.text), n.lang)
            for n in example.negatives
        ])
    return q_rows, pos_rows, neg_rows


def training_loss(encoder: TrainableEncoder, batch: Sequence[TrainingExample]) -> float:
    """Forward pass only; the finite-difference oracle for train_step."""
    if not batch:
        raise ValueError("empty batch")
    q_rows, pos_rows, neg_rows = _example_inputs(encoder, batch)
    q_vecs = [_pooled(encoder, r, encoder.wq) for r in q_rows]
    p_vecs = [_pooled(encoder, r, encoder.wp) for r in pos_rows]
    n_vecs = [[_pooled(encoder, r, encoder.wp) for r in rows] for rows in neg_rows]
    return batch_nll_loss(q_vecs, p_vecs, n_vecs)


def training_loss_and_grads(encoder: TrainableEncoder, batch: Sequence[TrainingExample]):
    """Loss plus exact analytic gradients w.r.t. both towers."""
    if not batch:
        raise ValueError("empty batch")
    m = len(batch)
    q_rows, pos_rows, neg_rows = _example_inputs(encoder, batch)
    q_emb = np.stack([_pooled(encoder, r, encoder.wq) for r in q_rows])
    p_emb = np.stack([_pooled(encoder, r, encoder.wp) for r in pos_rows])
    n_emb = [[_pooled(encoder, r, encoder.wp) for r in rows] for rows in neg_rows]

    grad_q_emb = np.zeros_like(q_emb)
    grad_p_emb = np.zeros_like(p_emb)
    grad_n_emb = [[np.zeros(encoder.dim) for _ in rows] for rows in neg_rows]

    scores = q_emb @ p_emb.T
    total = 0.0
    for i in range(m):
        extras = n_emb[i]
        cand = np.concatenate([scores[i], [q_emb[i] @ e for e in extras]]) \
            if extras else scores[i].copy()
        peak = cand.max()
        exp = np.exp(cand - peak)
        softmax = exp / exp.sum()
        loss_i = float(peak + np.log(exp.sum())) - scores[i, i]
        if not np.isfinite(loss_i):
            raise ValueError(
                f"non-finite loss for example {batch[i].question.question_id}")
        total += loss_i
        g = softmax.copy()
        g[i] -= 1.0
        grad_q_emb[i] += g[:m] @ p_emb
        grad_p_emb += np.outer(g[:m], q_emb[i])
        for e, extra_emb in enumerate(extras):
            grad_q_emb[i] += g[m + e] * extra_emb
            grad_n_emb[i][e] += g[m + e] * q_emb[i]

    loss = total / m
    grad_wq = np.zeros_like(encoder.wq)
    grad_wp = np.zeros_like(encoder.wp)
    for i in range(m):
        if q_rows[i].size:
            np.add.at(grad_wq, q_rows[i], grad_q_emb[i] / (m * q_rows[i].size))
        if pos_rows[i].size:
            np.add.at(grad_wp, pos_rows[i], grad_p_emb[i] / (m * pos_rows[i].size))
        for rows, g_emb in zip(neg_rows[i], grad_n_emb[i]):
            if rows.size:
                np.add.at(grad_wp, rows, g_emb / (m * rows.size))
    return loss, grad_wq, grad_wp


def train_step(encoder: TrainableEncoder, batch: Sequence[TrainingExample],
               learning_rate: float) -> tuple[TrainableEncoder, float]:
    """One full-gradient descent step on the batch NLL. Mutates the encoder
    in place; the returned loss is the pre-update value."""
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    loss, grad_wq, grad_wp = training_loss_and_grads(encoder, batch)
    if not encoder.freeze_query_tower:
        encoder.wq -= learning_rate * grad_wq
    encoder.wp -= learning_rate * grad_wp
    return encoder, loss


def save_trainable(encoder: TrainableEncoder, path) -> None:
    payload = bytearray()
    payload += PARAMS_MAGIC
    payload += struct.pack("<II", encoder.vocab_size, encoder.dim)
    payload += encoder.wq.astype("<f4").tobytes(order="C")
    payload += encoder.wp.astype("<f4").tobytes(order="C")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_trainable(path, seed: int = 0) -> TrainableEncoder:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise ValueError("bad magic in encoder parameter file")
    offset = len(PARAMS_MAGIC)
    vocab_size, dim = struct.unpack_from("<II", blob, offset)
    offset += 8
    expected = len(PARAMS_MAGIC) + 8 + 2 * vocab_size * dim * 4
    if len(blob) != expected:
        raise ValueError(f"encoder parameter file has {len(blob)} bytes, expected {expected}")
    encoder = TrainableEncoder(dim=dim, vocab_size=vocab_size, seed=seed)
    count = vocab_size * dim
    encoder.wq = np.frombuffer(blob, dtype="<f4", count=count, offset=offset) \
        .reshape(vocab_size, dim).astype(np.float64)
    offset += count * 4
    encoder.wp = np.frombuffer(blob, dtype="<f4", count=count, offset=offset) \
        .reshape(vocab_size, dim).astype(np.float64)
    return encoder
