"""Model backends.

Identifiers starting with "stub" select deterministic offline backends
(usable in tests and air-gapped environments); anything else is treated as
a Hugging Face model name and loaded lazily through transformers at the
first request.
"""

from __future__ import annotations

import hashlib
import math


class BackendError(Exception):
    pass


def _token_hash(token: str, salt: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                             key=salt.encode("utf-8")[:64]).digest()
    return int.from_bytes(digest, "little")


class StubEncoder:
    """Hash-bucket bag-of-tokens embeddings, L2-normalized and rounded to
    six decimals so golden files stay platform-stable.

    Both modes share the token hash (so question/passage scores correlate,
    like a trained dual encoder); question mode adds a small tower bias so
    the two modes stay distinguishable on identical text."""

    _TOWER_BIAS = 0.25

    def __init__(self, dim: int = 768):
        self.dim = dim
        self._question_bias = self._bias_vector()

    def _bias_vector(self) -> list[float]:
        bias = [0.0] * self.dim
        for i in range(self.dim):
            h = _token_hash(f"bias-{i}", "sidecar-question-tower")
            bias[i] = (1.0 if h & 1 else -1.0) / math.sqrt(self.dim)
        return bias

    def encode(self, texts: list[str], mode: str) -> list[list[float]]:
        vectors = []
        for text in texts:
            buckets = [0.0] * self.dim
            for token in text.split():
                h = _token_hash(token, "sidecar-shared")
                sign = 1.0 if h & 1 else -1.0
                buckets[(h >> 1) % self.dim] += sign
            norm = math.sqrt(sum(v * v for v in buckets))
            if norm > 0:
                buckets = [v / norm for v in buckets]
            if mode == "question":
                buckets = [v + self._TOWER_BIAS * b
                           for v, b in zip(buckets, self._question_bias)]
                norm = math.sqrt(sum(v * v for v in buckets))
                if norm > 0:
                    buckets = [v / norm for v in buckets]
            vectors.append([round(v, 6) for v in buckets])
        return vectors


class StubGenerator:
    """Echoes the leading tokens of the first passage in the prompt.

    Prompts follow the engine grammar "<Q>: ... [lang] <P>: <0: title> text";
    the stub answers with the tokens right after the first passage tag."""

    def generate(self, prompts: list[str], max_tokens: int) -> list[dict]:
        outputs = []
        for prompt in prompts:
            source = prompt
            p_start = prompt.find("<P>: ")
            if p_start >= 0:
                tag_end = prompt.find("> ", p_start)
                if tag_end >= 0:
                    source = prompt[tag_end + 2:]
            tokens = source.split()[:max(max_tokens, 0)]
            text = " ".join(tokens)
            outputs.append({
                "text": text,
                "token_logprobs": [-0.1] * len(tokens),
            })
        return outputs


class TransformersEncoder:
    """Lazy mean-pooled sentence embeddings from a pretrained encoder."""

    def __init__(self, model_name: str):
        self.model_name = model_name
        self._tokenizer = None
        self._model = None
        self.dim = None

    def _ensure_loaded(self):
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise BackendError(
                f"transformers/torch required for model {self.model_name}") from exc
        self._tokenizer = AutoTokenizer.from_pretrained(self.model_name)
        self._model = AutoModel.from_pretrained(self.model_name)
        self._model.eval()
        self.dim = int(self._model.config.hidden_size)

    def encode(self, texts: list[str], mode: str) -> list[list[float]]:
        self._ensure_loaded()
        import torch

        if not texts:
            return []
        with torch.no_grad():
            batch = self._tokenizer(texts, padding=True, truncation=True,
                                    max_length=512, return_tensors="pt")
            hidden = self._model(**batch).last_hidden_state
            mask = batch["attention_mask"].unsqueeze(-1)
            pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
        return [vec.tolist() for vec in pooled]


class TransformersGenerator:
    """Lazy seq2seq generation with per-token log-probabilities."""

    def __init__(self, model_name: str):
        self.model_name = model_name
        self._tokenizer = None
        self._model = None

    def _ensure_loaded(self):
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import AutoModelForSeq2SeqLM, AutoTokenizer
        except ImportError as exc:
            raise BackendError(
                f"transformers/torch required for model {self.model_name}") from exc
        self._tokenizer = AutoTokenizer.from_pretrained(self.model_name)
        self._model = AutoModelForSeq2SeqLM.from_pretrained(self.model_name)
        self._model.eval()

    def generate(self, prompts: list[str], max_tokens: int) -> list[dict]:
        self._ensure_loaded()
        import torch

        outputs = []
        with torch.no_grad():
            for prompt in prompts:
                batch = self._tokenizer([prompt], truncation=True, max_length=1000,
                                        return_tensors="pt")
                result = self._model.generate(
                    **batch, max_new_tokens=max_tokens, do_sample=False,
                    return_dict_in_generate=True, output_scores=True)
                sequence = result.sequences[0]
                generated = sequence[-len(result.scores):]
                logprobs = []
                for step, token_id in zip(result.scores, generated):
                    step_logprobs = torch.log_softmax(step[0], dim=-1)
                    logprobs.append(min(float(step_logprobs[token_id]), 0.0))
                text = self._tokenizer.decode(generated, skip_special_tokens=True)
                outputs.append({"text": text, "token_logprobs": logprobs})
        return outputs


def make_encoder_backend(model_id: str):
    if model_id.startswith("stub"):
        _, _, dim = model_id.partition(":")
        return StubEncoder(dim=int(dim) if dim else 768)
    return TransformersEncoder(model_id)


def make_generator_backend(model_id: str):
    if model_id.startswith("stub"):
        return StubGenerator()
    return TransformersGenerator(model_id)
