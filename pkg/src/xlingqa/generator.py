"""Answer generation contract: prompt assembly, a deterministic extractive
toy generator, answer normalization, and passage labeling."""

from __future__ import annotations

import re
import string
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .corpus import Passage, join_tokens, tokenize

DEFAULT_MAX_ANSWER_TOKENS = 10
DEFAULT_PROMPT_PASSAGES = 10
DEFAULT_MAX_IN_FLIGHT = 4


@dataclass(frozen=True)
class Question:
    question_id: str
    lang: str
    text: str

    def __post_init__(self):
        if not self.lang:
            raise ValueError("lang must be non-empty")


@dataclass(frozen=True)
class PromptPassage:
    rank: int
    title: str
    text: str


@dataclass(frozen=True)
class GenerationResult:
    answer: str
    token_logprobs: tuple[float, ...]
    sequence_logprob: float

    def __post_init__(self):
        if any(lp > 0 for lp in self.token_logprobs):
            raise ValueError("token log-probabilities must be <= 0")
        if abs(self.sequence_logprob - sum(self.token_logprobs)) > 1e-6:
            raise ValueError("sequence_logprob must equal the sum of token_logprobs")


class Label(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class ToyGenerator:
    """Deterministic extractive generator.

    With `oracle_answers` set (test mode) it returns the first attached
    answer found verbatim in a passage, scanning passages in rank order;
    passages whose text is listed in `fail_texts` are treated as
    unextractable so tests can construct answer-bearing passages the
    generator still rejects. Without oracle answers it falls back to a
    content-word overlap heuristic.
    """

    kind: str = "toy-extractive"
    max_answer_tokens: int = DEFAULT_MAX_ANSWER_TOKENS
    oracle_answers: tuple[str, ...] | None = None
    fail_texts: frozenset[str] = field(default_factory=frozenset)


@dataclass(frozen=True)
class RemoteGenerator:
    kind: str = "remote"
    endpoint: str = ""
    max_answer_tokens: int = DEFAULT_MAX_ANSWER_TOKENS
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT


GeneratorHandle = ToyGenerator  # toy is the default handle kind


def format_prompt(question: Question, passages: Sequence[PromptPassage]) -> str:
    """Serialize a question plus ranked passages into the generator prompt.

    Grammar (normative, single spaces):
      "<Q>: " question " [" lang "] <P>: " then per passage
      "<rank: title> text" joined by single spaces.
    """
    for expected, passage in enumerate(passages):
        if passage.rank != expected:
            raise ValueError(f"passage ranks must be contiguous from 0, got {passage.rank}")
    parts = [f"<{p.rank}: {p.title}> {p.text}" for p in passages]
    return f"<Q>: {question.text} [{question.lang}] <P>: " + " ".join(parts)


_PROMPT_HEAD = re.compile(r"^<Q>: (.*) \[([^\[\]]*)\] <P>: (.*)$", re.DOTALL)
_PASSAGE_TAG = re.compile(r"<(\d+): ([^<>]*)>")


def parse_prompt(prompt: str) -> tuple[str, str, list[PromptPassage]]:
    """Invert format_prompt for delimiter-free questions, titles and texts
    (no '<' or '>' in titles/texts, no '[' or ']' in the question)."""
    head = _PROMPT_HEAD.match(prompt)
    if head is None:
        raise ValueError("not a well-formed prompt")
    question_text, lang, body = head.groups()
    passages = []
    tags = list(_PASSAGE_TAG.finditer(body))
    for i, tag in enumerate(tags):
        text_start = tag.end() + 1  # single space after '>'
        text_end = tags[i + 1].start() - 1 if i + 1 < len(tags) else len(body)
        passages.append(PromptPassage(
            rank=int(tag.group(1)),
            title=tag.group(2),
            text=body[text_start:text_end],
        ))
    return question_text, lang, passages


def normalize_answer(text: str) -> str:
    """NFKC, lowercase, trim, collapse internal whitespace, strip
    leading/trailing ASCII punctuation."""
    text = unicodedata.normalize("NFKC", text).lower().strip()
    text = " ".join(text.split())
    return text.strip(string.punctuation).strip()


def answer_matches(prediction: str, gold: str, lang: str = "") -> bool:
    return normalize_answer(prediction) == normalize_answer(gold)


def _first_span(passage: PromptPassage, lang: str, max_tokens: int) -> str:
    tokens = tokenize(passage.text, lang)[:max_tokens]
    return join_tokens(tokens, lang)


def _content_words(question: Question) -> set[str]:
    return {tok.lower() for tok in tokenize(question.text, question.lang) if len(tok) > 1}


def _result(answer: str, lang: str) -> GenerationResult:
    n_tokens = len(tokenize(answer, lang))
    return GenerationResult(answer=answer, token_logprobs=(0.0,) * n_tokens, sequence_logprob=0.0)


def generate(handle, question: Question, passages: Sequence[PromptPassage]) -> GenerationResult:
    """Produce an answer for the question given ranked passages."""
    if isinstance(handle, RemoteGenerator):
        from .remote import remote_generate

        return remote_generate(handle, question, passages)
    if not passages:
        return GenerationResult(answer="", token_logprobs=(), sequence_logprob=0.0)
    if handle.oracle_answers is not None:
        for passage in passages:
            if passage.text in handle.fail_texts:
                continue
            for answer in handle.oracle_answers:
                if answer and answer in passage.text:
                    return _result(answer, question.lang)
        return _result(_first_span(passages[0], question.lang, handle.max_answer_tokens),
                       question.lang)
    words = _content_words(question)
    best = passages[0]
    best_overlap = -1
    for passage in passages:
        overlap = sum(1 for tok in tokenize(passage.text, question.lang) if tok.lower() in words)
        if overlap > best_overlap:
            best, best_overlap = passage, overlap
    return _result(_first_span(best, question.lang, handle.max_answer_tokens), question.lang)


def label_passage(handle, question: Question, passage: Passage, gold_answer: str) -> Label:
    """Label one passage by whether the generator reproduces the gold answer
    from it alone. Filters spurious passages that merely contain the string."""
    prompt_passage = PromptPassage(rank=0, title=passage.title, text=passage.text)
    result = generate(handle, question, [prompt_passage])
    if answer_matches(result.answer, gold_answer, question.lang):
        return Label.POSITIVE
    return Label.NEGATIVE
