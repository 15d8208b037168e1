"""Seeded synthetic multilingual corpora with planted answers, plus the
end-to-end toy benchmark that measures retrieval recall across mining
iterations.

Entity subjects and answers are digit-bearing tokens of fixed width so no
planted string can occur as a substring of another token; filler words are
purely alphabetic pseudo-language vocabulary.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dense_index
from .corpus import Article, Passage, PassageStore, filter_passages, segment_article
from .encoder import TrainableEncoder, encode_passage
from .evalkit import AnswerSet, recall_at_k
from .generator import Question, ToyGenerator
from .miner import (
    IterationConfig,
    LanguageLinkTable,
    MiningState,
    QAInstance,
    initial_training_records,
    run_iteration,
    update_encoder_from_state,
)

_SYLLABLES = {
    "en": ["ta", "ren", "dor", "mi", "sel", "on", "ka", "ve", "lu", "ster"],
    "xx": ["zho", "qua", "pli", "vra", "ghu", "xan", "tre", "klo", "wim", "dzu"],
    "yy": ["afa", "ubo", "ike", "olo", "eme", "ypa", "uru", "asi", "oko", "ewa"],
}

_SUBJECT_STEM = {"en": "Norvik", "xx": "Zhuqar", "yy": "Obanta"}
_ANSWER_STEM = {"en": "akron", "xx": "vexul", "yy": "ibem"}


def _filler_vocab(lang: str, size: int, rng: np.random.Generator) -> list[str]:
    syllables = _SYLLABLES.get(lang, _SYLLABLES["xx"])
    vocab = []
    seen = set()
    while len(vocab) < size:
        n = int(rng.integers(2, 4))
        word = "".join(syllables[int(rng.integers(0, len(syllables)))] for _ in range(n))
        if word not in seen:
            seen.add(word)
            vocab.append(word)
    return vocab


def _subject(lang: str, i: int) -> str:
    return f"{_SUBJECT_STEM.get(lang, 'Qel')}{i:03d}"


def _answer(lang: str, i: int) -> str:
    return f"{_ANSWER_STEM.get(lang, 'uvo')}{i:03d}ek"


@dataclass
class ToyWorld:
    langs: tuple[str, ...]
    articles: list[Article]
    passages: list[Passage]
    store: PassageStore
    link_table: LanguageLinkTable
    instances: list[QAInstance]
    answer_sets: dict[str, AnswerSet]
    oracle_answers: tuple[str, ...]
    cross_question_ids: tuple[str, ...]
    tokens_per_passage: int = 30


def build_toy_world(seed: int = 0, n_questions: int = 100, cross_fraction: float = 0.4,
                    langs: Sequence[str] = ("en", "xx"), passages_per_article: int = 2,
                    distractor_articles: int | None = 25, tokens_per_passage: int = 30,
                    target_passages: int | None = None) -> ToyWorld:
    """Build a linked multilingual corpus with planted answers.

    A `cross_fraction` share of questions is evidence-cross-only: their
    answer strings appear solely in the linked non-English articles, and
    those articles share no tokens with the question, so they are reachable
    only through language-link expansion.

    With `target_passages` set, distractor articles are appended until the
    corpus holds exactly that many passages.
    """
    if "en" not in langs:
        raise ValueError("the toy world needs an English side")
    rng = np.random.default_rng(seed)
    fillers = {lang: _filler_vocab(lang, 80, rng) for lang in langs}
    other_langs = [lang for lang in langs if lang != "en"]

    n_cross = round(n_questions * cross_fraction)
    cross = [i < n_cross for i in range(n_questions)]
    # interleave so batches mix both kinds
    order = rng.permutation(n_questions)
    cross = [cross[i] for i in order]

    def passage_tokens(lang: str, plant: str | None, subject_token: str) -> list[str]:
        pool = fillers[lang]
        tokens = [subject_token]
        tokens += [pool[int(rng.integers(0, len(pool)))]
                   for _ in range(tokens_per_passage - 1)]
        if plant is not None:
            slot = int(rng.integers(1, tokens_per_passage))
            tokens[slot] = plant
        return tokens

    articles: list[Article] = []
    instances: list[QAInstance] = []
    answer_sets: dict[str, AnswerSet] = {}
    oracle: list[str] = []
    cross_ids: list[str] = []
    table = LanguageLinkTable()

    for i in range(n_questions):
        subjects = {lang: _subject(lang, i) for lang in langs}
        answers = {lang: _answer(lang, i) for lang in langs}
        table.add(f"S{i:03d}", dict(subjects))
        table.add(f"A{i:03d}", dict(answers))
        oracle.extend(answers[lang] for lang in langs)

        is_cross = cross[i]
        en_tokens: list[str] = []
        for p in range(passages_per_article):
            plant = None
            if not is_cross and p < 2:
                plant = answers["en"]  # gold passage and one non-gold mention
            en_tokens += passage_tokens("en", plant, subjects["en"])
        articles.append(Article(f"en-{i:03d}", "en", subjects["en"], " ".join(en_tokens)))

        for lang in other_langs:
            lang_tokens: list[str] = []
            for p in range(passages_per_article):
                plant = answers[lang] if p == 0 else None
                lang_tokens += passage_tokens(lang, plant, subjects[lang])
            articles.append(Article(f"{lang}-{i:03d}", lang, subjects[lang],
                                    " ".join(lang_tokens)))

        question_id = f"q{i:03d}"
        question = Question(question_id, "en", f"which figure anchors {subjects['en']}")
        instances.append(QAInstance(
            question=question,
            answers=(answers["en"],),
            gold_passage_ids=(f"en-{i:03d}-0",),
        ))
        answer_sets[question_id] = AnswerSet(
            {lang: (answers[lang],) for lang in langs})
        if is_cross:
            cross_ids.append(question_id)

    def distractor(d: int, lang: str, n_passages: int) -> Article:
        tokens: list[str] = []
        for _ in range(n_passages):
            tokens += passage_tokens(lang, None, fillers[lang][d % len(fillers[lang])])
        return Article(f"{lang}-dx{d:03d}", lang, f"Dx{lang}{d:03d}", " ".join(tokens))

    if target_passages is not None:
        have = n_questions * len(langs) * passages_per_article
        if have > target_passages:
            raise ValueError(f"entity passages ({have}) already exceed target_passages")
        d = 0
        while have < target_passages:
            lang = langs[d % len(langs)]
            n = min(passages_per_article, target_passages - have)
            articles.append(distractor(d, lang, n))
            have += n
            d += 1
    else:
        for d in range(distractor_articles or 0):
            for lang in langs:
                articles.append(distractor(d, lang, passages_per_article))

    passages: list[Passage] = []
    for article in articles:
        passages.extend(segment_article(article, max_tokens=tokens_per_passage))
    kept, _ = filter_passages(passages, min_tokens=min(20, tokens_per_passage))

    return ToyWorld(
        langs=tuple(langs),
        articles=articles,
        passages=kept,
        store=PassageStore(kept),
        link_table=table,
        instances=instances,
        answer_sets=answer_sets,
        oracle_answers=tuple(oracle),
        cross_question_ids=tuple(cross_ids),
        tokens_per_passage=tokens_per_passage,
    )


def embed_corpus(world: ToyWorld, encoder) -> dense_index.DenseIndex:
    pairs = [(p.passage_id, encode_passage(encoder, p)) for p in world.passages]
    return dense_index.build(pairs, dim=encoder.dim)


def measure_recall(world: ToyWorld, index: dense_index.DenseIndex, encoder,
                   k: int = 10) -> dict[str, float]:
    """Mean R^L@k and R^multi@k over the toy question set."""
    from .encoder import encode_question

    target_hits = 0
    multi_hits = 0
    for instance in world.instances:
        query = encode_question(encoder, instance.question)
        results = dense_index.search(index, query, k)
        retrieved = [world.store.by_id[r.passage_id] for r in results]
        answers = world.answer_sets[instance.question.question_id]
        r_target, r_multi = recall_at_k(retrieved, answers, instance.question.lang, k)
        target_hits += int(r_target)
        multi_hits += int(r_multi)
    n = len(world.instances)
    return {"r_target": target_hits / n, "r_multi": multi_hits / n}


@dataclass
class BenchmarkSettings:
    seed: int = 0
    n_questions: int = 100
    cross_fraction: float = 0.4
    distractor_articles: int = 25
    dim: int = 64
    vocab_size: int = 4096
    epochs: int = 30
    learning_rate: float = 15.0
    batch_size: int = 16
    recall_k: int = 10
    mining: IterationConfig = field(default_factory=IterationConfig)


def run_toy_benchmark(settings: BenchmarkSettings | None = None) -> dict:
    """Algorithm-1 style loop on the toy world: train the encoder on the
    accumulated set, re-embed, measure recall, then mine (skipped in the
    final iteration). Returns the recall trajectory."""
    settings = settings or BenchmarkSettings()
    started = time.monotonic()
    world = build_toy_world(
        seed=settings.seed,
        n_questions=settings.n_questions,
        cross_fraction=settings.cross_fraction,
        distractor_articles=settings.distractor_articles,
    )
    generator = ToyGenerator(oracle_answers=world.oracle_answers)
    encoder = TrainableEncoder(dim=settings.dim, vocab_size=settings.vocab_size,
                               seed=settings.seed)
    state = MiningState(
        training_set=initial_training_records(world.instances, world.store))
    config = settings.mining

    iterations = []
    for t in range(config.max_iterations):
        encoder = update_encoder_from_state(
            encoder, state, world.store, epochs=settings.epochs,
            learning_rate=settings.learning_rate, batch_size=settings.batch_size,
            seed=settings.seed + t)
        index = embed_corpus(world, encoder)
        recall = measure_recall(world, index, encoder, k=settings.recall_k)
        iterations.append({
            "iteration": t,
            "r_target_at_k": recall["r_target"],
            "r_multi_at_k": recall["r_multi"],
            "training_records": len(state.training_set),
        })
        if t < config.max_iterations - 1:
            state = run_iteration(state, world.instances, index, encoder, generator,
                                  config, world.store, world.link_table)

    return {
        "seed": settings.seed,
        "questions": settings.n_questions,
        "corpus_passages": len(world.passages),
        "cross_questions": len(world.cross_question_ids),
        "recall_k": settings.recall_k,
        "iterations": iterations,
        "improvement_r_multi": iterations[-1]["r_multi_at_k"] - iterations[0]["r_multi_at_k"],
        "mining_ledger": state.ledger,
        "elapsed_seconds": round(time.monotonic() - started, 3),
    }
