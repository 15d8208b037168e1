"""Iterative training-data mining: retrieve candidates, expand them through
article-level language links, label them with the generator, and grow the
training set across iterations. Also synthesizes cross-language generator
training examples from English instances."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import dense_index
from .corpus import Passage, PassageStore
from .encoder import TrainingExample, encode_question, train_step
from .generator import PromptPassage, Question, answer_matches, generate

# Default target languages for synthetic generator examples.
DEFAULT_SYNTHESIS_LANGS = (
    "ar", "fi", "ja", "ko", "ru", "es", "sv", "he", "th",
    "da", "fr", "it", "nl", "pl", "pt",
)


@dataclass(frozen=True)
class QAInstance:
    question: Question
    answers: tuple[str, ...]
    gold_passage_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.answers:
            raise ValueError("answers must be non-empty")


class LanguageLinkTable:
    """Entity-keyed map from language code to article title.

    File format: TSV, one entity per line:
    entity_id TAB lang:title TAB lang:title ...
    """

    def __init__(self, records: dict[str, dict[str, str]] | None = None):
        self.records: dict[str, dict[str, str]] = {}
        self._title_to_entity: dict[tuple[str, str], str] = {}
        if records:
            for entity_id, titles in records.items():
                self.add(entity_id, titles)

    @staticmethod
    def _key(title: str) -> str:
        return unicodedata.normalize("NFKC", title).strip()

    def add(self, entity_id: str, titles: dict[str, str]) -> None:
        if entity_id in self.records:
            raise ValueError(f"duplicate entity_id: {entity_id}")
        clean = {}
        for lang, title in titles.items():
            if not title:
                raise ValueError(f"empty title for {entity_id}/{lang}")
            clean[lang] = title
            key = (lang, self._key(title))
            # first entity wins on colliding titles
            self._title_to_entity.setdefault(key, entity_id)
        self.records[entity_id] = clean

    def entity_for_title(self, lang: str, title: str) -> str | None:
        return self._title_to_entity.get((lang, self._key(title)))

    def title(self, entity_id: str, lang: str) -> str | None:
        return self.records.get(entity_id, {}).get(lang)

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def load_tsv(cls, path) -> "LanguageLinkTable":
        table = cls()
        with open(path, encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, start=1):
                line = raw.rstrip("\n")
                if not line.strip():
                    continue
                fields = line.split("\t")
                entity_id, pairs = fields[0], fields[1:]
                titles = {}
                for pair in pairs:
                    if ":" not in pair:
                        raise ValueError(f"line {lineno}: malformed lang:title field {pair!r}")
                    lang, title = pair.split(":", 1)
                    if lang in titles:
                        raise ValueError(f"line {lineno}: duplicate language {lang}")
                    titles[lang] = title
                table.add(entity_id, titles)
        return table

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for entity_id in self.records:
                titles = self.records[entity_id]
                parts = [entity_id] + [f"{lang}:{titles[lang]}" for lang in sorted(titles)]
                handle.write("\t".join(parts) + "\n")


@dataclass(frozen=True)
class IterationConfig:
    retrieve_k: int = 10
    max_iterations: int = 2
    langlink_enabled: bool = True
    langlink_language_cap: int = 10
    synthetic_subsample_rate: float = 0.5
    seed: int = 0
    max_negatives: int = 8
    synthesis_langs: tuple[str, ...] = DEFAULT_SYNTHESIS_LANGS

    def __post_init__(self):
        if self.retrieve_k < 1:
            raise ValueError("retrieve_k must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 <= self.synthetic_subsample_rate <= 1.0:
            raise ValueError("synthetic_subsample_rate must be in [0, 1]")


@dataclass(frozen=True)
class TrainingRecord:
    """One serialized training-set entry (question plus labeled passage ids)."""

    question_id: str
    lang: str
    question: str
    answers: tuple[str, ...]
    positive_passage_ids: tuple[str, ...]
    negative_passage_ids: tuple[str, ...]
    iteration: int

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "lang": self.lang,
            "question": self.question,
            "answers": list(self.answers),
            "positive_passage_ids": list(self.positive_passage_ids),
            "negative_passage_ids": list(self.negative_passage_ids),
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainingRecord":
        return cls(
            question_id=obj["question_id"],
            lang=obj["lang"],
            question=obj["question"],
            answers=tuple(obj["answers"]),
            positive_passage_ids=tuple(obj["positive_passage_ids"]),
            negative_passage_ids=tuple(obj["negative_passage_ids"]),
            iteration=int(obj["iteration"]),
        )

    def to_example(self, store: PassageStore) -> TrainingExample:
        positives = tuple(store.by_id[pid] for pid in self.positive_passage_ids)
        negatives = tuple(store.by_id[pid] for pid in self.negative_passage_ids)
        return TrainingExample(
            question=Question(self.question_id, self.lang, self.question),
            positives=positives,
            negatives=negatives,
        )


@dataclass
class MiningState:
    iteration: int = 0
    training_set: list[TrainingRecord] = field(default_factory=list)
    ledger: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "training_set": [r.to_dict() for r in self.training_set],
            "ledger": list(self.ledger),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def initial_training_records(instances: Sequence[QAInstance],
                             store: PassageStore) -> list[TrainingRecord]:
    """Seed training set: each instance paired with its resolvable gold
    passages (instances without golds contribute nothing)."""
    records = []
    for instance in instances:
        gold = [pid for pid in instance.gold_passage_ids if pid in store.by_id]
        if not gold:
            continue
        records.append(TrainingRecord(
            question_id=instance.question.question_id,
            lang=instance.question.lang,
            question=instance.question.text,
            answers=instance.answers,
            positive_passage_ids=tuple(gold),
            negative_passage_ids=(),
            iteration=0,
        ))
    return records


def mine_from_retrieval(instance: QAInstance, index: dense_index.DenseIndex,
                        encoder, k: int, store: PassageStore) -> list[Passage]:
    """Top-k retrieved passages in any language, deduplicated, excluding the
    instance's gold passages."""
    query = encode_question(encoder, instance.question)
    results = dense_index.search(index, query, k)
    gold = set(instance.gold_passage_ids)
    passages = []
    seen = set()
    for result in results:
        if result.passage_id in gold or result.passage_id in seen:
            continue
        passage = store.get(result.passage_id)
        if passage is None:
            continue
        seen.add(result.passage_id)
        passages.append(passage)
    return passages


def translate_answer_via_links(answer_en: str, target_lang: str,
                               table: LanguageLinkTable) -> str | None:
    """Title of the entity matching the English answer in target_lang, if a
    link exists. Non-entity answers have no table entry and return None."""
    entity_id = table.entity_for_title("en", answer_en)
    if entity_id is None:
        return None
    return table.title(entity_id, target_lang)


def expand_via_language_links(instance: QAInstance, table: LanguageLinkTable,
                              store: PassageStore, language_cap: int = 10,
                              rng: np.random.Generator | None = None) -> list[Passage]:
    """All passages of the non-English articles linked to the instance's
    gold article, as positive candidates. When more languages are linked
    than language_cap allows, the languages are sampled with the given rng."""
    if instance.question.lang != "en":
        raise ValueError("language-link expansion applies to English instances")
    if rng is None:
        rng = np.random.default_rng(0)
    by_lang: dict[str, list[Passage]] = {}
    for gold_id in instance.gold_passage_ids:
        gold_passage = store.get(gold_id)
        if gold_passage is None:
            continue
        entity_id = table.entity_for_title("en", gold_passage.title)
        if entity_id is None:
            continue
        for lang, linked_title in table.records[entity_id].items():
            if lang == "en":
                continue
            article_passages = store.find_article(lang, linked_title)
            if article_passages:
                by_lang.setdefault(lang, []).extend(article_passages)
    langs = sorted(by_lang)
    if len(langs) > language_cap:
        picked = rng.choice(len(langs), size=language_cap, replace=False)
        langs = [langs[i] for i in sorted(picked)]
    candidates = []
    seen = set()
    for lang in langs:
        for passage in by_lang[lang]:
            if passage.passage_id not in seen:
                seen.add(passage.passage_id)
                candidates.append(passage)
    return candidates


def label_candidates(candidates: Sequence[Passage], instance: QAInstance,
                     generator_handle, extra_answers: Sequence[str] = (),
                     failures: list | None = None) -> tuple[list[Passage], list[Passage]]:
    """Partition candidates into positives and negatives: a candidate is
    positive iff the generator reproduces some gold (or link-translated)
    answer from it alone. Per-candidate generation failures are skipped and
    recorded in `failures` when given."""
    golds = list(instance.answers) + [a for a in extra_answers if a]
    positives, negatives = [], []
    for passage in candidates:
        prompt_passage = PromptPassage(rank=0, title=passage.title, text=passage.text)
        try:
            result = generate(generator_handle, instance.question, [prompt_passage])
        except Exception as exc:  # noqa: BLE001 - remote failures must not kill mining
            if failures is not None:
                failures.append((passage.passage_id, str(exc)))
            continue
        if any(answer_matches(result.answer, gold, instance.question.lang) for gold in golds):
            positives.append(passage)
        else:
            negatives.append(passage)
    return positives, negatives


def _candidate_translations(instance: QAInstance, candidates: Sequence[Passage],
                            table: LanguageLinkTable) -> list[str]:
    """Link-translate the instance's answers into every candidate language
    so foreign-language evidence can be labeled against them."""
    langs = sorted({p.lang for p in candidates if p.lang != instance.question.lang})
    translations = []
    for lang in langs:
        for answer in instance.answers:
            translated = translate_answer_via_links(answer, lang, table)
            if translated and translated not in translations:
                translations.append(translated)
    return translations


def run_iteration(state: MiningState, instances: Sequence[QAInstance],
                  index: dense_index.DenseIndex, encoder, generator_handle,
                  config: IterationConfig, store: PassageStore,
                  table: LanguageLinkTable | None = None) -> MiningState:
    """One mining pass over all instances: retrieval mining, language-link
    expansion for English instances, generator labeling, and an atomic
    append of the new training records."""
    if state.iteration >= config.max_iterations:
        raise ValueError(
            f"iteration {state.iteration} already at max_iterations {config.max_iterations}")
    t = state.iteration
    new_records = []
    counts = {
        "iteration": t + 1,
        "candidates": 0,
        "positives": 0,
        "negatives": 0,
        "link_expansions": 0,
        "zero_positive_instances": 0,
        "generation_failures": 0,
        "examples_added": 0,
    }
    for idx, instance in enumerate(instances):
        rng = np.random.default_rng([config.seed, t, idx])
        candidates = mine_from_retrieval(instance, index, encoder, config.retrieve_k, store)
        if config.langlink_enabled and table is not None and instance.question.lang == "en":
            gold = set(instance.gold_passage_ids)
            known = {p.passage_id for p in candidates}
            for passage in expand_via_language_links(
                    instance, table, store, config.langlink_language_cap, rng):
                if passage.passage_id in gold or passage.passage_id in known:
                    continue
                known.add(passage.passage_id)
                candidates.append(passage)
                counts["link_expansions"] += 1
        counts["candidates"] += len(candidates)
        extra_answers = _candidate_translations(instance, candidates, table) if table else []
        failures: list = []
        positives, negatives = label_candidates(
            candidates, instance, generator_handle, extra_answers, failures)
        counts["generation_failures"] += len(failures)
        counts["positives"] += len(positives)
        counts["negatives"] += len(negatives)
        if not positives:
            counts["zero_positive_instances"] += 1
            continue
        new_records.append(TrainingRecord(
            question_id=instance.question.question_id,
            lang=instance.question.lang,
            question=instance.question.text,
            answers=instance.answers,
            positive_passage_ids=tuple(p.passage_id for p in positives),
            negative_passage_ids=tuple(p.passage_id for p in negatives[:config.max_negatives]),
            iteration=t + 1,
        ))
    counts["examples_added"] = len(new_records)
    # commit phase: nothing above mutated the state
    state.training_set.extend(new_records)
    state.ledger.append(counts)
    state.iteration = t + 1
    return state


@dataclass(frozen=True)
class SyntheticExample:
    question_id: str
    question: str
    lang_tag: str
    answer: str

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "question": self.question,
            "lang_tag": self.lang_tag,
            "answer": self.answer,
        }


def synthesize_generator_examples(instance: QAInstance, langs: Sequence[str],
                                  table: LanguageLinkTable, config: IterationConfig,
                                  rng: np.random.Generator) -> list[SyntheticExample]:
    """Cross-language generator training data: the English question tagged
    with a target language code plus the link-translated answer. Languages
    beyond the cap are sampled, then each emission is kept at the
    configured subsample rate."""
    if instance.question.lang != "en":
        raise ValueError("synthetic examples are built from English instances")
    candidates = [lang for lang in langs if lang != "en"]
    if len(candidates) > config.langlink_language_cap:
        picked = rng.choice(len(candidates), size=config.langlink_language_cap, replace=False)
        candidates = [candidates[i] for i in sorted(picked)]
    examples = []
    for lang in candidates:
        if rng.random() >= config.synthetic_subsample_rate:
            continue
        for answer in instance.answers:
            translated = translate_answer_via_links(answer, lang, table)
            if translated is not None:
                examples.append(SyntheticExample(
                    question_id=instance.question.question_id,
                    question=instance.question.text,
                    lang_tag=lang,
                    answer=translated,
                ))
                break
    return examples


def update_encoder_from_state(encoder, state: MiningState, store: PassageStore,
                              epochs: int, learning_rate: float,
                              batch_size: int = 8, seed: int = 0):
    """Minibatch gradient descent over the accumulated training set.
    Deterministic for a fixed seed; epochs=0 leaves the encoder unchanged."""
    if not state.training_set:
        raise ValueError("training set is empty")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    examples = [record.to_example(store) for record in state.training_set]
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(examples))
        for start in range(0, len(order), batch_size):
            batch = [examples[i] for i in order[start:start + batch_size]]
            encoder, _ = train_step(encoder, batch, learning_rate)
    return encoder


def save_training_set(records: Iterable[TrainingRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def load_training_set(path) -> list[TrainingRecord]:
    with open(path, encoding="utf-8") as handle:
        return [TrainingRecord.from_dict(json.loads(line))
                for line in handle if line.strip()]
