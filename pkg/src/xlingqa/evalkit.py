"""Answer and retrieval scoring: token F1, exact match, smoothed sentence
BLEU, recall at k against target-language and any-language answer sets,
language availability categories, and macro aggregation."""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .corpus import Passage, tokenize
from .generator import answer_matches, normalize_answer


class LanguageCategory(Enum):
    SEEN = "seen"
    MDPR_SEEN = "mdpr-seen"
    MGEN_SEEN = "mgen-seen"
    UNSEEN = "unseen"


# Languages with gold paragraph+answer annotations in the initial training
# data (the seven gold-annotated languages plus English).
DEFAULT_SEEN_LANGS = ("en", "ar", "bn", "fi", "ja", "ko", "ru", "te")
# Remaining reference-corpus languages, covered via retriever data mining.
DEFAULT_MDPR_LANGS = ("es", "sv", "he", "th", "id")
# Languages covered only by synthetic generator training data.
DEFAULT_MGEN_LANGS = ("da", "de", "fr", "it", "nl", "pl", "pt")


@dataclass(frozen=True)
class AnswerSet:
    """Acceptable answers per language for one question."""

    by_lang: dict[str, tuple[str, ...]]

    def __post_init__(self):
        if not self.by_lang:
            raise ValueError("answer set must cover at least one language")

    def target(self, lang: str) -> tuple[str, ...]:
        return self.by_lang.get(lang, ())

    def union(self) -> tuple[str, ...]:
        answers = []
        for lang in sorted(self.by_lang):
            answers.extend(self.by_lang[lang])
        return tuple(answers)


@dataclass(frozen=True)
class QuestionRecord:
    """Per-question scores feeding aggregation."""

    question_id: str
    lang: str
    f1: float | None = None
    em: bool | None = None
    bleu: float | None = None
    r_target: bool | None = None
    r_multi: bool | None = None
    target_lang_missing: bool = False


@dataclass
class EvalReport:
    per_lang: dict[str, dict[str, float]] = field(default_factory=dict)
    macro: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    flagged_missing_target: int = 0

    def to_dict(self) -> dict:
        return {
            "per_lang": {lang: dict(vals) for lang, vals in sorted(self.per_lang.items())},
            "macro": dict(self.macro),
            "counts": dict(sorted(self.counts.items())),
            "flagged_missing_target": self.flagged_missing_target,
        }


def _metric_tokens(text: str, lang: str) -> list[str]:
    # Normalize exactly like exact_match so EM == true forces F1 == 1.
    return tokenize(normalize_answer(text), lang)


def token_f1(prediction: str, golds: Sequence[str], lang: str) -> float:
    """Max over golds of the harmonic mean of token precision and recall
    (multiset overlap over normalized script-aware tokens)."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = _metric_tokens(prediction, lang)
    best = 0.0
    for gold in golds:
        gold_tokens = _metric_tokens(gold, lang)
        if not pred_tokens or not gold_tokens:
            score = 1.0 if pred_tokens == gold_tokens else 0.0
        else:
            overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
            if overlap == 0:
                score = 0.0
            else:
                precision = overlap / len(pred_tokens)
                recall = overlap / len(gold_tokens)
                score = 2 * precision * recall / (precision + recall)
        best = max(best, score)
    return best


def exact_match(prediction: str, golds: Sequence[str], lang: str) -> bool:
    if not golds:
        raise ValueError("golds must be non-empty")
    return any(answer_matches(prediction, gold, lang) for gold in golds)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(prediction: str, golds: Sequence[str], lang: str) -> float:
    """Sentence-level BLEU, max over golds.

    Geometric mean of modified n-gram precisions for n = 1..min(4, |pred|),
    with an add-one floor of 1/(total+1) for orders that match nothing, and
    the usual brevity penalty exp(1 - |gold|/|pred|) when the prediction is
    shorter than the gold.
    """
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = _metric_tokens(prediction, lang)
    if not pred_tokens:
        return 0.0
    best = 0.0
    max_order = min(4, len(pred_tokens))
    for gold in golds:
        gold_tokens = _metric_tokens(gold, lang)
        if not gold_tokens:
            continue
        log_precision_sum = 0.0
        for n in range(1, max_order + 1):
            pred_ngrams = _ngram_counts(pred_tokens, n)
            gold_ngrams = _ngram_counts(gold_tokens, n)
            total = sum(pred_ngrams.values())
            matched = sum((pred_ngrams & gold_ngrams).values())
            precision = matched / total if matched > 0 else 1.0 / (total + 1)
            log_precision_sum += math.log(precision)
        geo_mean = math.exp(log_precision_sum / max_order)
        c, r = len(pred_tokens), len(gold_tokens)
        brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
        best = max(best, brevity * geo_mean)
    return best


def _nfkc(text: str) -> str:
    return unicodedata.normalize("NFKC", text)


def recall_at_k(retrieved: Sequence[Passage], answers: AnswerSet, target_lang: str,
                k: int) -> tuple[bool, bool]:
    """(hit in target-language answers, hit in any language's answers) over
    the first k passages, by NFKC substring containment."""
    if k < 1:
        raise ValueError("k must be >= 1")
    texts = [_nfkc(p.text) for p in retrieved[:k]]

    def hit(answer_strings: Iterable[str]) -> bool:
        for answer in answer_strings:
            needle = _nfkc(answer)
            if needle and any(needle in text for text in texts):
                return True
        return False

    return hit(answers.target(target_lang)), hit(answers.union())


def categorize_language(lang: str,
                        seen_langs: Iterable[str] = DEFAULT_SEEN_LANGS,
                        mdpr_langs: Iterable[str] = DEFAULT_MDPR_LANGS,
                        mgen_langs: Iterable[str] = DEFAULT_MGEN_LANGS) -> LanguageCategory:
    """First matching category by priority seen > mdpr-seen > mgen-seen."""
    code = lang.lower()
    if code in {l.lower() for l in seen_langs}:
        return LanguageCategory.SEEN
    if code in {l.lower() for l in mdpr_langs}:
        return LanguageCategory.MDPR_SEEN
    if code in {l.lower() for l in mgen_langs}:
        return LanguageCategory.MGEN_SEEN
    return LanguageCategory.UNSEEN


def _mean(values: list[float]) -> float:
    # fsum is exactly rounded, so aggregation is permutation invariant
    return math.fsum(values) / len(values)


def aggregate(records: Iterable[QuestionRecord]) -> EvalReport:
    """Per-language means, then unweighted macro means across languages."""
    by_lang: dict[str, list[QuestionRecord]] = {}
    flagged = 0
    for record in records:
        by_lang.setdefault(record.lang, []).append(record)
        if record.target_lang_missing:
            flagged += 1

    report = EvalReport(flagged_missing_target=flagged)
    metrics = ("f1", "em", "bleu", "r_target", "r_multi")
    for lang, lang_records in sorted(by_lang.items()):
        stats: dict[str, float] = {"count": float(len(lang_records))}
        for metric in metrics:
            values = [float(getattr(r, metric)) for r in lang_records
                      if getattr(r, metric) is not None]
            if values:
                stats[metric] = _mean(values)
        report.per_lang[lang] = stats
    for metric in metrics:
        lang_means = [stats[metric] for stats in report.per_lang.values() if metric in stats]
        if lang_means:
            report.macro[metric] = _mean(lang_means)
    report.counts = {
        "questions": sum(len(v) for v in by_lang.values()),
        "languages": len(by_lang),
    }
    return report


def report_tsv(report: EvalReport) -> str:
    """Per-language rows mirroring the metric table layout."""
    columns = ["lang", "count", "f1", "em", "bleu", "r_target", "r_multi"]
    lines = ["\t".join(columns)]
    for lang, stats in sorted(report.per_lang.items()):
        row = [lang, str(int(stats.get("count", 0)))]
        for metric in columns[2:]:
            row.append(f"{stats[metric]:.4f}" if metric in stats else "-")
        lines.append("\t".join(row))
    macro_row = ["macro", str(report.counts.get("questions", 0))]
    for metric in columns[2:]:
        macro_row.append(f"{report.macro[metric]:.4f}" if metric in report.macro else "-")
    lines.append("\t".join(macro_row))
    return "\n".join(lines) + "\n"
