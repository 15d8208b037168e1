"""Build the multilingual passage collection: parse article dumps, split
articles into fixed-length token segments, and filter out disambiguation
and near-empty pages."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

DEFAULT_MAX_TOKENS = 100
DEFAULT_MIN_TOKENS = 20

# Scripts written without word spacing are tokenized per character.
CHARWISE_LANGS = frozenset({"ja", "th", "km"})

DEFAULT_DISAMBIGUATION_MARKERS = (
    "(disambiguation)",
    "(desambiguación)",
    "(desambiguação)",
    "(homonymie)",
    "(begriffsklärung)",
    "(disambigua)",
    "(doorverwijspagina)",
    "(ujednoznacznienie)",
    "(täsmennyssivu)",
    "(olika betydelser)",
    "(значения)",
    "(曖昧さ回避)",
)


@dataclass(frozen=True)
class Article:
    article_id: str
    lang: str
    title: str
    text: str

    def __post_init__(self):
        if not self.article_id:
            raise ValueError("article_id must be non-empty")
        if not self.lang:
            raise ValueError("lang must be non-empty")


@dataclass(frozen=True)
class Passage:
    passage_id: str
    article_id: str
    lang: str
    title: str
    text: str
    token_count: int


@dataclass
class CorpusStats:
    """Ingestion counters, keyed per language where that makes sense."""

    articles: Counter = field(default_factory=Counter)
    passages: Counter = field(default_factory=Counter)
    filtered: Counter = field(default_factory=Counter)
    malformed_lines: int = 0

    def to_dict(self) -> dict:
        return {
            "articles": dict(sorted(self.articles.items())),
            "passages": dict(sorted(self.passages.items())),
            "filtered": dict(sorted(self.filtered.items())),
            "malformed_lines": self.malformed_lines,
        }


@dataclass(frozen=True)
class DumpError:
    """A recoverable per-line problem found while parsing a dump."""

    line_number: int
    message: str


def is_charwise(lang: str) -> bool:
    lang = lang.lower()
    return lang in CHARWISE_LANGS or lang.startswith("zh")


def tokenize(text: str, lang: str) -> list[str]:
    """Deterministic script-aware tokenizer.

    Space-delimited scripts yield maximal non-whitespace runs; scripts
    without word spacing (ja, zh-*, th, km) yield one token per
    non-whitespace character.
    """
    if is_charwise(lang):
        return [ch for ch in text if not ch.isspace()]
    return text.split()


def join_tokens(tokens: list[str], lang: str) -> str:
    return ("" if is_charwise(lang) else " ").join(tokens)


def parse_dump(lines: Iterable[str], errors: list[DumpError] | None = None) -> Iterator[Article]:
    """Parse a JSON-lines article dump.

    Each line must be a JSON object with keys id, title, text, lang.
    Malformed lines are recorded in `errors` (when given) with their
    1-based line number and skipped; parsing continues.
    """
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            if errors is not None:
                errors.append(DumpError(lineno, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(obj, dict):
            if errors is not None:
                errors.append(DumpError(lineno, "line is not a JSON object"))
            continue
        missing = [key for key in ("id", "title", "text", "lang") if key not in obj]
        if missing:
            if errors is not None:
                errors.append(DumpError(lineno, f"missing fields: {', '.join(missing)}"))
            continue
        try:
            yield Article(
                article_id=str(obj["id"]),
                lang=str(obj["lang"]),
                title=str(obj["title"]),
                text=str(obj["text"]),
            )
        except ValueError as exc:
            if errors is not None:
                errors.append(DumpError(lineno, str(exc)))


def segment_article(article: Article, max_tokens: int = DEFAULT_MAX_TOKENS) -> list[Passage]:
    """Split an article into consecutive segments of at most max_tokens tokens.

    The segments partition the article's token sequence in order; every
    segment except possibly the last has exactly max_tokens tokens.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    tokens = tokenize(article.text, article.lang)
    passages = []
    for chunk_index, start in enumerate(range(0, len(tokens), max_tokens)):
        chunk = tokens[start:start + max_tokens]
        passages.append(Passage(
            passage_id=f"{article.article_id}-{chunk_index}",
            article_id=article.article_id,
            lang=article.lang,
            title=article.title,
            text=join_tokens(chunk, article.lang),
            token_count=len(chunk),
        ))
    return passages


def filter_passages(
    passages: Iterable[Passage],
    min_tokens: int = DEFAULT_MIN_TOKENS,
    disambiguation_markers: Iterable[str] = DEFAULT_DISAMBIGUATION_MARKERS,
) -> tuple[list[Passage], Counter]:
    """Drop passages from disambiguation-marked titles or with fewer than
    min_tokens tokens. Returns (kept, per-reason drop counts)."""
    markers = [m.lower() for m in disambiguation_markers]
    kept = []
    dropped = Counter()
    for passage in passages:
        title = passage.title.lower()
        if any(marker in title for marker in markers):
            dropped["disambiguation"] += 1
        elif passage.token_count < min_tokens:
            dropped["short"] += 1
        else:
            kept.append(passage)
    return kept, dropped


class PassageStore:
    """In-memory lookup over a passage collection: by passage id, by source
    article id, and by (lang, article title)."""

    def __init__(self, passages: Iterable[Passage]):
        self.passages: list[Passage] = []
        self.by_id: dict[str, Passage] = {}
        self.by_article: dict[str, list[Passage]] = {}
        self.by_lang_title: dict[tuple[str, str], list[Passage]] = {}
        for passage in passages:
            if passage.passage_id in self.by_id:
                raise ValueError(f"duplicate passage_id: {passage.passage_id}")
            self.passages.append(passage)
            self.by_id[passage.passage_id] = passage
            self.by_article.setdefault(passage.article_id, []).append(passage)
            self.by_lang_title.setdefault((passage.lang, passage.title), []).append(passage)

    def __len__(self) -> int:
        return len(self.passages)

    def get(self, passage_id: str) -> Passage | None:
        return self.by_id.get(passage_id)

    def article_passages(self, article_id: str) -> list[Passage]:
        return list(self.by_article.get(article_id, []))

    def find_article(self, lang: str, title: str) -> list[Passage]:
        return list(self.by_lang_title.get((lang, title), []))


def passage_to_json(passage: Passage) -> str:
    return json.dumps({
        "passage_id": passage.passage_id,
        "article_id": passage.article_id,
        "lang": passage.lang,
        "title": passage.title,
        "text": passage.text,
        "token_count": passage.token_count,
    }, ensure_ascii=False)


def passage_from_json(line: str) -> Passage:
    obj = json.loads(line)
    return Passage(
        passage_id=obj["passage_id"],
        article_id=obj["article_id"],
        lang=obj["lang"],
        title=obj["title"],
        text=obj["text"],
        token_count=int(obj["token_count"]),
    )


def load_passages(path) -> list[Passage]:
    with open(path, encoding="utf-8") as handle:
        return [passage_from_json(line) for line in handle if line.strip()]
