"""Pipeline configuration: a flat UTF-8 key-value file with dotted section
keys, defaults per module, and command-line overrides (flags win)."""

from __future__ import annotations

from dataclasses import dataclass, field

from .evalkit import DEFAULT_MDPR_LANGS, DEFAULT_MGEN_LANGS, DEFAULT_SEEN_LANGS
from .miner import DEFAULT_SYNTHESIS_LANGS, IterationConfig

DEFAULTS: dict[str, str] = {
    "paths.corpus": "corpus.jsonl",
    "paths.passages": "passages.jsonl",
    "paths.index": "index.xlidx",
    "paths.link_table": "links.tsv",
    "paths.training_set": "training_set.jsonl",
    "paths.ledger": "mining_ledger.json",
    "paths.synthetic": "synthetic_generator_examples.jsonl",
    "paths.predictions": "predictions.jsonl",
    "paths.retrievals": "retrievals.jsonl",
    "paths.report": "report.json",
    "paths.encoder_params": "encoder.xlenc",
    "paths.stats": "corpus_stats.json",
    "corpus.max_tokens": "100",
    "corpus.min_tokens": "20",
    "corpus.disambiguation_markers": "",  # empty -> built-in defaults
    "encoder.kind": "toy-hash",
    "encoder.dim": "768",
    "encoder.seed": "0",
    "encoder.vocab_size": "4096",
    "encoder.endpoint": "http://127.0.0.1:8901",
    "encoder.freeze_query_tower": "false",
    "generator.kind": "toy-extractive",
    "generator.endpoint": "http://127.0.0.1:8901",
    "generator.prompt_passages": "10",
    "generator.max_answer_tokens": "10",
    "generator.max_in_flight": "4",
    "retrieval.k": "15",
    "mining.retrieve_k": "10",
    "mining.iterations": "2",
    "mining.langlink_enabled": "true",
    "mining.language_cap": "10",
    "mining.subsample_rate": "0.5",
    "mining.seed": "0",
    "mining.max_negatives": "8",
    "mining.epochs": "30",
    "mining.learning_rate": "15.0",
    "mining.batch_size": "16",
    "mining.synthesis_langs": ",".join(DEFAULT_SYNTHESIS_LANGS),
    "eval.recall_k": "10",
    "eval.seen_langs": ",".join(DEFAULT_SEEN_LANGS),
    "eval.mdpr_langs": ",".join(DEFAULT_MDPR_LANGS),
    "eval.mgen_langs": ",".join(DEFAULT_MGEN_LANGS),
    "e2e.questions": "100",
    "e2e.cross_fraction": "0.4",
    "e2e.distractors": "25",
    "e2e.dim": "64",
    "seed": "0",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path=None, overrides: dict[str, str] | None = None) -> "PipelineConfig":
        values = dict(DEFAULTS)
        if path is not None:
            values.update(parse_config_file(path))
        if overrides:
            for key, value in overrides.items():
                values[key] = value
        return cls(values)

    def get(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"unknown config key: {key}")
        return self.values[key]

    def get_int(self, key: str) -> int:
        raw = self.get(key)
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key} must be an integer, got {raw!r}") from exc

    def get_float(self, key: str) -> float:
        raw = self.get(key)
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key} must be a number, got {raw!r}") from exc

    def get_bool(self, key: str) -> bool:
        raw = self.get(key).strip().lower()
        if raw in _TRUE:
            return True
        if raw in _FALSE:
            return False
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")

    def get_list(self, key: str) -> list[str]:
        raw = self.get(key)
        return [item.strip() for item in raw.split(",") if item.strip()]

    def iteration_config(self) -> IterationConfig:
        return IterationConfig(
            retrieve_k=self.get_int("mining.retrieve_k"),
            max_iterations=self.get_int("mining.iterations"),
            langlink_enabled=self.get_bool("mining.langlink_enabled"),
            langlink_language_cap=self.get_int("mining.language_cap"),
            synthetic_subsample_rate=self.get_float("mining.subsample_rate"),
            seed=self.get_int("mining.seed"),
            max_negatives=self.get_int("mining.max_negatives"),
            synthesis_langs=tuple(self.get_list("mining.synthesis_langs")),
        )


def parse_config_file(path) -> dict[str, str]:
    """`key = value` lines; # starts a comment; blank lines ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values
