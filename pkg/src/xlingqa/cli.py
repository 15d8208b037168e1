"""Command-line pipeline: ingest, embed, retrieve, answer, mine, eval, and
the seeded end-to-end toy benchmark.

Exit codes: 0 success, 1 usage error, 2 data error, 3 transport error.
Errors print one machine-parsable line: error[<class>]: <message>.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import dense_index, evalkit, miner
from .config import ConfigError, PipelineConfig
from .corpus import (
    CorpusStats,
    DEFAULT_DISAMBIGUATION_MARKERS,
    PassageStore,
    filter_passages,
    load_passages,
    parse_dump,
    passage_to_json,
    segment_article,
)
from .encoder import (
    HashEncoder,
    RemoteEncoder,
    TrainableEncoder,
    encode_passage,
    encode_question,
    load_trainable,
    save_trainable,
)
from .generator import PromptPassage, Question, RemoteGenerator, ToyGenerator, generate
from .remote import TransportError, remote_generate_many


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
    return records


def _load_questions(path: str) -> list[Question]:
    questions = []
    for obj in _read_jsonl(path):
        try:
            questions.append(Question(str(obj["question_id"]), str(obj["lang"]),
                                      str(obj["question"])))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: bad question record: {exc}") from exc
    return questions


def _load_instances(path: str) -> list[miner.QAInstance]:
    instances = []
    for obj in _read_jsonl(path):
        try:
            question = Question(str(obj["question_id"]), str(obj["lang"]),
                                str(obj["question"]))
            instances.append(miner.QAInstance(
                question=question,
                answers=tuple(str(a) for a in obj["answers"]),
                gold_passage_ids=tuple(str(p) for p in obj.get("gold_passage_ids", [])),
            ))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: bad instance record: {exc}") from exc
    return instances


def make_encoder(config: PipelineConfig):
    kind = config.get("encoder.kind")
    dim = config.get_int("encoder.dim")
    seed = config.get_int("encoder.seed")
    if kind == "toy-hash":
        return HashEncoder(dim=dim, seed=seed)
    if kind == "toy-trainable":
        params_path = config.get("paths.encoder_params")
        if os.path.exists(params_path):
            encoder = load_trainable(params_path, seed=seed)
        else:
            encoder = TrainableEncoder(dim=dim, vocab_size=config.get_int("encoder.vocab_size"),
                                       seed=seed)
        encoder.freeze_query_tower = config.get_bool("encoder.freeze_query_tower")
        return encoder
    if kind == "remote":
        return RemoteEncoder(endpoint=config.get("encoder.endpoint"), dim=dim)
    raise ConfigError(f"unknown encoder.kind: {kind}")


def make_generator(config: PipelineConfig, oracle_answers: tuple[str, ...] | None = None):
    kind = config.get("generator.kind")
    max_tokens = config.get_int("generator.max_answer_tokens")
    if kind == "toy-extractive":
        return ToyGenerator(max_answer_tokens=max_tokens, oracle_answers=oracle_answers)
    if kind == "remote":
        return RemoteGenerator(endpoint=config.get("generator.endpoint"),
                               max_answer_tokens=max_tokens,
                               max_in_flight=config.get_int("generator.max_in_flight"))
    raise ConfigError(f"unknown generator.kind: {kind}")


def cmd_ingest(config: PipelineConfig, out: str | None) -> int:
    corpus_path = config.get("paths.corpus")
    passages_path = out or config.get("paths.passages")
    markers = config.get_list("corpus.disambiguation_markers") or DEFAULT_DISAMBIGUATION_MARKERS
    stats = CorpusStats()
    errors: list = []
    lines_out = []
    with open(corpus_path, encoding="utf-8") as handle:
        for article in parse_dump(handle, errors):
            stats.articles[article.lang] += 1
            segments = segment_article(article, config.get_int("corpus.max_tokens"))
            kept, dropped = filter_passages(
                segments, config.get_int("corpus.min_tokens"), markers)
            for passage in kept:
                stats.passages[passage.lang] += 1
                lines_out.append(passage_to_json(passage))
            for count in dropped.values():
                stats.filtered[article.lang] += count
    stats.malformed_lines = len(errors)
    for err in errors[:20]:
        print(f"warning: line {err.line_number}: {err.message}", file=sys.stderr)
    write_atomic(passages_path, "\n".join(lines_out) + ("\n" if lines_out else ""))
    write_atomic(config.get("paths.stats"),
                 json.dumps(stats.to_dict(), indent=2, ensure_ascii=False) + "\n")
    print(f"ingest: {sum(stats.articles.values())} articles -> "
          f"{sum(stats.passages.values())} passages "
          f"({sum(stats.filtered.values())} filtered, {stats.malformed_lines} malformed lines)")
    return 0


def cmd_embed(config: PipelineConfig, out: str | None) -> int:
    passages = load_passages(config.get("paths.passages"))
    encoder = make_encoder(config)
    index = dense_index.build(
        ((p.passage_id, encode_passage(encoder, p)) for p in passages),
        dim=encoder.dim)
    index_path = out or config.get("paths.index")
    dense_index.save(index, index_path)
    print(f"embed: {len(index)} vectors (dim {index.dim}) -> {index_path}")
    return 0


def cmd_retrieve(config: PipelineConfig, questions_path: str, out: str | None) -> int:
    index = dense_index.load(config.get("paths.index"))
    encoder = make_encoder(config)
    questions = _load_questions(questions_path)
    k = config.get_int("retrieval.k")
    queries = [encode_question(encoder, q) for q in questions]
    all_results = dense_index.search_batch(index, queries, k) if questions else []
    lines = []
    for question, results in zip(questions, all_results):
        lines.append(json.dumps({
            "question_id": question.question_id,
            "results": [[r.passage_id, r.score] for r in results],
        }, ensure_ascii=False))
    out_path = out or config.get("paths.retrievals")
    write_atomic(out_path, "\n".join(lines) + ("\n" if lines else ""))
    print(f"retrieve: {len(questions)} questions, k={k} -> {out_path}")
    return 0


def cmd_answer(config: PipelineConfig, questions_path: str, out: str | None) -> int:
    index = dense_index.load(config.get("paths.index"))
    store = PassageStore(load_passages(config.get("paths.passages")))
    encoder = make_encoder(config)
    generator = make_generator(config)
    questions = _load_questions(questions_path)
    k = config.get_int("retrieval.k")
    prompt_k = config.get_int("generator.prompt_passages")

    prompts_passages = []
    for question in questions:
        query = encode_question(encoder, question)
        results = dense_index.search(index, query, k)
        passages = []
        for rank, result in enumerate(results[:prompt_k]):
            passage = store.get(result.passage_id)
            if passage is None:
                raise DataError(f"retrieved passage {result.passage_id} not in passage file")
            passages.append(PromptPassage(rank=rank, title=passage.title, text=passage.text))
        prompts_passages.append(passages)

    if isinstance(generator, RemoteGenerator):
        from .generator import format_prompt

        prompts = [format_prompt(q, ps) for q, ps in zip(questions, prompts_passages)]
        results = remote_generate_many(generator, prompts)
    else:
        results = [generate(generator, q, ps) for q, ps in zip(questions, prompts_passages)]

    lines = [json.dumps({
        "question_id": q.question_id,
        "lang": q.lang,
        "prediction": r.answer,
    }, ensure_ascii=False) for q, r in zip(questions, results)]
    out_path = out or config.get("paths.predictions")
    write_atomic(out_path, "\n".join(lines) + ("\n" if lines else ""))
    print(f"answer: {len(questions)} predictions -> {out_path}")
    return 0


def _mining_oracle_answers(instances, store: PassageStore,
                           table: miner.LanguageLinkTable | None) -> tuple[str, ...]:
    """Answer strings the toy generator may extract: instance answers plus
    their link translations into every corpus language."""
    answers: list[str] = []
    seen = set()

    def add(answer: str):
        if answer and answer not in seen:
            seen.add(answer)
            answers.append(answer)

    corpus_langs = sorted({p.lang for p in store.passages})
    for instance in instances:
        for answer in instance.answers:
            add(answer)
            if table is not None and instance.question.lang == "en":
                for lang in corpus_langs:
                    translated = miner.translate_answer_via_links(answer, lang, table)
                    if translated:
                        add(translated)
    return tuple(answers)


def cmd_mine(config: PipelineConfig, instances_path: str, out: str | None) -> int:
    store = PassageStore(load_passages(config.get("paths.passages")))
    instances = _load_instances(instances_path)
    iteration_config = config.iteration_config()

    table = None
    if iteration_config.langlink_enabled:
        table_path = config.get("paths.link_table")
        if os.path.exists(table_path):
            table = miner.LanguageLinkTable.load_tsv(table_path)
        else:
            print(f"warning: link table {table_path} not found; link expansion disabled",
                  file=sys.stderr)

    encoder = make_encoder(config)
    trainable = isinstance(encoder, TrainableEncoder)
    if config.get("generator.kind") == "toy-extractive":
        generator = make_generator(config, _mining_oracle_answers(instances, store, table))
    else:
        generator = make_generator(config)

    state = miner.MiningState(
        training_set=miner.initial_training_records(instances, store))
    if trainable and not state.training_set:
        raise DataError("no instance has a resolvable gold passage; cannot train")

    for t in range(iteration_config.max_iterations):
        if trainable and state.training_set:
            encoder = miner.update_encoder_from_state(
                encoder, state, store,
                epochs=config.get_int("mining.epochs"),
                learning_rate=config.get_float("mining.learning_rate"),
                batch_size=config.get_int("mining.batch_size"),
                seed=iteration_config.seed + t)
        if t < iteration_config.max_iterations - 1:
            index = dense_index.build(
                ((p.passage_id, encode_passage(encoder, p)) for p in store.passages),
                dim=encoder.dim)
            state = miner.run_iteration(state, instances, index, encoder, generator,
                                        iteration_config, store, table)

    out_path = out or config.get("paths.training_set")
    lines = [json.dumps(r.to_dict(), ensure_ascii=False) for r in state.training_set]
    write_atomic(out_path, "\n".join(lines) + ("\n" if lines else ""))
    write_atomic(config.get("paths.ledger"),
                 json.dumps({"iterations": state.ledger}, indent=2) + "\n")
    if trainable:
        save_trainable(encoder, config.get("paths.encoder_params"))

    if table is not None:
        synth_lines = [json.dumps({
            "kind": "synthetic-generator-examples",
            "consumer": "generator-training",
            "schedule_hint": "introduce-after-initial-epochs",
        })]
        for idx, instance in enumerate(instances):
            if instance.question.lang != "en":
                continue
            rng = np.random.default_rng([iteration_config.seed, 9999, idx])
            for example in miner.synthesize_generator_examples(
                    instance, iteration_config.synthesis_langs, table,
                    iteration_config, rng):
                synth_lines.append(json.dumps(example.to_dict(), ensure_ascii=False))
        write_atomic(config.get("paths.synthetic"), "\n".join(synth_lines) + "\n")

    print(f"mine: {len(state.training_set)} training records after "
          f"{iteration_config.max_iterations} iterations -> {out_path}")
    return 0


def cmd_eval(config: PipelineConfig, predictions_path: str, answers_path: str,
             retrievals_path: str | None, out: str | None) -> int:
    predictions = {str(o["question_id"]): o for o in _read_jsonl(predictions_path)}
    answer_rows = _read_jsonl(answers_path)
    recall_k = config.get_int("eval.recall_k")

    retrieved_by_q: dict[str, list] = {}
    if retrievals_path:
        store = PassageStore(load_passages(config.get("paths.passages")))
        for row in _read_jsonl(retrievals_path):
            passages = []
            for pid, _score in row.get("results", []):
                passage = store.get(pid)
                if passage is not None:
                    passages.append(passage)
            retrieved_by_q[str(row["question_id"])] = passages

    records = []
    for row in answer_rows:
        qid = str(row["question_id"])
        target_lang = str(row["target_lang"])
        answers = evalkit.AnswerSet({lang: tuple(str(a) for a in answer_list)
                                     for lang, answer_list in row["answers"].items()})
        golds = answers.target(target_lang)
        prediction_row = predictions.get(qid)
        f1 = em = bleu_score = None
        missing_target = not golds
        if prediction_row is not None and golds:
            prediction = str(prediction_row["prediction"])
            f1 = evalkit.token_f1(prediction, golds, target_lang)
            em = evalkit.exact_match(prediction, golds, target_lang)
            bleu_score = evalkit.bleu(prediction, golds, target_lang)
        r_target = r_multi = None
        if qid in retrieved_by_q:
            r_target, r_multi = evalkit.recall_at_k(
                retrieved_by_q[qid], answers, target_lang, recall_k)
        records.append(evalkit.QuestionRecord(
            question_id=qid, lang=target_lang, f1=f1, em=em, bleu=bleu_score,
            r_target=r_target, r_multi=r_multi, target_lang_missing=missing_target))

    report = evalkit.aggregate(records)
    out_path = out or config.get("paths.report")
    write_atomic(out_path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    write_atomic(out_path + ".tsv", evalkit.report_tsv(report))
    macro = {k: round(v, 4) for k, v in report.macro.items()}
    print(f"eval: {report.counts.get('questions', 0)} questions, macro {macro} -> {out_path}")
    return 0


def cmd_e2e_toy(config: PipelineConfig, out: str | None) -> int:
    from .synth import BenchmarkSettings, run_toy_benchmark

    settings = BenchmarkSettings(
        seed=config.get_int("seed"),
        n_questions=config.get_int("e2e.questions"),
        cross_fraction=config.get_float("e2e.cross_fraction"),
        distractor_articles=config.get_int("e2e.distractors"),
        dim=config.get_int("e2e.dim"),
        vocab_size=config.get_int("encoder.vocab_size"),
        epochs=config.get_int("mining.epochs"),
        learning_rate=config.get_float("mining.learning_rate"),
        batch_size=config.get_int("mining.batch_size"),
        recall_k=config.get_int("eval.recall_k"),
        mining=config.iteration_config(),
    )
    report = run_toy_benchmark(settings)
    elapsed = report.pop("elapsed_seconds")  # keep the written report rerun-stable
    for row in report["iterations"]:
        print(f"iteration {row['iteration']}: "
              f"R^multi@{report['recall_k']} = {row['r_multi_at_k']:.3f}  "
              f"R^L@{report['recall_k']} = {row['r_target_at_k']:.3f}  "
              f"({row['training_records']} training records)")
    print(f"improvement (R^multi): {report['improvement_r_multi']:+.3f} "
          f"in {elapsed:.1f}s")
    out_path = out or config.get("paths.report")
    write_atomic(out_path, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error[usage]: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="xlingqa", allow_abbrev=False,
                     description="Cross-lingual retrieve-then-generate QA pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--encoder", choices=["toy-hash", "toy-trainable", "remote"],
                       default=None)
        p.add_argument("--generator", choices=["toy-extractive", "remote"], default=None)
        p.add_argument("--endpoint", default=None)
        p.add_argument("--out", default=None)

    common(sub.add_parser("ingest", help="segment and filter a corpus dump"))
    common(sub.add_parser("embed", help="encode passages and build the index"))
    p = sub.add_parser("retrieve", help="run top-k retrieval for questions")
    p.add_argument("questions")
    common(p)
    p = sub.add_parser("answer", help="retrieve, prompt and generate answers")
    p.add_argument("questions")
    common(p)
    p = sub.add_parser("mine", help="run the iterative mining loop")
    p.add_argument("instances")
    common(p)
    p = sub.add_parser("eval", help="score predictions and retrievals")
    p.add_argument("predictions")
    p.add_argument("answers")
    p.add_argument("retrievals", nargs="?", default=None)
    common(p)
    common(sub.add_parser("e2e-toy", help="seeded end-to-end toy benchmark"))
    return parser


def _parse_extras(extras: list[str]) -> dict[str, str]:
    """Extra --section.key value flags override config entries."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or "." not in token.split("=", 1)[0]:
            raise UsageError(f"unrecognized argument: {token}")
        body = token[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        else:
            if i + 1 >= len(extras):
                raise UsageError(f"missing value for {token}")
            key, value = body, extras[i + 1]
            i += 1
        overrides[key] = value
        i += 1
    return overrides


_FLAG_KEYS = {
    "seed": lambda cmd: ["seed", "encoder.seed", "mining.seed"],
    "k": lambda cmd: {"eval": ["eval.recall_k"], "mine": ["mining.retrieve_k"]}.get(
        cmd, ["retrieval.k"]),
    "iterations": lambda cmd: ["mining.iterations"],
    "encoder": lambda cmd: ["encoder.kind"],
    "generator": lambda cmd: ["generator.kind"],
    "endpoint": lambda cmd: ["encoder.endpoint", "generator.endpoint"],
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("error[usage]: a subcommand is required", file=sys.stderr)
            return 1
        overrides = _parse_extras(extras)
        for flag, keys_for in _FLAG_KEYS.items():
            value = getattr(args, flag, None)
            if value is not None:
                for key in keys_for(args.command):
                    overrides[key] = str(value)
        config = PipelineConfig.from_file(args.config, overrides)

        if args.command == "ingest":
            return cmd_ingest(config, args.out)
        if args.command == "embed":
            return cmd_embed(config, args.out)
        if args.command == "retrieve":
            return cmd_retrieve(config, args.questions, args.out)
        if args.command == "answer":
            return cmd_answer(config, args.questions, args.out)
        if args.command == "mine":
            return cmd_mine(config, args.instances, args.out)
        if args.command == "eval":
            return cmd_eval(config, args.predictions, args.answers,
                            args.retrievals, args.out)
        if args.command == "e2e-toy":
            return cmd_e2e_toy(config, args.out)
        print(f"error[usage]: unknown command {args.command}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 1
    except TransportError as exc:
        print(f"error[transport]: {exc}", file=sys.stderr)
        return 3
    except (DataError, ConfigError, FileNotFoundError, ValueError,
            dense_index.IndexFormatError, KeyError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
