import json

import numpy as np
import pytest

from xlingqa.cli import main
from xlingqa.config import PipelineConfig, parse_config_file
from xlingqa.corpus import PassageStore, load_passages, passage_to_json
from xlingqa.encoder import HashEncoder, encode_passage, encode_question
from xlingqa.generator import Question


def _write_corpus(path):
    articles = [
        {"id": "a1", "title": "Long Article", "lang": "en",
         "text": " ".join(f"tok{i}" for i in range(230))},
        {"id": "a2", "title": "Short", "lang": "en",
         "text": " ".join(f"s{i}" for i in range(19))},
        {"id": "a3", "title": "Mercury (disambiguation)", "lang": "en",
         "text": " ".join(f"d{i}" for i in range(50))},
    ]
    path.write_text("\n".join(json.dumps(a) for a in articles) + "\n", encoding="utf-8")


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _write_corpus(tmp_path / "corpus.jsonl")
    return tmp_path


class TestConfig:
    def test_parse_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nencoder.dim = 32\npaths.index = x.xlidx\n",
                       encoding="utf-8")
        values = parse_config_file(cfg)
        assert values == {"encoder.dim": "32", "paths.index": "x.xlidx"}

    def test_defaults_and_overrides(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("encoder.dim = 32\n", encoding="utf-8")
        config = PipelineConfig.from_file(cfg, {"encoder.dim": "16"})
        assert config.get_int("encoder.dim") == 16  # flag wins
        assert config.get_int("corpus.max_tokens") == 100

    def test_typed_errors(self):
        config = PipelineConfig.from_file(None, {"encoder.dim": "not-a-number"})
        from xlingqa.config import ConfigError

        with pytest.raises(ConfigError):
            config.get_int("encoder.dim")
        with pytest.raises(ConfigError):
            config.get("no.such.key")


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_subcommand(self, capsys):
        assert main([]) == 1
        assert "error[usage]" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["ingest", "--no-such-flag"]) == 1
        assert "error[usage]" in capsys.readouterr().err


class TestIngest:
    def test_hand_segmented_fixture(self, workdir, capsys):
        assert main(["ingest"]) == 0
        passages = load_passages(workdir / "passages.jsonl")
        # 230 tokens -> 100/100/30; 19-token article dropped; disambiguation dropped
        assert [(p.passage_id, p.token_count) for p in passages] == [
            ("a1-0", 100), ("a1-1", 100), ("a1-2", 30)]
        stats = json.loads((workdir / "corpus_stats.json").read_text())
        assert stats["articles"]["en"] == 3
        assert stats["passages"]["en"] == 3
        assert stats["filtered"]["en"] == 2
        assert stats["malformed_lines"] == 0

    def test_rerun_byte_identical(self, workdir):
        assert main(["ingest"]) == 0
        first = (workdir / "passages.jsonl").read_bytes()
        assert main(["ingest"]) == 0
        assert (workdir / "passages.jsonl").read_bytes() == first

    def test_missing_corpus(self, workdir, capsys):
        assert main(["ingest", "--paths.corpus", "absent.jsonl"]) == 2
        assert "error[data]" in capsys.readouterr().err


class TestEmbedRetrieve:
    def _pipeline(self, workdir, dim="32"):
        assert main(["ingest"]) == 0
        assert main(["embed", "--encoder.dim", dim]) == 0

    def test_retrieve_top1_matches_brute_force(self, workdir):
        self._pipeline(workdir)
        questions = [{"question_id": "q1", "lang": "en", "question": "tok5 tok6 tok7"}]
        (workdir / "questions.jsonl").write_text(
            "\n".join(json.dumps(q) for q in questions) + "\n", encoding="utf-8")
        assert main(["retrieve", "questions.jsonl", "--k", "1",
                     "--encoder.dim", "32"]) == 0
        row = json.loads((workdir / "retrievals.jsonl").read_text().splitlines()[0])

        # brute-force oracle over the hash encodings
        encoder = HashEncoder(dim=32, seed=0)
        store = PassageStore(load_passages(workdir / "passages.jsonl"))
        question = Question("q1", "en", "tok5 tok6 tok7")
        q = encode_question(encoder, question).astype(np.float64)
        scored = sorted(
            ((float(encode_passage(encoder, p).astype(np.float64) @ q), p.passage_id)
             for p in store.passages), key=lambda t: (-t[0], t[1]))
        assert row["results"][0][0] == scored[0][1]
        assert row["results"][0][1] == pytest.approx(scored[0][0], rel=1e-6)

    def test_embed_then_load_roundtrip(self, workdir):
        self._pipeline(workdir)
        from xlingqa import dense_index

        index = dense_index.load(workdir / "index.xlidx")
        assert len(index) == 3 and index.dim == 32


class TestAnswerEval:
    def test_answer_feeds_eval(self, workdir):
        assert main(["ingest"]) == 0
        assert main(["embed", "--encoder.dim", "32"]) == 0
        questions = [{"question_id": "q1", "lang": "en", "question": "tok5 tok6"}]
        (workdir / "questions.jsonl").write_text(json.dumps(questions[0]) + "\n",
                                                 encoding="utf-8")
        assert main(["answer", "questions.jsonl", "--encoder.dim", "32"]) == 0
        prediction = json.loads((workdir / "predictions.jsonl").read_text().splitlines()[0])
        assert set(prediction) == {"question_id", "lang", "prediction"}

        answers = {"question_id": "q1", "target_lang": "en",
                   "answers": {"en": [prediction["prediction"]]}}
        (workdir / "answers.jsonl").write_text(json.dumps(answers) + "\n", encoding="utf-8")
        assert main(["eval", "predictions.jsonl", "answers.jsonl", "retrievals.jsonl"]) == 2
        # retrievals file does not exist yet -> data error; now create it
        assert main(["retrieve", "questions.jsonl", "--encoder.dim", "32"]) == 0
        assert main(["eval", "predictions.jsonl", "answers.jsonl", "retrievals.jsonl"]) == 0
        report = json.loads((workdir / "report.json").read_text())
        assert report["per_lang"]["en"]["em"] == 1.0
        assert report["per_lang"]["en"]["f1"] == 1.0
        assert (workdir / "report.json.tsv").exists()

    def test_transport_error_exit_code(self, workdir):
        assert main(["ingest"]) == 0
        assert main(["embed", "--encoder.dim", "32"]) == 0
        (workdir / "questions.jsonl").write_text(
            json.dumps({"question_id": "q1", "lang": "en", "question": "x"}) + "\n",
            encoding="utf-8")
        code = main(["answer", "questions.jsonl", "--encoder.dim", "32",
                     "--generator", "remote",
                     "--endpoint", "http://127.0.0.1:1"])
        assert code == 3


class TestMine:
    def _world_files(self, workdir):
        passages = [
            {"passage_id": "en-alpha-0", "article_id": "en-alpha", "lang": "en",
             "title": "Alpha Corp", "text": "Alpha Corp builds widget77x units",
             "token_count": 5},
            {"passage_id": "en-alpha-1", "article_id": "en-alpha", "lang": "en",
             "title": "Alpha Corp", "text": "more prose about Alpha Corp",
             "token_count": 5},
            {"passage_id": "xx-alpha-0", "article_id": "xx-alpha", "lang": "xx",
             "title": "Alfa Korp", "text": "zhoqua Alfa Korp widgetXX77",
             "token_count": 4},
        ]
        (workdir / "passages.jsonl").write_text(
            "\n".join(json.dumps(p) for p in passages) + "\n", encoding="utf-8")
        (workdir / "links.tsv").write_text(
            "S-alpha\ten:Alpha Corp\txx:Alfa Korp\n"
            "A-alpha\ten:widget77x\txx:widgetXX77\n", encoding="utf-8")
        instance = {"question_id": "q1", "lang": "en",
                    "question": "who builds widgets at Alpha Corp",
                    "answers": ["widget77x"], "gold_passage_ids": ["en-alpha-0"]}
        (workdir / "instances.jsonl").write_text(json.dumps(instance) + "\n",
                                                 encoding="utf-8")

    def test_mine_with_trainable_encoder(self, workdir):
        self._world_files(workdir)
        assert main(["mine", "instances.jsonl", "--encoder", "toy-trainable",
                     "--encoder.dim", "16", "--encoder.vocab_size", "128",
                     "--mining.epochs", "2", "--mining.learning_rate", "1.0",
                     "--iterations", "2"]) == 0
        records = [json.loads(line) for line
                   in (workdir / "training_set.jsonl").read_text().splitlines()]
        assert records[0]["iteration"] == 0  # seed record from gold
        assert any(r["iteration"] == 1 for r in records)
        mined = next(r for r in records if r["iteration"] == 1)
        assert "xx-alpha-0" in mined["positive_passage_ids"]
        ledger = json.loads((workdir / "mining_ledger.json").read_text())
        assert len(ledger["iterations"]) == 1  # mining skipped in the final iteration
        assert (workdir / "encoder.xlenc").exists()
        synth_lines = (workdir / "synthetic_generator_examples.jsonl") \
            .read_text().splitlines()
        assert json.loads(synth_lines[0])["kind"] == "synthetic-generator-examples"

    def test_mine_rerun_byte_identical(self, workdir):
        self._world_files(workdir)
        args = ["mine", "instances.jsonl", "--encoder", "toy-hash",
                "--encoder.dim", "16", "--iterations", "2"]
        assert main(args) == 0
        first = (workdir / "training_set.jsonl").read_bytes()
        first_ledger = (workdir / "mining_ledger.json").read_bytes()
        assert main(args) == 0
        assert (workdir / "training_set.jsonl").read_bytes() == first
        assert (workdir / "mining_ledger.json").read_bytes() == first_ledger


class TestE2eToy:
    def test_small_run_writes_report(self, workdir):
        assert main(["e2e-toy", "--e2e.questions", "20", "--e2e.distractors", "5",
                     "--mining.epochs", "10", "--e2e.dim", "32",
                     "--out", "toy_report.json"]) == 0
        report = json.loads((workdir / "toy_report.json").read_text())
        assert len(report["iterations"]) == 2
        assert "elapsed_seconds" not in report  # rerun-stable output

    def test_rerun_byte_identical(self, workdir):
        args = ["e2e-toy", "--e2e.questions", "12", "--e2e.distractors", "4",
                "--mining.epochs", "6", "--e2e.dim", "16", "--out", "r.json"]
        assert main(args) == 0
        first = (workdir / "r.json").read_bytes()
        assert main(args) == 0
        assert (workdir / "r.json").read_bytes() == first
