"""End-to-end conformance: the engine's remote encoder and generator kinds
drive a live sidecar process through a 10-question answer run, talking only
over the wire protocol and the engine CLI."""

import json
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest
import requests

DIM = 64


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="module")
def sidecar():
    port = _free_port()
    process = subprocess.Popen(
        [sys.executable, "-m", "xlingqa_sidecar", "--port", str(port),
         "--encoder-model", f"stub:{DIM}", "--generator-model", "stub",
         "--max-batch", "64", "--max-answer-tokens", "8"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    endpoint = f"http://127.0.0.1:{port}"
    try:
        deadline = time.monotonic() + 30
        while True:
            try:
                health = requests.get(f"{endpoint}/health", timeout=2).json()
                if health.get("status") == "ok":
                    break
            except requests.RequestException:
                pass
            if time.monotonic() > deadline:
                process.kill()
                out, err = process.communicate(timeout=5)
                raise RuntimeError(f"sidecar did not come up: {err.decode()[:500]}")
            time.sleep(0.2)
        yield endpoint
    finally:
        process.terminate()
        process.wait(timeout=10)


def _engine(args, cwd):
    return subprocess.run([sys.executable, "-m", "xlingqa.cli", *args],
                          cwd=cwd, capture_output=True, text=True)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("engine")
    articles = []
    for i in range(12):
        # articles mention their subject repeatedly, like real pages do
        tokens = [f"landmark{i:02d}" if j % 4 == 0 else f"fact{i:02d}w{j}"
                  for j in range(24)]
        articles.append({"id": f"art{i:02d}", "lang": "en",
                         "title": f"Landmark {i:02d}", "text": " ".join(tokens)})
    (path / "corpus.jsonl").write_text(
        "\n".join(json.dumps(a) for a in articles) + "\n", encoding="utf-8")
    questions = [{"question_id": f"q{i}", "lang": "en",
                  "question": f"tell me about landmark{i:02d}"} for i in range(10)]
    (path / "questions.jsonl").write_text(
        "\n".join(json.dumps(q) for q in questions) + "\n", encoding="utf-8")
    return path


def test_ten_question_answer_run_exit_zero(sidecar, workdir):
    result = _engine(["ingest"], workdir)
    assert result.returncode == 0, result.stderr

    result = _engine(["embed", "--encoder", "remote", "--endpoint", sidecar,
                      "--encoder.dim", str(DIM)], workdir)
    assert result.returncode == 0, result.stderr

    result = _engine(["answer", "questions.jsonl", "--encoder", "remote",
                      "--generator", "remote", "--endpoint", sidecar,
                      "--encoder.dim", str(DIM)], workdir)
    assert result.returncode == 0, result.stderr

    predictions = [json.loads(line) for line
                   in (workdir / "predictions.jsonl").read_text().splitlines()]
    assert len(predictions) == 10
    assert all(set(p) == {"question_id", "lang", "prediction"} for p in predictions)
    assert all(p["prediction"] for p in predictions)


def test_remote_retrieval_prefers_matching_article(sidecar, workdir):
    for args in (["ingest"],
                 ["embed", "--encoder", "remote", "--endpoint", sidecar,
                  "--encoder.dim", str(DIM)]):
        result = _engine(args, workdir)
        assert result.returncode == 0, result.stderr
    result = _engine(["retrieve", "questions.jsonl", "--encoder", "remote",
                      "--endpoint", sidecar, "--encoder.dim", str(DIM),
                      "--k", "3"], workdir)
    assert result.returncode == 0, result.stderr
    rows = [json.loads(line) for line
            in (workdir / "retrievals.jsonl").read_text().splitlines()]
    # the repeated landmark token should pull the matching article to the
    # top for nearly all questions (hash stub, not a trained model)
    hits = sum(1 for i, row in enumerate(rows)
               if row["results"][0][0].startswith(f"art{i:02d}"))
    assert hits >= 8
