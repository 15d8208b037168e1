"""HTTP client for the model-sidecar wire protocol.

POST {endpoint}/encode   {"mode": "question"|"passage", "texts": [...]}
POST {endpoint}/generate {"prompts": [...], "max_tokens": int}
GET  {endpoint}/health
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
import requests

from .generator import GenerationResult, PromptPassage, Question, format_prompt


class TransportError(Exception):
    """A remote call failed; the message names the endpoint."""


def _post(endpoint: str, route: str, payload: dict, timeout: float = 60.0) -> dict:
    url = endpoint.rstrip("/") + route
    try:
        response = requests.post(url, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc
    if response.status_code != 200:
        raise TransportError(
            f"{url} returned HTTP {response.status_code}: {response.text[:200]}")
    try:
        return response.json()
    except ValueError as exc:
        raise TransportError(f"{url} returned non-JSON body") from exc


def health(endpoint: str, timeout: float = 10.0) -> dict:
    url = endpoint.rstrip("/") + "/health"
    try:
        response = requests.get(url, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc
    if response.status_code != 200:
        raise TransportError(f"{url} returned HTTP {response.status_code}")
    return response.json()


def remote_encode(handle, texts: Sequence[str], mode: str) -> list[np.ndarray]:
    """Encode texts through the sidecar, batching to handle.batch_size."""
    vectors: list[np.ndarray] = []
    for start in range(0, len(texts), handle.batch_size):
        chunk = list(texts[start:start + handle.batch_size])
        body = _post(handle.endpoint, "/encode", {"mode": mode, "texts": chunk})
        got = body.get("vectors")
        if got is None or len(got) != len(chunk):
            raise TransportError(
                f"{handle.endpoint}/encode returned {0 if got is None else len(got)} "
                f"vectors for {len(chunk)} texts")
        for vec in got:
            arr = np.asarray(vec, dtype=np.float32)
            if arr.shape != (handle.dim,):
                raise TransportError(
                    f"{handle.endpoint}/encode returned dim {arr.shape}, expected {handle.dim}")
            vectors.append(arr)
    return vectors


def _result_from_output(output: dict) -> GenerationResult:
    logprobs = tuple(float(lp) for lp in output.get("token_logprobs", []))
    return GenerationResult(
        answer=str(output.get("text", "")),
        token_logprobs=logprobs,
        sequence_logprob=sum(logprobs),
    )


def remote_generate_prompts(handle, prompts: Sequence[str]) -> list[GenerationResult]:
    body = _post(handle.endpoint, "/generate",
                 {"prompts": list(prompts), "max_tokens": handle.max_answer_tokens})
    outputs = body.get("outputs")
    if outputs is None or len(outputs) != len(prompts):
        raise TransportError(
            f"{handle.endpoint}/generate returned {0 if outputs is None else len(outputs)} "
            f"outputs for {len(prompts)} prompts")
    return [_result_from_output(o) for o in outputs]


def remote_generate(handle, question: Question,
                    passages: Sequence[PromptPassage]) -> GenerationResult:
    prompt = format_prompt(question, list(passages))
    return remote_generate_prompts(handle, [prompt])[0]


def remote_generate_many(handle, prompts: Sequence[str],
                         batch_size: int = 8) -> list[GenerationResult]:
    """Batch prompts and issue up to handle.max_in_flight requests at once."""
    batches = [list(prompts[i:i + batch_size]) for i in range(0, len(prompts), batch_size)]
    if not batches:
        return []
    if handle.max_in_flight <= 1 or len(batches) == 1:
        results = []
        for batch in batches:
            results.extend(remote_generate_prompts(handle, batch))
        return results
    with ThreadPoolExecutor(max_workers=handle.max_in_flight) as pool:
        chunks = list(pool.map(lambda b: remote_generate_prompts(handle, b), batches))
    return [result for chunk in chunks for result in chunk]
