"""Few-shot prompt construction and synthetic query generation via an LLM endpoint.

The endpoint speaks a minimal JSON completion contract:
request ``{model, prompt, temperature, max_tokens, stop}``, response
``{"choices": [{"text": ...}]}``. The API key, when needed, comes from the
``RANKFORGE_API_KEY`` environment variable. An ``endpoint`` starting with
``mock:`` selects an in-process deterministic client so the pipeline runs
offline; ``rankforge-mock-llm`` serves the same behavior over HTTP.

Generated queries are deliberately not filtered for quality; every
completion that parses to a non-empty first line becomes one query.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import requests

from .corpus import tokenize
from .errors import (
    AggregateGenerationError,
    EmptyQueryError,
    EndpointError,
    FormatError,
    InvalidConfigError,
    TemplateError,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "RANKFORGE_API_KEY"
DEFAULT_MODEL = "llama-2-7b-chat"

_SLOT_RE = re.compile(r"\{(document|query)\}")
_QUOTE_CHARS = "\"'`“”‘’"


@dataclass
class PromptTemplate:
    preamble: str
    example_block_format: str      # uses {document} and {query}
    target_block_format: str       # uses {document} exactly once, ends at the query cue
    example_separator: str


@dataclass(frozen=True)
class FewShotExample:
    document_text: str
    query: str


@dataclass(frozen=True)
class QueryPrompt:
    doc_id: str
    text: str


@dataclass(frozen=True)
class SyntheticQuery:
    doc_id: str
    query_text: str
    raw_completion: str
    model_name: str


@dataclass
class GenerationSettings:
    temperature: float = 0.0       # greedy decoding by default
    max_new_tokens: int = 64
    max_doc_chars: int = 2048
    shots: int = 3
    request_timeout: float = 30.0
    max_retries: int = 3
    concurrency: int = 4
    backoff_base: float = 0.5
    stop: list[str] = field(default_factory=lambda: ["\n"])

    def validate(self) -> None:
        if self.temperature < 0:
            raise InvalidConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.shots < 0:
            raise InvalidConfigError(f"shots must be >= 0, got {self.shots}")
        if self.max_doc_chars < 1:
            raise InvalidConfigError("max_doc_chars must be >= 1")


def builtin_template_path() -> Path:
    return Path(str(resources.files("rankforge") / "templates" / "inpars.json"))


def builtin_examples_path(name: str) -> Path:
    return Path(str(resources.files("rankforge") / "templates" / f"{name}.jsonl"))


def load_template(path: str | Path) -> PromptTemplate:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    missing = [
        f
        for f in ("preamble", "example_block_format", "target_block_format", "example_separator")
        if f not in obj
    ]
    if missing:
        raise TemplateError(f"{path}: missing template fields {missing}")
    return PromptTemplate(
        preamble=obj["preamble"],
        example_block_format=obj["example_block_format"],
        target_block_format=obj["target_block_format"],
        example_separator=obj["example_separator"],
    )


def load_examples(path: str | Path) -> list[FewShotExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", line_number) from exc
            if "document" not in obj or "query" not in obj:
                raise FormatError("example needs `document` and `query` fields", line_number)
            if not obj["document"] or not obj["query"]:
                raise FormatError("example fields must be non-empty", line_number)
            examples.append(FewShotExample(document_text=obj["document"], query=obj["query"]))
    return examples


def _render(fmt: str, values: dict[str, str]) -> str:
    # single pass so slot-like text inside substituted values is never rescanned
    return _SLOT_RE.sub(lambda m: values.get(m.group(1), m.group(0)), fmt)


def truncate_at_whitespace(text: str, limit: int) -> str:
    """Cut text to at most limit characters, preferring a word boundary."""
    if len(text) <= limit:
        return text
    if text[limit].isspace():
        return text[:limit].rstrip()
    cut = text[:limit]
    last_ws = -1
    for i, ch in enumerate(cut):
        if ch.isspace():
            last_ws = i
    if last_ws <= 0:
        return cut
    return cut[:last_ws].rstrip()


def build_prompt(
    tmpl: PromptTemplate,
    examples: Sequence[FewShotExample],
    target_doc: str,
    settings: GenerationSettings,
) -> str:
    """Assemble preamble, rendered examples, and the target block into one prompt."""
    if tmpl.target_block_format.count("{document}") != 1:
        raise TemplateError("target block must contain {document} exactly once")
    if len(examples) != settings.shots:
        raise InvalidConfigError(f"expected {settings.shots} examples, got {len(examples)}")
    if examples and (
        "{document}" not in tmpl.example_block_format
        or "{query}" not in tmpl.example_block_format
    ):
        raise TemplateError("example block must contain {document} and {query}")
    parts: list[str] = []
    if tmpl.preamble:
        parts.append(tmpl.preamble)
    for ex in examples:
        parts.append(_render(tmpl.example_block_format, {"document": ex.document_text, "query": ex.query}))
    doc = truncate_at_whitespace(target_doc, settings.max_doc_chars)
    parts.append(_render(tmpl.target_block_format, {"document": doc}))
    return tmpl.example_separator.join(parts)


def parse_completion(raw: str) -> str:
    """First line, stripped of whitespace and surrounding quotes; empty is an error."""
    first_line = raw.split("\n", 1)[0]
    cleaned = first_line.strip().strip(_QUOTE_CHARS).strip()
    if not cleaned:
        raise EmptyQueryError("completion parsed to an empty query")
    return cleaned


def deterministic_completion(prompt: str) -> str:
    """Stable pseudo-query derived from the prompt tail; used by the mock endpoint."""
    body = prompt.rstrip()
    cue = body.rfind("\n")
    if cue >= 0:
        body = body[:cue]          # drop the trailing query cue line
    words = tokenize(body[-400:])
    if not words:
        return "placeholder query"
    return "what is known about " + " ".join(words[-6:])


class HttpCompletionClient:
    """Completion client for an HTTP JSON endpoint, with retries and backoff."""

    def __init__(self, endpoint: str, model: str = DEFAULT_MODEL, api_key: str | None = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)

    def complete(self, prompt: str, settings: GenerationSettings) -> str:
        payload = {
            "model": self.model,
            "prompt": prompt,
            "temperature": settings.temperature,
            "max_tokens": settings.max_new_tokens,
            "stop": settings.stop,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(settings.max_retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=settings.request_timeout
                )
                resp.raise_for_status()
                body = resp.json()
                return str(body["choices"][0]["text"])
            except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
                last_error = exc
                if attempt < settings.max_retries:
                    time.sleep(settings.backoff_base * (2 ** attempt))
        raise EndpointError(
            f"request failed after {settings.max_retries + 1} attempts: {last_error}"
        )


class MockCompletionClient:
    """In-process stand-in for the endpoint; deterministic and offline."""

    def __init__(self, model: str = "mock"):
        self.model = model

    def complete(self, prompt: str, settings: GenerationSettings) -> str:
        text = deterministic_completion(prompt)
        for stop in settings.stop:
            text = text.split(stop)[0]
        return text


def make_client(endpoint: str, model: str = DEFAULT_MODEL):
    """Pick the client for an endpoint; `mock:` prefixes run in process."""
    if endpoint.startswith("mock:"):
        return MockCompletionClient(model=model)
    return HttpCompletionClient(endpoint, model=model)


def generate_queries(client, prompts: Sequence[QueryPrompt],
                     settings: GenerationSettings) -> list[SyntheticQuery]:
    """One completion per prompt with bounded fan-out; output follows input order.

    Items that fail transport after retries or parse to an empty query are
    dropped and logged; the call only raises when every request failed.
    """
    results: list[SyntheticQuery | None] = [None] * len(prompts)
    transport_failures = 0
    with ThreadPoolExecutor(max_workers=max(1, settings.concurrency)) as pool:
        futures = {
            pool.submit(client.complete, prompts[i].text, settings): i
            for i in range(len(prompts))
        }
        for fut in as_completed(futures):
            i = futures[fut]
            try:
                raw = fut.result()
            except EndpointError as exc:
                transport_failures += 1
                log.warning("generation failed for doc %s: %s", prompts[i].doc_id, exc)
                continue
            try:
                query_text = parse_completion(raw)
            except EmptyQueryError:
                log.warning("dropping doc %s: completion parsed empty", prompts[i].doc_id)
                continue
            results[i] = SyntheticQuery(
                doc_id=prompts[i].doc_id,
                query_text=query_text,
                raw_completion=raw,
                model_name=client.model,
            )
    if prompts and transport_failures == len(prompts):
        raise AggregateGenerationError(transport_failures)
    return [r for r in results if r is not None]


def save_queries(queries: Sequence[SyntheticQuery], path: str | Path) -> None:
    """Persist queries as JSONL {doc_id, query, model}."""
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps({"doc_id": q.doc_id, "query": q.query_text, "model": q.model_name}) + "\n")


def load_queries(path: str | Path) -> list[SyntheticQuery]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", line_number) from exc
            if "doc_id" not in obj or "query" not in obj:
                raise FormatError("query record needs `doc_id` and `query`", line_number)
            queries.append(
                SyntheticQuery(
                    doc_id=obj["doc_id"],
                    query_text=obj["query"],
                    raw_completion=obj.get("raw", obj["query"]),
                    model_name=obj.get("model", "unknown"),
                )
            )
    return queries
