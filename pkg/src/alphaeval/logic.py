"""Financial-logic scoring of alpha expressions by a chat-completion model.

The request is a single user message built from :data:`PROMPT_TEMPLATE`; the
answer is expected to be a JSON array of ``{factor, score, explanation}``
objects. A :class:`MockClient` answers from a local table so the whole pipeline
runs offline and deterministically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .errors import InvalidParameterError, LlmResponseError, LlmTransportError, VerdictMismatchError

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = """Below is a set of quantitative factor expressions designed using qlib syntax.

Please score each factor from 50 to 100 based on the rationality of financial market logic (full score), and provide the corresponding logical explanation.

When scoring, differences in scores can be larger: logical factors can receive very high scores, and vice versa.

We also prefer longer factors, as this aligns with the goal of automated search.

Factor list: {factor_expressions}

Please return a pure JSON array only, without any Markdown code blocks. "

The array length should match the factor list, and each element should be an object containing:
- factor: the factor expression
- score: numeric score (0–100)
- explanation: a brief logical explanation"""

SLOT = "{factor_expressions}"
PROMPTED_FLOOR = 50.0


@dataclass
class LogicVerdict:
    factor: str
    score: float
    explanation: str = ""
    clamped: bool = False
    below_prompted_range: bool = False


@dataclass
class LlmConfig:
    endpoint: str = ""
    model: str = ""
    max_tokens: int = 1000
    temperature: float = 0.2
    api_key_env: str = "ALPHAEVAL_LLM_KEY"
    batch_size: int = 20
    max_in_flight: int = 4
    retries: int = 3
    backoff: float = 1.0
    timeout: float = 60.0
    score_bounds: tuple[float, float] = (0.0, 100.0)
    cache_path: str | None = None
    debug: bool = False


def build_prompt(expressions: Sequence[str]) -> str:
    """Fill the factor slot of the template with a numbered list, one expression per line."""
    if not expressions:
        raise InvalidParameterError("build_prompt needs at least one expression")
    listing = "".join(f"\n{i}. {expr}" for i, expr in enumerate(expressions, start=1))
    return PROMPT_TEMPLATE.replace(SLOT, listing)


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------

_FENCE = re.compile(r"```[A-Za-z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


def _extract_array(raw: str) -> str:
    text = raw.strip()
    fenced = _FENCE.search(text)
    if fenced:
        text = fenced.group(1).strip()
    start, end = text.find("["), text.rfind("]")
    if start == -1 or end < start:
        raise LlmResponseError("response contains no JSON array", raw)
    return text[start : end + 1]


def _normalize(expr: str) -> str:
    return re.sub(r"\s+", "", expr).replace("$", "")


def _pair(verdicts: list[LogicVerdict], expected: Sequence[str]) -> list[LogicVerdict]:
    """Match verdicts to expected expressions by factor text, then by position for the rest."""
    if len(verdicts) != len(expected):
        matched = {_normalize(v.factor) for v in verdicts}
        missing = [e for e in expected if _normalize(e) not in matched]
        raise VerdictMismatchError(
            f"got {len(verdicts)} verdicts for {len(expected)} factors", missing or list(expected)
        )
    by_text: dict[str, list[int]] = {}
    for i, v in enumerate(verdicts):
        by_text.setdefault(_normalize(v.factor), []).append(i)
    slots: list[int | None] = []
    used: set[int] = set()
    for e in expected:
        cands = [i for i in by_text.get(_normalize(e), []) if i not in used]
        slots.append(cands[0] if cands else None)
        if cands:
            used.add(cands[0])
    leftovers = iter(i for i in range(len(verdicts)) if i not in used)
    out = []
    for e, slot in zip(expected, slots):
        v = verdicts[slot if slot is not None else next(leftovers)]
        out.append(LogicVerdict(e, v.score, v.explanation, v.clamped, v.below_prompted_range))
    return out


def parse_llm_json(
    raw: str,
    expected: Sequence[str] | None = None,
    bounds: tuple[float, float] = (0.0, 100.0),
) -> list[LogicVerdict]:
    """Parse a model answer into verdicts.

    Markdown fences and prose around the array are stripped. Scores outside
    ``bounds`` are clamped and flagged. When ``expected`` is given the verdicts
    are returned in that order with ``factor`` set to the submitted text.
    """
    try:
        data = json.loads(_extract_array(raw))
    except json.JSONDecodeError as exc:
        raise LlmResponseError(f"invalid JSON: {exc}", raw) from None
    if not isinstance(data, list):
        raise LlmResponseError("response is not a JSON array", raw)
    lo, hi = bounds
    verdicts = []
    for item in data:
        if not isinstance(item, dict) or "score" not in item:
            raise LlmResponseError(f"array element is not a verdict object: {item!r}", raw)
        try:
            score = float(item["score"])
        except (TypeError, ValueError):
            raise LlmResponseError(f"non-numeric score {item['score']!r}", raw) from None
        clamped = not lo <= score <= hi
        score = min(max(score, lo), hi)
        verdicts.append(
            LogicVerdict(
                factor=str(item.get("factor", "")),
                score=score,
                explanation=str(item.get("explanation", "")),
                clamped=clamped,
                below_prompted_range=score < PROMPTED_FLOOR,
            )
        )
    if expected is not None:
        verdicts = _pair(verdicts, expected)
    return verdicts


def logic_score(verdicts: Sequence[LogicVerdict]) -> float:
    """Arithmetic mean of the (post-clamp) scores."""
    if not verdicts:
        raise InvalidParameterError("logic_score needs at least one verdict")
    return float(sum(v.score for v in verdicts) / len(verdicts))


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------


class ChatClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpChatClient:
    """JSON-over-HTTP chat-completion client (``messages`` request format)."""

    def __init__(self, config: LlmConfig, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        if not config.endpoint:
            raise InvalidParameterError("an LLM endpoint URL is required")
        self.config = config
        self.sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(headers=headers, timeout=config.timeout, transport=transport)

    def _body(self, prompt: str) -> dict:
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
        }

    def complete(self, prompt: str) -> str:
        body = self._body(prompt)
        if self.config.debug:
            logger.debug("LLM request to %s (Authorization redacted): %s", self.config.endpoint, json.dumps(body))
        last = "no attempt made"
        for attempt in range(self.config.retries + 1):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.config.endpoint, json=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                logger.warning("LLM transport error (attempt %d): %s", attempt + 1, last)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                logger.warning("LLM endpoint returned %s (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise LlmTransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if self.config.debug:
                logger.debug("LLM response: %s", resp.text)
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise LlmResponseError("unexpected chat-completion payload", resp.text) from None
        raise LlmTransportError(f"giving up after {self.config.retries + 1} attempts: {last}")

    def close(self):
        self._client.close()


class MockClient:
    """Answers from a ``factor -> {"score", "explanation"}`` table.

    Values may also be ``[score, explanation]`` pairs or bare numbers. The key
    ``"*"`` supplies a default; factors without an entry are left out of the
    answer (which the caller then reports as a verdict mismatch).
    """

    def __init__(self, table: dict):
        self.table = {_normalize(k) if k != "*" else k: v for k, v in table.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "MockClient":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _entry(self, factor: str):
        entry = self.table.get(_normalize(factor), self.table.get("*"))
        if entry is None:
            return None
        if isinstance(entry, dict):
            return float(entry["score"]), str(entry.get("explanation", ""))
        if isinstance(entry, (list, tuple)):
            return float(entry[0]), str(entry[1]) if len(entry) > 1 else ""
        return float(entry), ""

    def complete(self, prompt: str) -> str:
        factors = re.findall(r"^\d+\. (.+)$", prompt.split("Factor list:", 1)[1].split("\n\nPlease return")[0], re.M)
        answer = []
        for f in factors:
            entry = self._entry(f)
            if entry is not None:
                answer.append({"factor": f, "score": entry[0], "explanation": entry[1]})
        return json.dumps(answer)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


@dataclass
class _Cache:
    path: Path | None
    model: str
    entries: dict = field(default_factory=dict)

    @classmethod
    def open(cls, path: str | None, model: str) -> "_Cache":
        cache = cls(Path(path) if path else None, model)
        if cache.path is not None and cache.path.exists():
            cache.entries = json.loads(cache.path.read_text(encoding="utf-8"))
        return cache

    def key(self, expr: str) -> str:
        return hashlib.sha256(f"{self.model}\x00{expr}".encode("utf-8")).hexdigest()

    def get(self, expr: str) -> LogicVerdict | None:
        hit = self.entries.get(self.key(expr))
        return LogicVerdict(**hit) if hit else None

    def put(self, verdict: LogicVerdict) -> None:
        self.entries[self.key(verdict.factor)] = asdict(verdict)

    def save(self) -> None:
        if self.path is not None:
            self.path.write_text(json.dumps(self.entries, sort_keys=True, indent=1), encoding="utf-8")


def score_alphas(
    expressions: Sequence[str],
    config: LlmConfig,
    client: ChatClient | None = None,
) -> list[LogicVerdict]:
    """Score every expression, batching ``config.batch_size`` per request.

    Batches run concurrently up to ``config.max_in_flight``; verdicts come back
    in input order regardless of completion order.
    """
    expressions = list(expressions)
    if not expressions:
        return []
    if client is None:
        client = HttpChatClient(config)
    cache = _Cache.open(config.cache_path, config.model)
    todo = [e for e in dict.fromkeys(expressions) if cache.get(e) is None]
    size = max(1, config.batch_size)
    batches = [todo[i : i + size] for i in range(0, len(todo), size)]

    def run(batch: list[str]) -> list[LogicVerdict]:
        raw = client.complete(build_prompt(batch))
        return parse_llm_json(raw, batch, config.score_bounds)

    with ThreadPoolExecutor(max_workers=max(1, config.max_in_flight)) as pool:
        for verdicts in pool.map(run, batches):
            for v in verdicts:
                cache.put(v)
    cache.save()
    return [cache.get(e) for e in expressions]
