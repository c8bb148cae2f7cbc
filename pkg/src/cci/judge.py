"""Visual-similarity judge for label pairs: offline fixture table or HTTP endpoint.

The HTTP mode posts a chat-completion request carrying the fixed system and
user prompts (labels substituted verbatim) and parses a single-word verdict,
``similar`` or ``different``, case-insensitively. Offline mode consults a
fixture mapping and errors on misses, which keeps the default configuration
and the test suite fully hermetic.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

API_KEY_ENV = "CCI_JUDGE_API_KEY"

SYSTEM_PROMPT = (
    "You are a vision expert with deep knowledge of object categories and visual "
    "characteristics. Your task is to determine whether two categories are visually "
    "similar or clearly different based on appearance alone. Consider shape, texture, "
    "color, size, and typical visual features that a human would notice."
)

USER_PROMPT_TEMPLATE = """Ground truth class: [gt_class]
Predicted class: [pred_class]

Question: Evaluate whether these two categories are visually similar or clearly different. Consider the following:
1. Would a human observer easily confuse the two categories in a standard image?
2. Do they share key visual features (shape, color patterns, textures) that make them look alike?
3. If they are visually distinct and unlikely to be confused, classify them as different.

Respond with a single word only: similar if they are visually alike, different if they are clearly distinct."""

# Example verdicts shipped with the offline judge.
DEFAULT_PAIRS = {
    ("siamang", "chimpanzee"): "similar",
    ("border collie", "australian shepherd"): "similar",
    ("cat", "airplane"): "different",
    ("lion", "bicycle"): "different",
}


class JudgeError(RuntimeError):
    """Raised on fixture misses, unparseable responses, or exhausted retries."""


def parse_verdict(text: str) -> str:
    word = text.strip().strip(".!\"'`").lower()
    if word not in ("similar", "different"):
        raise JudgeError(f"unparseable judge response {text!r}")
    return word


class OfflineJudge:
    """Fixture-backed judge; lookup is case-insensitive on both labels."""

    def __init__(self, pairs: dict[tuple[str, str], str] | None = None):
        source = pairs if pairs is not None else DEFAULT_PAIRS
        self._pairs = {
            (gt.lower(), pred.lower()): parse_verdict(v) for (gt, pred), v in source.items()
        }

    @classmethod
    def from_fixture(cls, path: str | Path) -> "OfflineJudge":
        """Fixture JSON: {"pairs": [{"gt": ..., "pred": ..., "verdict": ...}, ...]}."""
        data = json.loads(Path(path).read_text())
        return cls({(p["gt"], p["pred"]): p["verdict"] for p in data["pairs"]})

    def verdict(self, gt: str, pred: str) -> str:
        key = (gt.lower(), pred.lower())
        if key not in self._pairs:
            raise JudgeError(f"offline judge has no fixture for pair ({gt!r}, {pred!r})")
        return self._pairs[key]


class _RateLimiter:
    """Shared minimum-interval limiter across concurrent callers."""

    def __init__(self, requests_per_second: float):
        self._interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self._lock = threading.Lock()
        self._next_at = 0.0

    def wait(self) -> None:
        if self._interval == 0.0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next_at - now
            self._next_at = max(now, self._next_at) + self._interval
        if delay > 0:
            time.sleep(delay)


@dataclass
class HttpJudgeConfig:
    endpoint: str
    model: str = "gpt-4o"
    retries: int = 3
    backoff_base: float = 1.0  # seconds; doubles per retry
    requests_per_second: float = 2.0
    timeout: float = 30.0


class HttpJudge:
    """Chat-completion endpoint client; credential read from CCI_JUDGE_API_KEY."""

    def __init__(self, config: HttpJudgeConfig, *, transport: httpx.BaseTransport | None = None):
        api_key = os.environ.get(API_KEY_ENV)
        if not api_key:
            raise JudgeError(f"environment variable {API_KEY_ENV} is not set")
        self._config = config
        self._limiter = _RateLimiter(config.requests_per_second)
        self._client = httpx.Client(
            timeout=config.timeout,
            headers={"Authorization": f"Bearer {api_key}"},
            transport=transport,
        )

    def verdict(self, gt: str, pred: str) -> str:
        body = {
            "model": self._config.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {
                    "role": "user",
                    "content": USER_PROMPT_TEMPLATE.replace("[gt_class]", gt).replace(
                        "[pred_class]", pred
                    ),
                },
            ],
            "temperature": 0,
        }
        last_error: Exception | None = None
        for attempt in range(self._config.retries):
            self._limiter.wait()
            try:
                response = self._client.post(self._config.endpoint, json=body)
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
                return parse_verdict(content)
            except JudgeError:
                raise  # an unparseable response will not improve on retry
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self._config.retries:
                    time.sleep(self._config.backoff_base * 2**attempt)
        raise JudgeError(f"judge request failed after {self._config.retries} attempts: {last_error}")

    def close(self) -> None:
        self._client.close()
