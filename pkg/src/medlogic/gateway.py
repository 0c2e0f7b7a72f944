"""Client for chat-completions endpoints, plus a deterministic offline mode.

POSTs {model, messages, max_tokens, temperature, stop} with bearer auth and
retries transient failures with exponential backoff and jitter. Endpoints
whose URL starts with "mock:" never touch the network: they produce fixed,
reproducible completions so whole-pipeline runs can be byte-stable.
"""

from __future__ import annotations

import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import requests

__all__ = [
    "GatewayError",
    "AuthError",
    "RateLimited",
    "Timeout",
    "ServerError",
    "ExhaustedRetries",
    "GenRequest",
    "GenResult",
    "RetryPolicy",
    "generate",
    "generate_batch",
]

logger = logging.getLogger(__name__)


class GatewayError(Exception):
    """Base class; also raised directly for non-retriable protocol problems."""


class AuthError(GatewayError):
    """Credentials rejected. Never retried."""


class RateLimited(GatewayError):
    """HTTP 429. Retried with backoff."""


class Timeout(GatewayError):
    """Request timed out or the transport failed. Retried with backoff."""


class ServerError(GatewayError):
    """HTTP 5xx. Retried with backoff."""


class ExhaustedRetries(GatewayError):
    """All attempts failed; last_error holds the final failure."""

    def __init__(self, message: str, last_error: GatewayError) -> None:
        super().__init__(message)
        self.last_error = last_error


_RETRIABLE = (RateLimited, Timeout, ServerError)


@dataclass(frozen=True, slots=True)
class GenRequest:
    prompt: str
    max_new_tokens: int = 256
    temperature: float = 0.0
    model_name: str = "default"
    stop: tuple[str, ...] | None = None


@dataclass(frozen=True, slots=True)
class GenResult:
    text: str
    latency_ms: float
    attempt_count: int


@dataclass(frozen=True, slots=True)
class RetryPolicy:
    max_attempts: int = 5
    base_delay_s: float = 0.5
    factor: float = 2.0
    jitter: float = 0.1  # each delay is stretched by up to this fraction

    def delay(self, attempt: int, rng: random.Random) -> float:
        base = self.base_delay_s * self.factor ** (attempt - 1)
        return base * (1.0 + rng.random() * self.jitter)


def _mock_complete(prompt: str) -> str:
    """Offline completion: triple-extraction prompts get the empty sentinel,
    answer prompts get the question text echoed back, anything else 'OK'."""
    stripped = prompt.rstrip()
    if stripped.endswith("### Logic Triples:"):
        return "NO_TRIPLES"
    if stripped.endswith("### Answer:"):
        marker = "### Question:\n"
        if marker in stripped:
            tail = stripped.rsplit(marker, 1)[1]
            return tail.split("\n###", 1)[0].strip()
    return "OK"


def _post_once(
    req: GenRequest,
    endpoint: str,
    auth_token: str | None,
    timeout_s: float,
    session: requests.Session | None,
) -> str:
    payload: dict = {
        "model": req.model_name,
        "messages": [{"role": "user", "content": req.prompt}],
        "max_tokens": req.max_new_tokens,
        "temperature": req.temperature,
    }
    if req.stop:
        payload["stop"] = list(req.stop)
    headers = {"Content-Type": "application/json"}
    if auth_token:
        headers["Authorization"] = f"Bearer {auth_token}"
    post = session.post if session is not None else requests.post
    try:
        resp = post(endpoint, json=payload, headers=headers, timeout=timeout_s)
    except requests.exceptions.Timeout as exc:
        raise Timeout(f"request timed out after {timeout_s}s") from exc
    except requests.exceptions.RequestException as exc:
        raise Timeout(f"transport failure: {exc}") from exc

    if resp.status_code in (401, 403):
        raise AuthError(f"authentication rejected (HTTP {resp.status_code})")
    if resp.status_code == 429:
        raise RateLimited("rate limited (HTTP 429)")
    if resp.status_code == 408:
        raise Timeout("server reported timeout (HTTP 408)")
    if resp.status_code >= 500:
        raise ServerError(f"server error (HTTP {resp.status_code})")
    if resp.status_code != 200:
        raise GatewayError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        data = resp.json()
        text = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise GatewayError(f"malformed completion response: {exc}") from exc
    if not isinstance(text, str):
        raise GatewayError("completion content is not a string")
    return text


def generate(
    req: GenRequest,
    endpoint: str,
    auth_token: str | None = None,
    *,
    timeout_s: float = 30.0,
    policy: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
    session: requests.Session | None = None,
) -> GenResult:
    """One completion with retries.

    AuthError and protocol errors raise immediately; rate limits, timeouts,
    and 5xx retry up to policy.max_attempts, then ExhaustedRetries carries
    the last failure. sleep and rng are injectable for tests.
    """
    if rng is None:
        rng = random.Random()
    if endpoint.startswith("mock:"):
        start = time.perf_counter()
        text = _mock_complete(req.prompt)
        return GenResult(
            text=text,
            latency_ms=(time.perf_counter() - start) * 1000.0,
            attempt_count=1,
        )

    last: GatewayError | None = None
    for attempt in range(1, policy.max_attempts + 1):
        start = time.perf_counter()
        try:
            text = _post_once(req, endpoint, auth_token, timeout_s, session)
            return GenResult(
                text=text,
                latency_ms=(time.perf_counter() - start) * 1000.0,
                attempt_count=attempt,
            )
        except _RETRIABLE as exc:
            last = exc
            if attempt < policy.max_attempts:
                delay = policy.delay(attempt, rng)
                logger.warning(
                    "attempt %d/%d failed (%s); retrying in %.2fs",
                    attempt, policy.max_attempts, exc, delay,
                )
                sleep(delay)
    assert last is not None
    raise ExhaustedRetries(
        f"gave up after {policy.max_attempts} attempts: {last}", last_error=last
    )


def generate_batch(
    reqs: Sequence[GenRequest],
    endpoint: str,
    auth_token: str | None = None,
    *,
    max_in_flight: int = 4,
    timeout_s: float = 30.0,
    policy: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
    rng_seed: int | None = None,
) -> list[GenResult | GatewayError]:
    """Concurrent generate() over a request list.

    At most max_in_flight requests run at once. The result list is parallel
    to the input: element i is the GenResult for reqs[i], or the GatewayError
    that request ended with. Non-gateway exceptions propagate.
    """
    if max_in_flight < 1:
        raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
    if not reqs:
        return []

    def run_one(idx_req: tuple[int, GenRequest]) -> GenResult | GatewayError:
        idx, req = idx_req
        rng = random.Random(rng_seed + idx) if rng_seed is not None else None
        try:
            return generate(
                req, endpoint, auth_token,
                timeout_s=timeout_s, policy=policy, sleep=sleep, rng=rng,
            )
        except GatewayError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(run_one, enumerate(reqs)))
