import json
import socket
import threading
import time
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from medlogic.gateway import (
    AuthError,
    ExhaustedRetries,
    GatewayError,
    GenRequest,
    GenResult,
    RateLimited,
    RetryPolicy,
    ServerError,
    Timeout,
    generate,
    generate_batch,
)

FAST = RetryPolicy(max_attempts=3, base_delay_s=0.25, factor=2.0, jitter=0.0)


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        status, payload = self.server.behave(self.headers, body)
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def completion(text):
    return {"choices": [{"message": {"content": text}}]}


@contextmanager
def serve(behave):
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.behave = behave
    thread = threading.Thread(
        target=lambda: server.serve_forever(poll_interval=0.02), daemon=True
    )
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    finally:
        server.shutdown()
        server.server_close()


def no_sleep(_):
    pass


# --- Offline mode ---------------------------------------------------------------


def test_mock_endpoint_lu_prompt():
    req = GenRequest(prompt="### Rules:\nstuff\n### Logic Triples:")
    res = generate(req, "mock:")
    assert res.text == "NO_TRIPLES"
    assert res.attempt_count == 1


def test_mock_endpoint_aqa_prompt_echoes_question():
    prompt = (
        "### Rules:\nr\n### Context:\nc\n### Question:\nDoes it work?\n### Answer:"
    )
    res = generate(GenRequest(prompt=prompt), "mock:")
    assert res.text == "Does it work?"


def test_mock_endpoint_fallback():
    assert generate(GenRequest(prompt="hello"), "mock:").text == "OK"
    # Answer-shaped prompt without a question block also falls through.
    assert generate(GenRequest(prompt="### Answer:"), "mock:").text == "OK"


def test_mock_endpoint_is_deterministic():
    req = GenRequest(prompt="x\n### Logic Triples:")
    assert generate(req, "mock:").text == generate(req, "mock:").text


# --- Request shape ----------------------------------------------------------------


def test_happy_path_payload_and_auth_header():
    captured = {}

    def behave(headers, body):
        captured["auth"] = headers.get("Authorization")
        captured["body"] = body
        return 200, completion("fine")

    with serve(behave) as url:
        res = generate(
            GenRequest(
                prompt="p",
                max_new_tokens=33,
                temperature=0.5,
                model_name="m1",
                stop=("###",),
            ),
            url,
            auth_token="tok123",
            policy=FAST,
            sleep=no_sleep,
        )
    assert isinstance(res, GenResult)
    assert res.text == "fine"
    assert res.attempt_count == 1
    assert res.latency_ms >= 0.0
    assert captured["auth"] == "Bearer tok123"
    assert captured["body"] == {
        "model": "m1",
        "messages": [{"role": "user", "content": "p"}],
        "max_tokens": 33,
        "temperature": 0.5,
        "stop": ["###"],
    }


def test_no_auth_header_and_no_stop_when_unset():
    captured = {}

    def behave(headers, body):
        captured["auth"] = headers.get("Authorization")
        captured["body"] = body
        return 200, completion("ok")

    with serve(behave) as url:
        generate(GenRequest(prompt="p"), url, policy=FAST, sleep=no_sleep)
    assert captured["auth"] is None
    assert "stop" not in captured["body"]


# --- Retry behavior ----------------------------------------------------------------


def test_retries_rate_limit_then_succeeds():
    calls = []
    delays = []

    def behave(headers, body):
        calls.append(1)
        if len(calls) <= 2:
            return 429, {"error": "slow down"}
        return 200, completion("third time lucky")

    with serve(behave) as url:
        res = generate(
            GenRequest(prompt="p"), url, policy=FAST, sleep=delays.append
        )
    assert res.text == "third time lucky"
    assert res.attempt_count == 3
    assert len(calls) == 3
    # Exponential backoff with zero jitter: base, then base * factor.
    assert delays == [pytest.approx(0.25), pytest.approx(0.5)]


def test_jitter_stretches_delay_within_bound():
    policy = RetryPolicy(max_attempts=2, base_delay_s=1.0, factor=2.0, jitter=0.1)

    class FixedRng:
        def random(self):
            return 1.0

    assert policy.delay(1, FixedRng()) == pytest.approx(1.1)

    class ZeroRng:
        def random(self):
            return 0.0

    assert policy.delay(2, ZeroRng()) == pytest.approx(2.0)


def test_auth_error_is_not_retried():
    calls = []

    def behave(headers, body):
        calls.append(1)
        return 401, {"error": "bad token"}

    with serve(behave) as url:
        with pytest.raises(AuthError):
            generate(GenRequest(prompt="p"), url, policy=FAST, sleep=no_sleep)
    assert len(calls) == 1


def test_exhausted_retries_carries_last_error():
    calls = []
    slept = []

    def behave(headers, body):
        calls.append(1)
        return 429, {}

    with serve(behave) as url:
        with pytest.raises(ExhaustedRetries) as excinfo:
            generate(GenRequest(prompt="p"), url, policy=FAST, sleep=slept.append)
    assert isinstance(excinfo.value.last_error, RateLimited)
    assert len(calls) == FAST.max_attempts
    assert len(slept) == FAST.max_attempts - 1  # no sleep after the final failure


@pytest.mark.parametrize(
    "status,expected",
    [(500, ServerError), (503, ServerError), (408, Timeout)],
)
def test_retriable_status_classification(status, expected):
    one_shot = RetryPolicy(max_attempts=1, base_delay_s=0.0, factor=1.0, jitter=0.0)

    def behave(headers, body):
        return status, {}

    with serve(behave) as url:
        with pytest.raises(ExhaustedRetries) as excinfo:
            generate(GenRequest(prompt="p"), url, policy=one_shot, sleep=no_sleep)
    assert isinstance(excinfo.value.last_error, expected)


def test_unexpected_status_fails_immediately():
    calls = []

    def behave(headers, body):
        calls.append(1)
        return 418, {}

    with serve(behave) as url:
        with pytest.raises(GatewayError, match="unexpected HTTP 418"):
            generate(GenRequest(prompt="p"), url, policy=FAST, sleep=no_sleep)
    assert len(calls) == 1


def test_malformed_and_non_string_responses():
    def bad_shape(headers, body):
        return 200, {"nothing": "here"}

    with serve(bad_shape) as url:
        with pytest.raises(GatewayError, match="malformed completion response"):
            generate(GenRequest(prompt="p"), url, policy=FAST, sleep=no_sleep)

    def bad_type(headers, body):
        return 200, {"choices": [{"message": {"content": 42}}]}

    with serve(bad_type) as url:
        with pytest.raises(GatewayError, match="not a string"):
            generate(GenRequest(prompt="p"), url, policy=FAST, sleep=no_sleep)


def test_connection_failure_maps_to_timeout():
    # Grab a port and close it so nothing is listening there.
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    one_shot = RetryPolicy(max_attempts=1, base_delay_s=0.0, factor=1.0, jitter=0.0)
    with pytest.raises(ExhaustedRetries) as excinfo:
        generate(
            GenRequest(prompt="p"),
            f"http://127.0.0.1:{port}/v1",
            policy=one_shot,
            sleep=no_sleep,
            timeout_s=2.0,
        )
    assert isinstance(excinfo.value.last_error, Timeout)


# --- Batch ----------------------------------------------------------------------


def test_batch_results_align_with_inputs_and_isolate_failures():
    def behave(headers, body):
        prompt = body["messages"][0]["content"]
        if "FAIL" in prompt:
            return 429, {}
        return 200, completion(f"echo {prompt}")

    reqs = [
        GenRequest(prompt="zero"),
        GenRequest(prompt="FAIL one"),
        GenRequest(prompt="two"),
    ]
    one_shot = RetryPolicy(max_attempts=1, base_delay_s=0.0, factor=1.0, jitter=0.0)
    with serve(behave) as url:
        results = generate_batch(
            reqs, url, max_in_flight=2, policy=one_shot, sleep=no_sleep
        )
    assert len(results) == 3
    assert results[0].text == "echo zero"
    assert isinstance(results[1], ExhaustedRetries)
    assert isinstance(results[1].last_error, RateLimited)
    assert results[2].text == "echo two"


def test_batch_respects_in_flight_cap():
    lock = threading.Lock()
    state = {"cur": 0, "peak": 0}

    def behave(headers, body):
        with lock:
            state["cur"] += 1
            state["peak"] = max(state["peak"], state["cur"])
        time.sleep(0.03)
        with lock:
            state["cur"] -= 1
        return 200, completion("ok")

    reqs = [GenRequest(prompt=f"p{i}") for i in range(9)]
    with serve(behave) as url:
        results = generate_batch(reqs, url, max_in_flight=3, policy=FAST, sleep=no_sleep)
    assert all(isinstance(r, GenResult) for r in results)
    assert state["peak"] <= 3


def test_batch_empty_and_validation():
    assert generate_batch([], "mock:") == []
    with pytest.raises(ValueError, match="max_in_flight"):
        generate_batch([GenRequest(prompt="p")], "mock:", max_in_flight=0)


def test_batch_against_mock_endpoint_keeps_order():
    reqs = [
        GenRequest(prompt="a\n### Logic Triples:"),
        GenRequest(prompt="### Question:\nQ7?\n### Answer:"),
        GenRequest(prompt="plain"),
    ]
    results = generate_batch(reqs, "mock:", max_in_flight=3)
    assert [r.text for r in results] == ["NO_TRIPLES", "Q7?", "OK"]


def test_batch_seeded_rng_is_reproducible():
    attempts = {"n": 0}
    lock = threading.Lock()

    def behave(headers, body):
        with lock:
            attempts["n"] += 1
            n = attempts["n"]
        if n % 2 == 1:
            return 500, {}
        return 200, completion("ok")

    delays_a: list[float] = []
    policy = RetryPolicy(max_attempts=4, base_delay_s=0.1, factor=2.0, jitter=0.5)
    with serve(behave) as url:
        generate_batch(
            [GenRequest(prompt="p")], url, policy=policy,
            sleep=delays_a.append, rng_seed=7, max_in_flight=1,
        )
    attempts["n"] = 0
    delays_b: list[float] = []
    with serve(behave) as url:
        generate_batch(
            [GenRequest(prompt="p")], url, policy=policy,
            sleep=delays_b.append, rng_seed=7, max_in_flight=1,
        )
    assert delays_a == delays_b
    assert delays_a  # at least one retry happened, so jitter was exercised
