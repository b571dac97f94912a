"""HTTP client, disk cache, and deterministic mock backend."""
from __future__ import annotations

import json
import threading

import pytest

from neraug import (
    CompletionRequest,
    CompletionResponse,
    DiskCache,
    LlmConfig,
    MalformedResponseError,
    MockBackend,
    MockRule,
    MockScenario,
    MockScenarioError,
    OpenAIChatClient,
    PermanentBackendError,
    default_scenario,
    mock_complete,
    render_entity_prompt,
    render_instance_prompt,
)
from neraug.gateway import cache_key

from conftest import sent
from fakeserver import FakeChatServer


def demo_sentence(i):
    return sent(f"filler text {i}", "O O O")


def make_client(endpoint, *, sleeps=None, **config_kwargs):
    """Client with instant, recorded sleeps so retry tests stay fast."""
    config = LlmConfig(endpoint=endpoint, **config_kwargs)
    recorder = sleeps if sleeps is not None else []
    return OpenAIChatClient(config, api_key="test-key", sleep=recorder.append)


# ---------------------------------------------------------------------------
# Config and request validation


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        LlmConfig(temperature=-0.1)
    with pytest.raises(ValueError):
        LlmConfig(max_tokens=0)
    with pytest.raises(ValueError):
        LlmConfig(max_retries=-1)
    with pytest.raises(ValueError):
        LlmConfig(retry_backoff=-0.5)
    with pytest.raises(ValueError):
        LlmConfig(concurrency_limit=0)


def test_request_rejects_empty_prompt():
    with pytest.raises(ValueError):
        CompletionRequest(prompt="", model="m", temperature=1.0, max_tokens=8)


# ---------------------------------------------------------------------------
# Cache keys and disk cache


def request(prompt="hello", model="m", temperature=1.0, max_tokens=16):
    return CompletionRequest(
        prompt=prompt, model=model, temperature=temperature, max_tokens=max_tokens
    )


def test_cache_key_is_stable_and_field_sensitive():
    base = cache_key(request())
    assert len(base) == 64 and all(c in "0123456789abcdef" for c in base)
    assert cache_key(request()) == base
    assert cache_key(request(prompt="other")) != base
    assert cache_key(request(model="m2")) != base
    assert cache_key(request(temperature=0.5)) != base
    assert cache_key(request(max_tokens=17)) != base


def test_disk_cache_round_trip(tmp_path):
    cache = DiskCache(tmp_path / "cache")
    req = request()
    assert cache.get(req) is None
    cache.put(req, CompletionResponse(text="cached text", usage={"total_tokens": 3}))
    got = cache.get(req)
    assert got is not None
    assert got.text == "cached text"
    assert got.usage == {"total_tokens": 3}
    assert got.from_cache is True
    # different request stays a miss
    assert cache.get(request(prompt="other")) is None


def test_disk_cache_leaves_no_temp_files(tmp_path):
    cache = DiskCache(tmp_path)
    cache.put(request(), CompletionResponse(text="x"))
    names = [p.name for p in tmp_path.iterdir()]
    assert len(names) == 1
    assert names[0].endswith(".json")
    assert "tmp" not in names[0]


def test_disk_cache_ignores_corrupt_entries(tmp_path):
    cache = DiskCache(tmp_path)
    req = request()
    cache.put(req, CompletionResponse(text="good"))
    (entry,) = tmp_path.iterdir()
    entry.write_text("{not json", encoding="utf-8")
    assert cache.get(req) is None  # treated as a miss, not a crash


def test_cache_entry_is_readable_json(tmp_path):
    cache = DiskCache(tmp_path)
    req = request(prompt="inspect me")
    cache.put(req, CompletionResponse(text="body"))
    (entry,) = tmp_path.iterdir()
    payload = json.loads(entry.read_text(encoding="utf-8"))
    assert payload["request"]["prompt"] == "inspect me"
    assert payload["response"]["text"] == "body"


# ---------------------------------------------------------------------------
# HTTP round trips against a live local server


def test_successful_call_and_request_shape():
    with FakeChatServer() as server:
        client = make_client(server.endpoint, model="test-model", temperature=0.7,
                             max_tokens=99)
        prompt = render_entity_prompt("Drug", ["remdesivir"], 3)
        response = client.generate(prompt)
        assert response.text == mock_complete(prompt, server.state.scenario, 0)
        assert response.from_cache is False

        (seen,) = server.state.requests
        assert seen.path == "/v1/chat/completions"
        assert seen.headers["authorization"] == "Bearer test-key"
        assert seen.headers["content-type"] == "application/json"
        assert seen.body == {
            "model": "test-model",
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.7,
            "max_tokens": 99,
        }


def test_missing_api_key_sends_no_auth_header(monkeypatch):
    monkeypatch.delenv("LLM_API_KEY", raising=False)
    with FakeChatServer(status_script=[200],
                        scenario=default_scenario(default_response="ok")) as server:
        config = LlmConfig(endpoint=server.endpoint)
        client = OpenAIChatClient(config, sleep=lambda s: None)
        client.generate("anything")
        (seen,) = server.state.requests
        assert "authorization" not in seen.headers


def test_api_key_read_from_environment(monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "env-secret")
    with FakeChatServer(scenario=default_scenario(default_response="ok")) as server:
        client = OpenAIChatClient(LlmConfig(endpoint=server.endpoint), sleep=lambda s: None)
        client.generate("anything")
        (seen,) = server.state.requests
        assert seen.headers["authorization"] == "Bearer env-secret"


def test_retries_transient_statuses_then_succeeds():
    sleeps = []
    with FakeChatServer(status_script=[429, 503, 200],
                        scenario=default_scenario(default_response="fine")) as server:
        client = make_client(server.endpoint, sleeps=sleeps,
                             max_retries=3, retry_backoff=0.5)
        response = client.generate("please answer")
        assert response.text == "fine"
        assert len(server.state.requests) == 3
    # linear, non-decreasing backoff between attempts
    assert sleeps == [0.5, 1.0]
    assert sleeps == sorted(sleeps)


def test_gives_up_after_max_retries():
    sleeps = []
    with FakeChatServer(status_script=[500]) as server:
        client = make_client(server.endpoint, sleeps=sleeps,
                             max_retries=3, retry_backoff=0.1)
        with pytest.raises(PermanentBackendError) as excinfo:
            client.generate("doomed")
        assert len(server.state.requests) == 4  # 1 initial + 3 retries
    err = excinfo.value
    assert err.attempts == 4
    assert err.status == 500
    assert "scripted failure 500" in err.body_excerpt
    assert err.prompt == "doomed"
    assert len(sleeps) == 3  # no sleep after the final attempt


def test_non_retryable_status_fails_immediately():
    sleeps = []
    with FakeChatServer(status_script=[400, 200]) as server:
        client = make_client(server.endpoint, sleeps=sleeps, max_retries=5)
        with pytest.raises(PermanentBackendError) as excinfo:
            client.generate("bad request")
        assert len(server.state.requests) == 1
    assert excinfo.value.status == 400
    assert excinfo.value.attempts == 1
    assert sleeps == []


def test_connection_error_is_retried_then_permanent():
    # Bind-then-close a socket so the port is definitely unreachable.
    import socket

    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()

    sleeps = []
    client = make_client(f"http://127.0.0.1:{port}/v1", sleeps=sleeps,
                         max_retries=2, retry_backoff=0.01)
    with pytest.raises(PermanentBackendError) as excinfo:
        client.generate("nobody home")
    assert excinfo.value.attempts == 3
    assert excinfo.value.status is None
    assert len(sleeps) == 2


def test_malformed_success_body_raises():
    with FakeChatServer(status_script=[200],
                        raw_script=['{"unexpected": "shape"}']) as server:
        client = make_client(server.endpoint)
        with pytest.raises(MalformedResponseError):
            client.generate("hello")


def test_cache_short_circuits_the_network(tmp_path):
    with FakeChatServer(scenario=default_scenario(default_response="net")) as server:
        client = make_client(server.endpoint, cache_dir=str(tmp_path / "cache"))
        first = client.generate("same prompt")
        second = client.generate("same prompt")
        assert len(server.state.requests) == 1
        assert first.text == second.text == "net"
        assert first.from_cache is False
        assert second.from_cache is True

        # A fresh client over the same directory replays without the server.
        replay = make_client("http://127.0.0.1:9/v1", cache_dir=str(tmp_path / "cache"))
        assert replay.generate("same prompt").text == "net"


def test_concurrency_limit_bounds_in_flight_requests():
    with FakeChatServer(scenario=default_scenario(default_response="ok"),
                        hold_seconds=0.15) as server:
        client = make_client(server.endpoint, concurrency_limit=2)
        threads = [
            threading.Thread(target=client.generate, args=(f"prompt {i}",))
            for i in range(6)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(server.state.requests) == 6
        assert server.state.max_in_flight <= 2


def test_in_flight_gauge_sees_parallelism_without_a_limit():
    # Sanity check that the previous test's bound is meaningful.
    with FakeChatServer(scenario=default_scenario(default_response="ok"),
                        hold_seconds=0.25) as server:
        client = make_client(server.endpoint, concurrency_limit=6)
        threads = [
            threading.Thread(target=client.generate, args=(f"prompt {i}",))
            for i in range(6)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert server.state.max_in_flight >= 3


# ---------------------------------------------------------------------------
# Mock backend


def test_mock_is_a_pure_function_of_seed_and_prompt():
    prompt = render_entity_prompt("Drug", ["remdesivir"], 4)
    a = MockBackend(seed=7).generate(prompt).text
    b = MockBackend(seed=7).generate(prompt).text
    assert a == b
    assert mock_complete(prompt, default_scenario(), 7) == a
    assert MockBackend(seed=8).generate(prompt).text != a


def test_mock_is_independent_of_call_order():
    p1 = render_entity_prompt("Drug", ["remdesivir"], 2)
    p2 = render_entity_prompt("Disease", ["covid"], 2)
    forward = MockBackend(seed=3)
    r1, r2 = forward.generate(p1).text, forward.generate(p2).text
    backward = MockBackend(seed=3)
    s2, s1 = backward.generate(p2).text, backward.generate(p1).text
    assert (r1, r2) == (s1, s2)


def test_mock_counts_calls_and_rejects_empty_prompts():
    backend = MockBackend(default_scenario(default_response="x"))
    assert backend.calls == 0
    backend.generate("one")
    backend.generate("two")
    assert backend.calls == 2
    with pytest.raises(ValueError):
        backend.generate("")


def test_entity_list_rule_answers_the_entity_prompt():
    prompt = render_entity_prompt("Drug", ["remdesivir", "paxlovid"], 5)
    text = mock_complete(prompt, default_scenario(), 0)
    lines = text.split("\n")
    assert len(lines) == 5
    for i, line in enumerate(lines, start=1):
        assert line.startswith(f"{i}. drug")
        assert line.removeprefix(f"{i}. drug").isdigit()


def test_instance_rule_embeds_the_entity_verbatim():
    scenario = default_scenario()
    prompt = render_instance_prompt(demo_sentence(0), "zqv99")
    text = mock_complete(prompt, scenario, 0)
    assert "zqv99" in text.split()


def test_miss_rate_one_always_omits_the_entity():
    scenario = default_scenario(miss_rate=1.0)
    for i in range(20):
        prompt = render_instance_prompt(demo_sentence(i), "zqv99")
        assert "zqv99" not in mock_complete(prompt, scenario, 0).split()


def test_foreign_rate_one_always_injects_a_foreign_surface():
    scenario = default_scenario(foreign_rate=1.0, foreign_surfaces=("Atlantis",))
    for i in range(20):
        prompt = render_instance_prompt(demo_sentence(i), "zqv99")
        words = mock_complete(prompt, scenario, 0).split()
        assert "Atlantis" in words
        assert "zqv99" in words  # miss_rate stays 0


def test_miss_rate_is_roughly_honoured():
    scenario = default_scenario(miss_rate=0.5)
    n = 400
    hits = 0
    for i in range(n):
        prompt = render_instance_prompt(demo_sentence(i), "zqv99")
        if "zqv99" in mock_complete(prompt, scenario, 1).split():
            hits += 1
    assert 0.35 <= hits / n <= 0.65


def test_verify_rule_returns_the_scenario_answer():
    scenario = default_scenario(verify_response="no\nyes")
    prompt = 'Sentence: x\nAnswer the following questions with "yes" or "no", one answer per line.\n1. q\n2. q'
    assert mock_complete(prompt, scenario, 0) == "no\nyes"


def test_template_rule_formats_capture_groups():
    scenario = MockScenario(
        rules=(MockRule(r"ask about (?P<topic>\w+)", kind="template",
                        template="all about {topic}!"),)
    )
    assert mock_complete("please ask about caching", scenario, 0) == "all about caching!"


def test_unmatched_prompt_uses_default_or_raises():
    assert mock_complete("???", MockScenario(default_response="fallback"), 0) == "fallback"
    with pytest.raises(MockScenarioError):
        mock_complete("???", MockScenario(), 0)


def test_scenario_validation():
    with pytest.raises(ValueError):
        MockScenario(miss_rate=1.5)
    with pytest.raises(ValueError):
        MockScenario(foreign_rate=0.2)  # no foreign_surfaces
    with pytest.raises(ValueError):
        MockRule(r"x", kind="nonsense")
    with pytest.raises(Exception):
        MockRule(r"(unclosed", kind="template")
