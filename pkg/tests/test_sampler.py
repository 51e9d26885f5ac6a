"""Sampling client against a scripted mock endpoint."""

import pytest

from freqcp.mcqa import McqaItem
from freqcp.sampler import (
    EndpointRejectionError,
    SampleCache,
    SamplerConfig,
    TransportError,
    build_prompt,
    cache_key_for,
    sample_dataset,
    sample_item,
)

from mock_endpoint import MockEndpoint


def make_item(i=0, num_options=4):
    options = tuple(f"option {j}" for j in range(num_options))
    return McqaItem(id=f"q{i}", question=f"question {i}?", options=options, truth=0)


def config(url, **kwargs):
    defaults = dict(endpoint_url=url, model_name="test-model", m=20,
                    concurrency=2, timeout=5.0, retries=2)
    defaults.update(kwargs)
    return SamplerConfig(**defaults)


class TestBuildPrompt:
    def test_contains_lettered_option_lines(self):
        prompt = build_prompt(make_item())
        lines = prompt.splitlines()
        for j, letter in enumerate("ABCD"):
            assert f"{letter}) option {j}" in lines
        assert "E)" not in prompt

    def test_deterministic(self):
        item = make_item()
        assert build_prompt(item) == build_prompt(item)

    def test_ten_options_reach_j(self):
        prompt = build_prompt(make_item(num_options=10))
        assert "J) option 9" in prompt
        assert "K)" not in prompt

    def test_prompt_feeds_cache_key(self):
        cfg = config("http://example.invalid")
        a = cache_key_for(cfg, make_item(0))
        b = cache_key_for(cfg, make_item(1))
        assert a.prompt_hash != b.prompt_hash
        assert a.digest() != b.digest()


class TestSampleItem:
    def test_collects_exactly_m_completions(self, tmp_path):
        with MockEndpoint(lambda i, body: (200, "A")) as endpoint:
            cfg = config(endpoint.url)
            record = sample_item(cfg, make_item())
            assert record.m == 20
            assert record.raw == ("A",) * 20
            assert record.parsed == (0,) * 20
            assert endpoint.request_count == 20

    def test_request_body_carries_sampling_parameters(self):
        seen = {}

        def script(i, body):
            seen.update(body)
            return 200, "B"

        with MockEndpoint(script) as endpoint:
            cfg = config(endpoint.url, m=1, temperature=1.0, max_tokens=1)
            sample_item(cfg, make_item())
        assert seen["model"] == "test-model"
        assert seen["temperature"] == 1.0
        assert seen["max_tokens"] == 1
        assert seen["messages"][0]["role"] == "user"

    def test_cache_hit_issues_no_requests(self, tmp_path):
        cache = SampleCache(tmp_path / "cache.jsonl")
        with MockEndpoint(lambda i, body: (200, "A")) as endpoint:
            cfg = config(endpoint.url, m=5)
            first = sample_item(cfg, make_item(), cache)
            count_after_first = endpoint.request_count
            second = sample_item(cfg, make_item(), cache)
            assert endpoint.request_count == count_after_first == 5
        assert first == second

    def test_cache_survives_reload(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        with MockEndpoint(lambda i, body: (200, "C")) as endpoint:
            cfg = config(endpoint.url, m=3)
            first = sample_item(cfg, make_item(), SampleCache(path))
        # fresh cache object, unreachable endpoint: must still hit
        cfg = config("http://127.0.0.1:9/nope", m=3, retries=0)
        second = sample_item(cfg, make_item(), SampleCache(path))
        assert first == second

    def test_corrupt_cache_line_invalidates_only_itself(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        with MockEndpoint(lambda i, body: (200, "B")) as endpoint:
            cfg = config(endpoint.url, m=2)
            sample_item(cfg, make_item(0), SampleCache(path))
            sample_item(cfg, make_item(1), SampleCache(path))
            lines = path.read_text().splitlines()
            lines[0] = lines[0][: len(lines[0]) // 2]  # truncate first entry
            path.write_text("\n".join(lines) + "\n")
            cache = SampleCache(path)
            assert len(cache) == 1
            before = endpoint.request_count
            sample_item(cfg, make_item(1), cache)   # still cached
            assert endpoint.request_count == before
            sample_item(cfg, make_item(0), cache)   # re-fetched
            assert endpoint.request_count == before + 2

    def test_garbage_responses_parse_invalid_without_crashing(self):
        with MockEndpoint(lambda i, body: (200, "!!unparseable!!")) as endpoint:
            cfg = config(endpoint.url, m=20)
            record = sample_item(cfg, make_item())
        assert record.parsed == (None,) * 20
        assert record.num_invalid == 20

    def test_retries_transient_failures(self):
        def script(i, body):
            if i < 2:
                return 500, "flaky"
            return 200, "A"

        with MockEndpoint(script) as endpoint:
            cfg = config(endpoint.url, m=3, retries=2)
            record = sample_item(cfg, make_item())
            assert record.raw == ("A",) * 3
            assert endpoint.request_count == 5  # 2 failures + 3 successes

    def test_retries_exhausted_raises_transport_error(self):
        with MockEndpoint(lambda i, body: (500, "down")) as endpoint:
            cfg = config(endpoint.url, m=2, retries=1)
            with pytest.raises(TransportError):
                sample_item(cfg, make_item())

    def test_rejection_is_not_retried(self):
        with MockEndpoint(lambda i, body: (404, "no such model")) as endpoint:
            cfg = config(endpoint.url, m=2, retries=3)
            with pytest.raises(EndpointRejectionError):
                sample_item(cfg, make_item())
            assert endpoint.request_count == 1


class TestSampleDataset:
    def test_failed_items_do_not_stop_the_run(self, tmp_path):
        def script(i, body):
            if "question 0?" in body["messages"][0]["content"]:
                return 503, "down"
            return 200, "B"

        items = [make_item(0), make_item(1), make_item(2)]
        with MockEndpoint(script) as endpoint:
            cfg = config(endpoint.url, m=2, retries=0, concurrency=2)
            result = sample_dataset(cfg, items, SampleCache(tmp_path / "c.jsonl"))
        assert set(result.failed) == {"q0"}
        assert set(result.records) == {"q1", "q2"}
        # never a partial record
        assert all(r.m == 2 for r in result.records.values())

    def test_rejection_aborts_the_run(self, tmp_path):
        with MockEndpoint(lambda i, body: (401, "bad key")) as endpoint:
            cfg = config(endpoint.url, m=2, retries=0)
            with pytest.raises(EndpointRejectionError):
                sample_dataset(cfg, [make_item(0), make_item(1)], None)

    def test_rerun_with_cache_issues_zero_requests(self, tmp_path):
        items = [make_item(i) for i in range(4)]
        path = tmp_path / "cache.jsonl"
        with MockEndpoint(lambda i, body: (200, "D")) as endpoint:
            cfg = config(endpoint.url, m=3)
            first = sample_dataset(cfg, items, SampleCache(path))
            assert endpoint.request_count == 12
            second = sample_dataset(cfg, items, SampleCache(path))
            assert endpoint.request_count == 12
        assert first.records == second.records


class TestSamplerConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"m": 0},
            {"temperature": 0.0},
            {"concurrency": 0},
            {"retries": -1},
            {"max_tokens": 0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            SamplerConfig(endpoint_url="http://x", model_name="m", **kwargs)

    def test_api_key_env_fallback(self, monkeypatch):
        monkeypatch.setenv("FREQCP_API_KEY", "sekrit")
        cfg = SamplerConfig(endpoint_url="http://x", model_name="m")
        assert cfg.resolved_api_key() == "sekrit"
