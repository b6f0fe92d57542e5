from __future__ import annotations

import hashlib
import json
import threading
import time

import httpx
import numpy as np
import pytest

from cotcap.backends import (
    AttachmentUnreadable,
    BackendConfig,
    BackendRequest,
    DecodeParams,
    EmbeddingRequest,
    Gateway,
    MalformedResponse,
    OpenAICompatBackend,
    RateLimited,
    Transport,
    UnknownBackend,
    UnsupportedModality,
    frame_indices,
    video_attachments,
)
from cotcap.models import VideoRef

from .conftest import mock_config


def test_echo_mock_returns_last_user_message(gateway_factory):
    gw, _ = gateway_factory(options={"mock_mode": "echo"})
    req = BackendRequest("vlm", (("system", "be brief"), ("user", "first"), ("assistant", "ok"), ("user", "hello there")))
    assert gw.complete(req).text == "hello there"


def test_cache_hit_on_second_identical_request(gateway_factory):
    gw, mocks = gateway_factory()
    req = gw.request("vlm", "describe")
    first = gw.complete(req)
    second = gw.complete(req)
    assert not first.cache_hit and second.cache_hit
    assert second.attempts == 0
    assert mocks["vlm"].calls == 1
    assert second.text == first.text
    # on-disk layout: cache/<2 hex>/<digest>.json
    path = gw.cache.path_for(req.key)
    assert path.parent.name == req.key[:2] and path.name == f"{req.key}.json"
    assert json.loads(path.read_text())["text"] == first.text


def test_cache_survives_new_gateway(gateway_factory, tmp_path):
    gw, _ = gateway_factory(cache_dir=tmp_path / "c")
    req = gw.request("vlm", "describe")
    text = gw.complete(req).text
    gw2, mocks2 = gateway_factory(cache_dir=tmp_path / "c")
    resp = gw2.complete(req)
    assert resp.cache_hit and resp.text == text and mocks2["vlm"].calls == 0


def test_seeded_mock_is_reproducible_at_temperature_zero(gateway_factory):
    digests = set()
    for _ in range(10):
        gw, _ = gateway_factory(cache=False, options={"mock_mode": "seeded"})
        resp = gw.complete(gw.request("vlm", "what sound?", ("f0.jpg", "f1.jpg")))
        digests.add(hashlib.sha256(resp.text.encode()).hexdigest())
    assert len(digests) == 1


def test_cache_key_covers_every_request_field():
    base = BackendRequest.user("m", "hi", ("a",), DecodeParams(0.0, 10))
    variants = [
        BackendRequest.user("n", "hi", ("a",), DecodeParams(0.0, 10)),
        BackendRequest.user("m", "hi!", ("a",), DecodeParams(0.0, 10)),
        BackendRequest.user("m", "hi", ("b",), DecodeParams(0.0, 10)),
        BackendRequest.user("m", "hi", ("a",), DecodeParams(0.5, 10)),
        BackendRequest.user("m", "hi", ("a",), DecodeParams(0.0, 11)),
        BackendRequest.user("m", "hi", ("a",), DecodeParams(0.0, 10, seed=1)),
    ]
    assert len({base.key, *(v.key for v in variants)}) == len(variants) + 1
    assert base.key == BackendRequest.user("m", "hi", ("a",), DecodeParams(0.0, 10)).key


def test_request_needs_a_message():
    with pytest.raises(ValueError):
        BackendRequest("m", ())


def test_unknown_backend(gateway_factory):
    gw, _ = gateway_factory()
    with pytest.raises(UnknownBackend):
        gw.complete(BackendRequest.user("nope", "x"))


def test_retries_transport_then_succeeds(gateway_factory):
    calls = []

    def flaky(req):
        calls.append(1)
        if len(calls) < 3:
            raise RateLimited("slow down") if len(calls) == 1 else Transport("reset")
        return "fine"

    gw, _ = gateway_factory(cache=False, responders={"vlm": flaky})
    sleeps = []
    gw.sleep = sleeps.append
    resp = gw.complete(gw.request("vlm", "x"))
    assert resp.text == "fine" and resp.attempts == 3
    assert len(sleeps) == 2
    # exponential backoff from 1s with up to 100% jitter
    assert 1.0 <= sleeps[0] <= 2.0 and 2.0 <= sleeps[1] <= 4.0


def test_retries_exhausted_raises_transport(gateway_factory):
    def down(req):
        raise Transport("down")

    gw, mocks = gateway_factory(cache=False, responders={"vlm": down})
    with pytest.raises(Transport):
        gw.complete(gw.request("vlm", "x"))
    assert mocks["vlm"].calls == 3


def test_malformed_is_not_retried(gateway_factory):
    def bad(req):
        raise MalformedResponse("garbage")

    gw, mocks = gateway_factory(cache=False, responders={"vlm": bad})
    with pytest.raises(MalformedResponse):
        gw.complete(gw.request("vlm", "x"))
    assert mocks["vlm"].calls == 1


def test_failed_requests_are_not_cached(gateway_factory):
    state = {"fail": True}

    def sometimes(req):
        if state["fail"]:
            raise MalformedResponse("x")
        return "ok"

    gw, _ = gateway_factory(responders={"vlm": sometimes})
    req = gw.request("vlm", "x")
    with pytest.raises(MalformedResponse):
        gw.complete(req)
    state["fail"] = False
    assert gw.complete(req).text == "ok"


# -- embeddings --------------------------------------------------------------


def test_mock_embedding_deterministic_and_unit_norm(gateway_factory):
    gw, _ = gateway_factory(cache=False)
    a = gw.embed(EmbeddingRequest("vlm", "text", "a dog barks"))
    b = gw.embed(EmbeddingRequest("vlm", "text", "a dog barks"))
    assert np.array_equal(a, b)
    for s in ["x", "a dog barks", "é" * 100]:
        v = gw.embed(EmbeddingRequest("vlm", "text", s))
        assert abs(np.linalg.norm(v) - 1) < 1e-6


def test_mock_embedding_matches_hash_seeded_vector(gateway_factory):
    gw, _ = gateway_factory(cache=False, options={"embedding_dim": 32})
    v = gw.embed(EmbeddingRequest("vlm", "text", "rain"))
    seed = int(hashlib.sha256("text\x1frain".encode()).hexdigest()[:16], 16)
    expect = np.random.default_rng(seed).standard_normal(32)
    np.testing.assert_allclose(v, expect / np.linalg.norm(expect))


def test_embedding_cache_roundtrip_exact(gateway_factory):
    gw, _ = gateway_factory()
    a = gw.embed(EmbeddingRequest("vlm", "text", "rain"))
    b = gw.embed(EmbeddingRequest("vlm", "text", "rain"))
    assert np.array_equal(a, b) and gw.cache_hits == 1


def test_unsupported_modality(gateway_factory):
    gw, _ = gateway_factory(cache=False)
    with pytest.raises(UnsupportedModality):
        gw.embed(EmbeddingRequest("vlm", "audio", "clip.wav"))
    with pytest.raises(UnsupportedModality):
        EmbeddingRequest("vlm", "video", "x")


# -- concurrency -------------------------------------------------------------


def test_map_concurrent_preserves_order(gateway_factory):
    gw, mocks = gateway_factory(cache=False, options={"mock_mode": "echo"})
    reqs = [gw.request("vlm", f"msg {i}") for i in range(100)]
    out = gw.map_concurrent(reqs, 8)
    assert [o.value.text for o in out] == [f"msg {i}" for i in range(100)]
    assert mocks["vlm"].max_in_flight <= 8


def test_map_concurrent_bounds_in_flight(gateway_factory):
    gw, mocks = gateway_factory(cache=False, options={"mock_mode": "echo", "mock_delay": 0.01})
    reqs = [gw.request("vlm", f"m{i}") for i in range(24)]
    gw.map_concurrent(reqs, 4)
    assert mocks["vlm"].max_in_flight == 4


def test_limit_one_is_sequential(gateway_factory):
    gw, mocks = gateway_factory(cache=False, options={"mock_mode": "echo", "mock_delay": 0.002})
    gw.map_concurrent([gw.request("vlm", f"m{i}") for i in range(10)], 1)
    log = sorted(mocks["vlm"].call_log, key=lambda c: c.start)
    assert all(a.end <= b.start for a, b in zip(log, log[1:]))
    assert mocks["vlm"].max_in_flight == 1


def test_poisoned_request_isolated(gateway_factory):
    def responder(req):
        if "poison" in req.last_user_text:
            raise MalformedResponse("bad item")
        return req.last_user_text.upper()

    gw, _ = gateway_factory(cache=False, responders={"vlm": responder})
    reqs = [gw.request("vlm", "poison" if i == 6 else f"ok{i}") for i in range(10)]
    out = gw.map_concurrent(reqs, 4)
    assert [o.ok for o in out].count(True) == 9
    assert not out[6].ok and isinstance(out[6].error, MalformedResponse)
    assert out[7].value.text == "OK7"


def test_per_backend_concurrency_limit(tmp_path):
    gw = Gateway(cache_dir=None)
    mock = gw.register(mock_config("vlm", max_concurrency=2, options={"mock_mode": "echo", "mock_delay": 0.01}))
    gw.map_concurrent([gw.request("vlm", f"m{i}") for i in range(12)], 8)
    assert mock.max_in_flight == 2


def test_concurrent_identical_requests_call_backend_once(gateway_factory):
    gw, mocks = gateway_factory(options={"mock_mode": "echo", "mock_delay": 0.01})
    req = gw.request("vlm", "same")
    out = gw.map_concurrent([req] * 16, 8)
    assert {o.value.text for o in out} == {"same"}
    assert mocks["vlm"].calls == 1


# -- frame policy --------------------------------------------------------------


@pytest.mark.parametrize("f,k", [(100, 16), (16, 16), (7, 3), (5, 8), (1, 1), (1000, 7)])
def test_frame_indices_uniform(f, k):
    idx = frame_indices(f, k)
    assert idx == [int(np.floor(i * f / k)) for i in range(k)]
    assert idx == sorted(idx) and all(0 <= i < f for i in idx)


def test_video_attachments(tmp_path):
    assert video_attachments(VideoRef("v", "clip.mp4", 32), 4) == tuple(f"clip.mp4#frame={i}" for i in (0, 8, 16, 24))
    assert video_attachments(VideoRef("v", "clip.mp4"), 4) == ("clip.mp4",)
    frames = tmp_path / "frames"
    frames.mkdir()
    for i in range(10):
        (frames / f"{i:03d}.jpg").write_bytes(b"x")
    got = video_attachments(VideoRef("v", str(frames), 10), 5)
    assert [p.rsplit("/", 1)[1] for p in got] == ["000.jpg", "002.jpg", "004.jpg", "006.jpg", "008.jpg"]


# -- OpenAI-compatible wire format ---------------------------------------------


def _client(handler):
    return httpx.Client(base_url="http://test", transport=httpx.MockTransport(handler))


def test_openai_chat_payload_and_parse(tmp_path, monkeypatch):
    seen = {}

    def handler(request):
        seen["path"] = request.url.path
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "a dog barks"}}], "usage": {"total_tokens": 5}})

    frame = tmp_path / "f.png"
    frame.write_bytes(b"\x89PNG")
    monkeypatch.setenv("VL2_API_KEY", "sekret")
    cfg = BackendConfig("vl2", base_url="http://test", model="videollama2")
    backend = OpenAICompatBackend(cfg)
    backend.client = _client(handler)
    backend.client.headers["Authorization"] = "Bearer sekret"
    text, usage = backend.complete(BackendRequest.user("vl2", "what sound?", (str(frame), "http://x/y.jpg")))
    assert text == "a dog barks" and usage == {"total_tokens": 5}
    assert seen["path"] == "/chat/completions"
    assert seen["auth"] == "Bearer sekret"
    body = seen["body"]
    assert body["model"] == "videollama2" and body["temperature"] == 0.0
    content = body["messages"][0]["content"]
    assert content[0]["image_url"]["url"].startswith("data:image/png;base64,")
    assert content[1]["image_url"]["url"] == "http://x/y.jpg"
    assert content[2] == {"type": "text", "text": "what sound?"}


def test_openai_errors():
    cfg = BackendConfig("x", base_url="http://test", model="m")
    b = OpenAICompatBackend(cfg)
    b.client = _client(lambda r: httpx.Response(429))
    with pytest.raises(RateLimited):
        b.complete(BackendRequest.user("x", "hi"))
    b.client = _client(lambda r: httpx.Response(503))
    with pytest.raises(Transport):
        b.complete(BackendRequest.user("x", "hi"))
    b.client = _client(lambda r: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(MalformedResponse):
        b.complete(BackendRequest.user("x", "hi"))
    with pytest.raises(AttachmentUnreadable):
        b.complete(BackendRequest.user("x", "hi", ("/does/not/exist.jpg",)))


def test_openai_embedding_normalized():
    def handler(request):
        body = json.loads(request.content)
        assert body["input_type"] == "audio" and body["input"] == "clip.wav"
        return httpx.Response(200, json={"data": [{"embedding": [3.0, 4.0]}]})

    cfg = BackendConfig("clap", base_url="http://test", model="clap", modalities=("text", "audio"))
    b = OpenAICompatBackend(cfg)
    b.client = _client(handler)
    np.testing.assert_allclose(b.embed(EmbeddingRequest("clap", "audio", "clip.wav")), [0.6, 0.8])


def test_gateway_retries_real_transport_errors():
    attempts = []

    def handler(request):
        attempts.append(time.perf_counter())
        if len(attempts) < 3:
            return httpx.Response(500)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    cfg = BackendConfig("x", base_url="http://test", model="m")
    b = OpenAICompatBackend(cfg)
    b.client = _client(handler)
    gw = Gateway(sleep=lambda s: None)
    gw.register(cfg, b)
    assert gw.complete(gw.request("x", "hi")).text == "ok"
    assert len(attempts) == 3


def test_cache_tolerates_concurrent_writers(tmp_path):
    from cotcap.backends import ResponseCache

    cache = ResponseCache(tmp_path)
    errors = []

    def writer(i):
        try:
            for _ in range(20):
                cache.put("ab" + "0" * 62, {"text": "same"})
                assert cache.get("ab" + "0" * 62) == {"text": "same"}
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=writer, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors and len(cache) == 1
