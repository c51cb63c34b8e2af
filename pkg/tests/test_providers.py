from __future__ import annotations

import json

import httpx
import numpy as np
import pytest

from dualib.errors import EmbeddingError, MalformedReplyError, ScriptMissError, TransportError
from dualib.model import ROLES, Config
from dualib.providers import prompts
from dualib.providers.base import chat, chat_many, make_request
from dualib.providers.embedding import EmbeddingBank, HashingEmbedder, HttpEmbedder, cosine
from dualib.providers.http import HttpChatProvider
from dualib.providers.replies import ReplyFormatError, parse_reply
from dualib.providers.scripted import ScriptedProvider, load_script

CFG = Config()


# reply grammar


def test_parse_program_strips_fences():
    assert parse_reply("prog_gen", "<program>\n```\nreturn 1\n```\n</program>") == "return 1\n"
    with pytest.raises(ReplyFormatError):
        parse_reply("prog_gen", "return 1")
    with pytest.raises(ReplyFormatError):
        parse_reply("prog_gen", "<program>a</program><program>b</program>")


def test_parse_rating_and_verdict():
    r = parse_reply("quality_judge", "<rating>8.7</rating><reasoning>fine</reasoning>")
    assert r.rating == 8.7 and r.reasoning == "fine"
    for bad in ("<rating>11</rating>", "<rating>high</rating>", "<rating>0.5</rating>"):
        with pytest.raises(ReplyFormatError):
            parse_reply("quality_judge", bad)
    assert parse_reply("correctness_judge", "<verdict>correct</verdict>").correct is True
    assert parse_reply("correctness_judge", "<verdict>INCORRECT</verdict>").correct is False
    with pytest.raises(ReplyFormatError):
        parse_reply("correctness_judge", "<verdict>MAYBE</verdict>")


def test_parse_clusters():
    raw = ("<cluster><example_ids>[1, 2, 3]</example_ids><pattern>p</pattern><parameters>a, b</parameters>"
           "<abstraction_potential>9.5</abstraction_potential></cluster>"
           "<unclustered><example_ids>4</example_ids></unclustered>")
    a = parse_reply("cluster_analyst", raw)
    assert a.clusters[0].example_ids == (1, 2, 3) and a.clusters[0].parameters == ("a", "b")
    assert a.unclustered == (4,)
    with pytest.raises(ReplyFormatError):
        parse_reply("cluster_analyst", raw.replace("[1, 2, 3]", "[1, 2, 2]"))
    with pytest.raises(ReplyFormatError):
        parse_reply("cluster_analyst", raw.replace("<example_ids>4", "<example_ids>3"))


def test_parse_groups():
    raw = "<groups><group><tools>a, b</tools><similarity>0.97</similarity></group></groups>"
    (g,) = parse_reply("dedup_analyst", raw)
    assert g.tools == ("a", "b") and g.similarity == 0.97
    assert parse_reply("dedup_analyst", "<groups></groups>") == ()
    with pytest.raises(ReplyFormatError):
        parse_reply("dedup_analyst", "<group><tools>a, b</tools><similarity>1</similarity></group>")
    with pytest.raises(ReplyFormatError):
        parse_reply("dedup_analyst", "<groups><group><tools>a</tools><similarity>1</similarity></group></groups>")


# chat with one reformat retry


class Sequence:
    def __init__(self, *replies):
        self.replies = list(replies)
        self.requests = []

    def complete(self, req):
        self.requests.append(req)
        return self.replies.pop(0)

    def spec(self):
        return {"kind": "test"}


def test_chat_retries_once_then_fails():
    req = make_request(CFG, "quality_judge", "rate it")
    p = Sequence("no tags", "<rating>9</rating>")
    r = chat(p, req)
    assert r.parsed.rating == 9 and r.attempts == 2
    assert p.requests[1].attempt == 1 and len(p.requests[1].messages) == 3
    with pytest.raises(MalformedReplyError) as exc:
        chat(Sequence("bad", "still bad"), req)
    assert exc.value.role == "quality_judge"


def test_request_fingerprint_ignores_key_and_context():
    a = make_request(CFG, "prog_gen", "x", key="k1", context={"a": 1})
    b = make_request(CFG, "prog_gen", "x", key="k2")
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != make_request(CFG, "prog_gen", "x", sample_index=1).fingerprint
    assert a.temperature == 1.0 and make_request(CFG, "quality_judge", "x").temperature == 0.0


# scripted provider


def test_scripted_lookup_order():
    req = make_request(CFG, "prog_gen", "x", key="prog_gen/q1/i1/s0")
    p = ScriptedProvider({"prog_gen": {
        f"fp:{req.fingerprint}": "<program>return 1\n</program>",
        "key:prog_gen/q1/i1/s0": "<program>return 2\n</program>",
    }})
    assert chat(p, req).parsed == "return 1\n"
    other = make_request(CFG, "prog_gen", "y", key="prog_gen/q1/i1/s0")
    assert chat(p, other).parsed == "return 2\n"
    with pytest.raises(ScriptMissError):
        chat(p, make_request(CFG, "prog_gen", "z", key="nope"))


def test_scripted_retry_key():
    req = make_request(CFG, "quality_judge", "x", key="k")
    p = ScriptedProvider({"quality_judge": {"key:k": "garbage", "key:k!retry": "<rating>9</rating>"}})
    r = chat(p, req)
    assert r.parsed.rating == 9 and p.calls["quality_judge"] == 2


def test_scripted_policy_fallback():
    p = ScriptedProvider({}, policy=lambda req: "<score>3</score>")
    assert chat(p, make_request(CFG, "complexity_rater", "x")).parsed.score == 3


def test_load_script(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"schema_version": 1, "policy": None, "replies": {"prog_gen": {"key:a": "b"}}}))
    data = load_script(p)
    assert data["replies"]["prog_gen"]["key:a"] == "b" and len(data["sha256"]) == 64
    p.write_text(json.dumps({"schema_version": 2}))
    with pytest.raises(Exception):
        load_script(p)


def test_chat_many_keeps_order():
    p = ScriptedProvider({}, policy=lambda req: f"<score>{req.sample_index + 1}</score>")
    reqs = [make_request(CFG, "complexity_rater", "x", sample_index=i) for i in range(6)]
    assert [r.parsed.score for r in chat_many(p, reqs, workers=3)] == [1, 2, 3, 4, 5, 6]


# prompts


def test_every_role_has_a_template():
    for role in ROLES:
        assert prompts.template(role).template
    with pytest.raises(KeyError):
        prompts.render("rewriter", question="only one field")


# HTTP


def _mock(handler):
    return httpx.MockTransport(handler)


def test_http_chat_sends_key_from_env_and_retries(monkeypatch):
    monkeypatch.setenv("TEST_DUALIB_KEY", "sekret")
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) == 1:
            return httpx.Response(503)
        body = json.loads(request.content)
        assert body["model"] == "judge-model" and body["temperature"] == 0.0
        return httpx.Response(200, json={"choices": [{"message": {"content": "<rating>9</rating>"}}]})

    p = HttpChatProvider("http://x/v1", "gen-model", role_models={"quality_judge": "judge-model"},
                         key_env="TEST_DUALIB_KEY", transport=_mock(handler), sleep=lambda s: None)
    r = chat(p, make_request(CFG, "quality_judge", "rate"))
    assert r.parsed.rating == 9
    assert seen[-1].headers["authorization"] == "Bearer sekret"
    assert seen[-1].url.path == "/v1/chat/completions"
    assert "sekret" not in json.dumps(p.spec())


def test_http_gives_up_after_retries():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(429)

    p = HttpChatProvider("http://x", "m", max_retries=2, transport=_mock(handler), sleep=lambda s: None)
    with pytest.raises(TransportError):
        p.complete(make_request(CFG, "prog_gen", "x"))
    assert len(calls) == 3


def test_http_client_error_is_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="no")

    p = HttpChatProvider("http://x", "m", transport=_mock(handler), sleep=lambda s: None)
    with pytest.raises(TransportError):
        p.complete(make_request(CFG, "prog_gen", "x"))
    assert len(calls) == 1


def test_http_embedder():
    def handler(request):
        texts = json.loads(request.content)["input"]
        return httpx.Response(200, json={"data": [{"index": i, "embedding": [1.0, float(i)]}
                                                  for i in reversed(range(len(texts)))]})

    e = HttpEmbedder("http://x", "emb", transport=_mock(handler))
    a, b = e.embed(["one", "two"])
    assert np.allclose(a, [1, 0]) and np.allclose(b, np.array([1, 1]) / np.sqrt(2))


# embeddings


def test_hashing_embedder_properties():
    e = HashingEmbedder()
    a, b, c = e.embed(["How many cups?", "how many CUPS", "Which lamp is farthest?"])
    assert cosine(a, b) == pytest.approx(1.0)
    assert cosine(a, c) < 0.5
    assert np.linalg.norm(a) == pytest.approx(1.0)
    with pytest.raises(EmbeddingError):
        e.embed(["?!"])
    with pytest.raises(EmbeddingError):
        cosine(np.ones(3), np.ones(4))


def test_bank_embeds_each_text_once():
    bank = EmbeddingBank(HashingEmbedder())
    bank.get_many(["a b", "c d", "a b"])
    bank.get_many(["a b", "e f"])
    bank.get("c d")
    assert bank.texts_embedded == 3 and bank.provider_calls == 2
    back = EmbeddingBank.from_json(HashingEmbedder(), json.loads(json.dumps(bank.to_json())))
    assert set(back.vectors) == {"a b", "c d", "e f"}
    assert EmbeddingBank.from_json(HashingEmbedder(64), bank.to_json()).vectors == {}
