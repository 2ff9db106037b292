import collections
import json
import math

import pytest
from scipy.stats import binom

from udistill.model_client import (
    BatchError,
    Distortion,
    GenParams,
    Generation,
    MockItem,
    MockModel,
    MockModelSpec,
    RemoteChatModel,
    TransportError,
    UnknownItemError,
    generate_batch,
)


def one_item_spec(answers, question="What is the probe answer for [item-00000]?", **kw):
    item = MockItem(id="item-00000", question=question, answers=answers)
    return MockModelSpec(items={"item-00000": item}, **kw)


def test_genparams_validation():
    with pytest.raises(ValueError):
        GenParams(temperature=-0.1)
    with pytest.raises(ValueError):
        GenParams(max_tokens=0)


def test_mock_degenerate_distribution():
    client = MockModel(one_item_spec([("<answer> B </answer>", 1.0)]))
    gen = client.generate("something about What is the probe answer for [item-00000]?", GenParams(seed=5))
    assert "<answer> B </answer>" in gen.text


def test_mock_echo_table():
    target = "<answer> B </answer> <confidence> very high </confidence>"
    spec = one_item_spec([("<answer> A </answer>", 1.0)])
    spec.echo["item-00000"] = target
    client = MockModel(spec)
    gen = client.generate("What is the probe answer for [item-00000]?", GenParams())
    assert gen.text == target


def test_mock_binomial_frequency():
    # Hoeffding bound sqrt(ln(2/0.01)/(2*1000)) ~ 0.052 at delta=0.01;
    # direct binomial tail check that the asserted window holds that much mass
    assert binom.cdf(759, 1000, 0.7) - binom.cdf(639, 1000, 0.7) > 0.99
    spec = one_item_spec([("<answer> A </answer>", 0.7), ("<answer> B </answer>", 0.3)])
    client = MockModel(spec)
    prompt = "What is the probe answer for [item-00000]?"
    counts = collections.Counter(
        client.generate(prompt, GenParams(seed=0), draw=i).text for i in range(1000)
    )
    assert 640 <= counts["<answer> A </answer>"] <= 760


def test_mock_determinism():
    spec = one_item_spec([("<answer> A </answer>", 0.5), ("<answer> B </answer>", 0.5)])
    a = MockModel(spec)
    b = MockModel(spec)
    prompt = "What is the probe answer for [item-00000]?"
    for i in range(50):
        assert a.generate(prompt, GenParams(seed=3), draw=i) == b.generate(
            prompt, GenParams(seed=3), draw=i
        )


def test_mock_temperature_zero_is_greedy():
    spec = one_item_spec([("<answer> A </answer>", 0.6), ("<answer> B </answer>", 0.4)])
    client = MockModel(spec)
    prompt = "What is the probe answer for [item-00000]?"
    texts = {client.generate(prompt, GenParams(temperature=0.0, seed=i)).text for i in range(20)}
    assert texts == {"<answer> A </answer>"}


def test_mock_unknown_item():
    client = MockModel(one_item_spec([("<answer> A </answer>", 1.0)]))
    with pytest.raises(UnknownItemError):
        client.generate("a prompt mentioning nothing familiar", GenParams())


def test_mock_reasoning_templates():
    spec = one_item_spec([("<answer> A </answer>", 1.0)])
    spec.reasoning_templates = ["first thought", "second thought"]
    client = MockModel(spec)
    prompt = "What is the probe answer for [item-00000]?"
    gen = client.generate(prompt, GenParams(seed=1))
    assert gen.text.startswith("<reasoning> ")
    assert "</reasoning> <answer> A </answer>" in gen.text
    traces = {client.generate(prompt, GenParams(seed=1), draw=i).text for i in range(30)}
    assert len(traces) == 2  # both templates get used


def test_mock_logprobs():
    spec = one_item_spec([("<answer> A </answer>", 1.0)])
    spec.items["item-00000"].token_prob = 0.5
    client = MockModel(spec)
    gen = client.generate(
        "What is the probe answer for [item-00000]?", GenParams(want_logprobs=True)
    )
    assert gen.token_logprobs is not None
    assert all(abs(lp - math.log(0.5)) < 1e-12 for _, lp in gen.token_logprobs)
    assert "".join(t for t, _ in gen.token_logprobs) == gen.text
    # logprobs only on request
    assert client.generate("What is the probe answer for [item-00000]?", GenParams()).token_logprobs is None


def test_mock_probability_validation():
    with pytest.raises(ValueError, match="sum"):
        MockModel(one_item_spec([("a", 0.5), ("b", 0.6)]))


def test_mock_spec_file_roundtrip(tmp_path):
    spec = one_item_spec([("<answer> A </answer>", 0.25), ("<answer> B </answer>", 0.75)])
    spec.reasoning_templates = ["because"]
    spec.echo["other"] = "echoed"
    spec.id_pattern = r"\[(item-\d+)\]"
    path = tmp_path / "mock.json"
    spec.save(path)
    loaded = MockModelSpec.load(path)
    assert loaded.to_json() == spec.to_json()
    # the reloaded spec drives an identical model
    p = "What is the probe answer for [item-00000]?"
    assert MockModel(loaded).generate(p, GenParams(seed=2)) == MockModel(spec).generate(
        p, GenParams(seed=2)
    )


def test_distortion_shapes():
    assert Distortion("identity")(0.3) == 0.3
    assert Distortion("square")(0.5) == 0.25
    assert Distortion("sqrt")(0.25) == 0.5
    pw = Distortion("piecewise", ((0.0, 0.0), (0.5, 0.1), (1.0, 1.0)))
    assert pw(0.25) == pytest.approx(0.05)
    assert pw(0.75) == pytest.approx(0.55)
    with pytest.raises(ValueError):
        Distortion("piecewise", ((0.0, 0.5), (1.0, 0.2)))  # decreasing
    with pytest.raises(ValueError):
        Distortion("nope")


def test_generate_batch_order_and_isolation():
    spec = one_item_spec([("<answer> A </answer>", 1.0)])
    client = MockModel(spec)
    prompts = ["What is the probe answer for [item-00000]?"] * 3
    out = generate_batch(client, prompts, GenParams(seed=0), parallelism=2)
    assert len(out) == 3
    assert all("<answer> A </answer>" in g.text for g in out)


class FlakyClient:
    """Wraps a mock; fails permanently for chosen prompt indices."""

    def __init__(self, inner, bad_prompts):
        self.inner = inner
        self.bad = set(bad_prompts)

    def generate(self, prompt, params, draw=0):
        if prompt in self.bad:
            raise TransportError("permanent failure")
        return self.inner.generate(prompt, params, draw)


def test_generate_batch_records_failures():
    spec = one_item_spec([("<answer> A </answer>", 1.0)])
    good = "What is the probe answer for [item-00000]?"
    prompts = [good] * 100
    prompts[37] = "POISON " + good
    client = FlakyClient(MockModel(spec), {prompts[37]})
    out = generate_batch(client, prompts, GenParams(seed=0), parallelism=8)
    assert len(out) == 100
    assert sum(g.failed for g in out) == 1
    assert out[37].failed


def test_generate_batch_all_failed():
    client = FlakyClient(None, {"x"})
    with pytest.raises(BatchError):
        generate_batch(client, ["x", "x"], GenParams(), parallelism=2)


def test_generate_batch_parallelism_invariance():
    spec = one_item_spec([("<answer> A </answer>", 0.5), ("<answer> B </answer>", 0.5)])
    base = "What is the probe answer for [item-00000]?"
    prompts = [base] * 1000
    params = [GenParams(seed=i) for i in range(1000)]  # fixed per-draw seeds
    seq = generate_batch(MockModel(spec), prompts, params, parallelism=1)
    par = generate_batch(MockModel(spec), prompts, params, parallelism=16)
    assert collections.Counter(g.text for g in seq) == collections.Counter(g.text for g in par)
    assert [g.text for g in seq] == [g.text for g in par]  # positional alignment too


# ---------------------------------------------------------------------------
# Remote client against a canned HTTP session


class FakeResponse:
    def __init__(self, status_code, body):
        self.status_code = status_code
        self._body = body
        self.text = json.dumps(body)

    def json(self):
        return self._body


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        return self.responses.pop(0)


def completion_body(text, logprobs=None):
    choice = {"message": {"content": text}, "finish_reason": "stop"}
    if logprobs is not None:
        choice["logprobs"] = {"content": [{"token": t, "logprob": lp} for t, lp in logprobs]}
    return {"choices": [choice]}


def test_remote_success_and_wire_format(monkeypatch):
    monkeypatch.setenv("UD_API_KEY", "sekrit")
    session = FakeSession([FakeResponse(200, completion_body("hello"))])
    client = RemoteChatModel("http://host/v1", "test-model", session=session, sleep=lambda s: None)
    gen = client.generate("hi there", GenParams(temperature=0.5, max_tokens=32))
    assert gen.text == "hello"
    req = session.requests[0]
    assert req["url"] == "http://host/v1/chat/completions"
    assert req["json"]["messages"] == [{"role": "user", "content": "hi there"}]
    assert req["json"]["temperature"] == 0.5
    assert req["json"]["max_tokens"] == 32
    assert req["headers"]["Authorization"] == "Bearer sekrit"


def test_remote_retries_on_429_then_succeeds():
    session = FakeSession(
        [
            FakeResponse(429, {"error": "slow down"}),
            FakeResponse(500, {"error": "boom"}),
            FakeResponse(200, completion_body("ok")),
        ]
    )
    client = RemoteChatModel("http://h", "m", api_key="", session=session, sleep=lambda s: None)
    assert client.generate("p", GenParams()).text == "ok"
    assert len(session.requests) == 3


def test_remote_gives_up_after_max_attempts():
    session = FakeSession([FakeResponse(500, {"e": 1}) for _ in range(5)])
    client = RemoteChatModel("http://h", "m", api_key="", session=session, sleep=lambda s: None)
    with pytest.raises(TransportError):
        client.generate("p", GenParams())
    assert len(session.requests) == 5


def test_remote_4xx_is_fatal_immediately():
    session = FakeSession([FakeResponse(400, {"error": "bad request"})])
    client = RemoteChatModel("http://h", "m", api_key="", session=session, sleep=lambda s: None)
    with pytest.raises(TransportError, match="400"):
        client.generate("p", GenParams())
    assert len(session.requests) == 1


def test_remote_parses_logprobs():
    session = FakeSession(
        [FakeResponse(200, completion_body("ab", logprobs=[("a", -0.1), ("b", -0.2)]))]
    )
    client = RemoteChatModel("http://h", "m", api_key="", session=session, sleep=lambda s: None)
    gen = client.generate("p", GenParams(want_logprobs=True))
    assert gen.token_logprobs == (("a", -0.1), ("b", -0.2))


def test_generation_record_roundtrip():
    gen = Generation(text="x", token_logprobs=(("x", -0.5),), finish_reason="stop")
    assert Generation.from_record(gen.to_record()) == gen
