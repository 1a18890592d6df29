import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossshot.backends import (FAIL, AuditLog, BackendError, BackendUnreachable, FakeTables, Judge, JudgeFailure,
                                JudgeRequest, NoScriptedResponse, fake_suite, verify_backend_contract)
from crossshot.backends.fakes import FakeEmbedding, FakeJudge
from crossshot.backends.prompts import TEMPLATES, template_fingerprints
from crossshot.backends.remote import (RemoteEmbedding, RemoteGrounding, RemoteJudge, RemoteScalar, TokenBucket,
                                       remote_suite)
from crossshot.backends.verdicts import VerdictError, extract_json, parse_action, parse_fidelity, parse_pair
from crossshot.config import BackendEndpoint, RunConfig
from crossshot.media import fingerprint

IMG = np.random.default_rng(0).integers(0, 256, size=(24, 32, 3), dtype=np.uint8)


# verdict parsing

def test_fidelity_verdict_normalizes_scores():
    v = parse_fidelity('{"overall": 7, "criteria": {"face": 8, "hair": null, "clothing": 10, "build": 0}}',
                       "character")
    assert v.overall == 0.7
    assert v.criteria == {"face": 0.8, "hair": None, "clothing": 1.0, "build": 0.0}


def test_fenced_and_embedded_json_is_accepted():
    assert extract_json('```json\n{"a": 1}\n```') == {"a": 1}
    assert extract_json('Sure! {"a": 2} hope this helps') == {"a": 2}


@pytest.mark.parametrize("text", ["looks fine to me", "[1, 2]", "", '{"overall": 7'])
def test_free_text_is_rejected(text):
    with pytest.raises(VerdictError):
        extract_json(text)


def test_cross_type_criteria_rejected():
    with pytest.raises(VerdictError, match="do not belong"):
        parse_fidelity('{"overall": 5, "criteria": {"face": 5, "shape": 4}}', "character")


@pytest.mark.parametrize("bad", ['{"overall": 11, "criteria": {}}', '{"overall": "high", "criteria": {}}',
                                 '{"criteria": {}}'])
def test_bad_scores_rejected(bad):
    with pytest.raises(VerdictError):
        parse_fidelity(bad, "object")


def test_action_verdict_allows_missing_interaction():
    v = parse_action('{"overall": 6, "depicted": "yes", "subject_identity": 5, "subject_action": 4, '
                     '"object_interaction": null, "motion_quality": 9}')
    assert v.depicted == 1.0 and v.object_interaction is None and v.motion_quality == 0.9


def test_pair_verdict_binary_forms():
    for raw, want in (("true", 1), ("false", 0), ('"same"', 1), ('"different"', 0), ("1", 1)):
        v = parse_pair(f'{{"same": {raw}, "similarity": 5, "criteria": {{}}}}', "location")
        assert v.same == want
    with pytest.raises(VerdictError):
        parse_pair('{"same": "maybe", "similarity": 5, "criteria": {}}', "location")


@given(st.integers(0, 10), st.dictionaries(st.sampled_from(["shape", "color_texture", "proportions", "details"]),
                                            st.one_of(st.none(), st.integers(0, 10))))
def test_fidelity_scores_land_in_unit_interval(overall, crit):
    v = parse_fidelity(json.dumps({"overall": overall, "criteria": crit}), "object")
    assert 0.0 <= v.overall <= 1.0
    assert set(v.criteria) == {"shape", "color_texture", "proportions", "details"}
    assert all(x is None or 0.0 <= x <= 1.0 for x in v.criteria.values())


# judge adapter

class _Seq:
    identity = "seq"

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        r = self.replies.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


REQ = JudgeRequest("fidelity", "fidelity/ep/1/Ann", "prompt", [IMG], "character")
GOOD = '{"overall": 6, "criteria": {"face": 6}}'


def test_judge_reasks_once_then_succeeds(tmp_path):
    backend = _Seq(["no idea", GOOD])
    audit = AuditLog(tmp_path / "log.jsonl")
    v = Judge(backend, audit, reasks=1).ask(REQ, lambda t: parse_fidelity(t, "character"), "character fidelity")
    assert v.overall == 0.6 and backend.calls == 2
    lines = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [bool(x["error"]) for x in lines] == [True, False]
    assert lines[1]["normalized"]["overall"] == 0.6
    assert lines[0]["images"] == [fingerprint(IMG)]


def test_judge_gives_up_after_reask_budget():
    backend = _Seq(["no", "still no"])
    with pytest.raises(JudgeFailure):
        Judge(backend, reasks=1).ask(REQ, lambda t: parse_fidelity(t, "character"), "g")
    assert backend.calls == 2


def test_judge_backend_error_becomes_judge_failure():
    with pytest.raises(JudgeFailure):
        Judge(_Seq([BackendError("down")])).ask(REQ, lambda t: parse_fidelity(t, "character"), "g")


def test_unscripted_request_is_not_a_judge_failure():
    judge = Judge(FakeJudge(1, FakeTables(), strict=True))
    with pytest.raises(NoScriptedResponse):
        judge.ask(REQ, lambda t: parse_fidelity(t, "character"), "g")
    assert not issubclass(NoScriptedResponse, JudgeFailure)


# fakes

def test_fakes_are_seed_deterministic():
    a, b, c = fake_suite(3), fake_suite(3), fake_suite(4)
    assert np.array_equal(a.embedding.embed(IMG), b.embedding.embed(IMG))
    assert not np.array_equal(a.embedding.embed(IMG), c.embedding.embed(IMG))
    assert a.judge.complete(REQ) == b.judge.complete(REQ)
    assert a.grounding.detect(IMG, "x") == b.grounding.detect(IMG, "x")


def test_fake_tables_drive_responses(tmp_path):
    t = FakeTables()
    fp = fingerprint(IMG)
    t.embedding[fp] = [3.0, 4.0]
    t.judge[REQ.key] = FAIL
    t.grounding[f"{fp}|cat"] = [[1, 1, 5, 5, 0.9], [2, 2, 6, 6, 0.1]]
    t.save(tmp_path / "t.json")
    suite = fake_suite(0, FakeTables.load(tmp_path / "t.json"), strict=True)
    assert np.allclose(suite.embedding.embed(IMG), [0.6, 0.8])
    with pytest.raises(BackendError):
        suite.judge.complete(REQ)
    dets = suite.grounding.detect(IMG, "cat")
    assert [d.confidence for d in dets] == [0.9]  # below tau_box dropped
    assert suite.grounding.detect(IMG, "dog") == []


def test_fake_suite_passes_contract():
    suite = fake_suite(11)
    for role in suite.ROLES:
        report = verify_backend_contract(getattr(suite, role))
        assert report.ok, (role, report.violations)
        assert report.checks > 0


# contract violations

class _NotUnit:
    identity = "bad"

    def embed(self, image):
        return np.array([1.0, 1.0])


class _Flaky:
    identity = "flaky"

    def __init__(self):
        self.n = 0

    def similarity(self, image, text):
        self.n += 1
        return 0.1 * (self.n % 2)


class _Untyped:
    identity = "untyped"

    def predict(self, image):
        raise ZeroDivisionError("oops")


class _Chatty:
    identity = "chatty"

    def complete(self, request):
        return "I think they match."


class _Offline:
    identity = "offline"

    def embed(self, image):
        raise BackendUnreachable("connection refused")


@pytest.mark.parametrize("backend,needle", [(_NotUnit(), "unit-norm"), (_Flaky(), "not deterministic"),
                                            (_Untyped(), "untyped failure"), (_Chatty(), "non-structured verdict")])
def test_contract_reports_violations(backend, needle):
    report = verify_backend_contract(backend)
    assert not report.ok
    assert any(needle in v for v in report.violations)


def test_contract_propagates_unreachable():
    with pytest.raises(BackendUnreachable):
        verify_backend_contract(_Offline())


def test_template_fingerprints_cover_all_templates():
    fps = template_fingerprints()
    assert set(fps) == set(TEMPLATES) and all(len(v) >= 16 for v in fps.values())


# remote clients

def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_remote_retries_server_errors_then_succeeds():
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"embedding": [0.0, 2.0]})

    sleeps = []
    emb = RemoteEmbedding("http://svc", client=_client(handler), sleep=sleeps.append)
    assert np.allclose(emb.embed(IMG), [0.0, 1.0])
    assert len(calls) == 3 and sleeps == [0.5, 1.0]
    body = json.loads(calls[0].content)
    assert body["model"] == emb.identity and "image" in body


def test_remote_gives_up_after_three_attempts():
    def handler(request):
        return httpx.Response(429)

    emb = RemoteEmbedding("http://svc", client=_client(handler), sleep=lambda s: None)
    with pytest.raises(BackendError):
        emb.embed(IMG)


def test_remote_transport_error_is_unreachable():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    emb = RemoteEmbedding("http://svc", client=_client(handler), sleep=lambda s: None)
    with pytest.raises(BackendUnreachable):
        emb.embed(IMG)


def test_remote_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request")

    with pytest.raises(BackendError, match="400"):
        RemoteScalar("http://svc", "m", 0, 1, client=_client(handler), sleep=lambda s: None).predict(IMG)
    assert len(calls) == 1


def test_remote_grounding_thresholds_and_clamps():
    def handler(request):
        return httpx.Response(200, json={"detections": [{"box": [-3, 2, 40, 10], "confidence": 0.8},
                                                        {"box": [1, 1, 2, 2], "confidence": 0.1}]})

    g = RemoteGrounding("http://svc", client=_client(handler))
    dets = g.detect(IMG, "a cat")
    assert len(dets) == 1 and dets[0].box == (0.0, 2.0, 32.0, 10.0)


def test_remote_scalar_range_enforced():
    def handler(request):
        return httpx.Response(200, json={"score": 120})

    with pytest.raises(BackendError, match="outside"):
        RemoteScalar("http://svc", "musiq", 0, 100, client=_client(handler)).predict(IMG)


def test_remote_judge_request_shape():
    seen = {}

    def handler(request):
        seen.update(json.loads(request.content))
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"text": GOOD})

    j = RemoteJudge("http://svc", client=_client(handler), api_keys=["k1", "k2"])
    assert j.complete(REQ) == GOOD
    assert seen["temperature"] == 0.0 and seen["response_format"] == "json"
    assert seen["auth"] == "Bearer k1" and j.n_keys == 2


def test_token_bucket_waits_for_refill():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    bucket = TokenBucket(60, capacity=2, clock=lambda: now[0], sleep=sleep)
    assert bucket.acquire() == 0 and bucket.acquire() == 0
    waited = bucket.acquire()
    assert waited == pytest.approx(1.0)


def test_remote_suite_requires_endpoints(monkeypatch, tmp_path):
    for role in ("GROUNDING", "EMBEDDING", "TEXT_IMAGE", "JUDGE", "FLOW", "AESTHETIC", "IMAGING"):
        monkeypatch.delenv(f"CROSSSHOT_{role}_URL", raising=False)
    cfg = RunConfig(dataset=tmp_path)
    with pytest.raises(BackendError, match="no endpoint"):
        remote_suite(cfg)
    for role in ("GROUNDING", "EMBEDDING", "TEXT_IMAGE", "JUDGE", "FLOW", "AESTHETIC", "IMAGING"):
        monkeypatch.setenv(f"CROSSSHOT_{role}_URL", f"http://{role.lower()}")
    monkeypatch.setenv("CROSSSHOT_JUDGE_API_KEYS", "a, b,,c")
    cfg.backends["judge"] = BackendEndpoint("http://override", "judge-x")
    suite = remote_suite(cfg)
    assert suite.judge.url == "http://override" and suite.judge.identity == "judge-x"
    assert suite.judge.n_keys == 3
    assert suite.identities()["embedding"]["identity"] == "facebook/dinov2-base"


@settings(max_examples=30)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=8))
def test_fake_embedding_is_unit_norm(vec):
    if np.linalg.norm(vec) < 1e-3:
        return
    t = FakeTables()
    t.embedding[fingerprint(IMG)] = vec
    e = FakeEmbedding(0, t).embed(IMG)
    assert abs(np.linalg.norm(e) - 1.0) < 1e-9
