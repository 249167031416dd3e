from __future__ import annotations

import json
import threading
import time

import pytest
import requests

from spatialgen.backends.base import BackendConfig
from spatialgen.backends.remote import RemoteImageBackend, RemoteTextBackend, _parse_list
from spatialgen.errors import BackendUnavailable, MalformedResponse
from spatialgen.graphs import CatalogObject, Entity, Scene, SubsetSelection


class FakeResponse:
    def __init__(self, status: int = 200, text_body: str = "", content: bytes = b"") -> None:
        self.status_code = status
        self._text_body = text_body
        self.content = content
        self.text = text_body

    def json(self) -> dict:
        return {"text": self._text_body}


class ScriptedSession:
    """Stands in for requests.Session; replies from a scripted queue."""

    def __init__(self, replies) -> None:
        self.replies = list(replies)
        self.requests: list[dict] = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def config(**overrides) -> BackendConfig:
    defaults = dict(endpoint="http://service/v1/chat", model="test-model", backoff_base=0.0)
    defaults.update(overrides)
    return BackendConfig(**defaults)


def test_gen_scenes_parses_json_array():
    session = ScriptedSession([FakeResponse(text_body=json.dumps(["kitchen", "garage", "library"]))])
    backend = RemoteTextBackend(config(), session=session)
    scenes = backend.gen_scenes(3, seed=1)
    assert [s.name for s in scenes] == ["kitchen", "garage", "library"]
    assert all(s.source == "llm" for s in scenes)


def test_retry_on_server_error_reuses_idempotency_key():
    session = ScriptedSession([
        FakeResponse(status=503),
        FakeResponse(status=503),
        FakeResponse(text_body=json.dumps(["kitchen"])),
    ])
    backend = RemoteTextBackend(config(), session=session)
    scenes = backend.gen_scenes(1, seed=9)
    assert len(scenes) == 1
    keys = {r["headers"]["Idempotency-Key"] for r in session.requests}
    assert len(keys) == 1  # retries are the same logical request


def test_unavailable_after_retry_budget():
    session = ScriptedSession([FakeResponse(status=500)] * 4)
    backend = RemoteTextBackend(config(max_retries=3), session=session)
    with pytest.raises(BackendUnavailable):
        backend.gen_scenes(1, seed=1)
    assert len(session.requests) == 4


def test_connection_errors_also_retry():
    session = ScriptedSession([
        requests.ConnectionError("down"),
        FakeResponse(text_body=json.dumps(["kitchen"])),
    ])
    backend = RemoteTextBackend(config(), session=session)
    assert len(backend.gen_scenes(1, seed=2)) == 1


def test_malformed_reply_triggers_strict_reask_then_fails():
    session = ScriptedSession([
        FakeResponse(text_body="I would rather chat about the weather."),
        FakeResponse(text_body="Still chatting."),
        FakeResponse(text_body="No list for you."),
    ])
    backend = RemoteTextBackend(config(reparse_retries=2), session=session)
    with pytest.raises(MalformedResponse):
        backend.gen_scenes(2, seed=3)
    assert len(session.requests) == 3
    assert "Respond with the requested format only" in session.requests[1]["json"]["messages"][0]["content"]


def test_verify_image_yes_no_and_maybe():
    scene = Scene(id="s", name="kitchen")
    entity = Entity(id="e", base_object=CatalogObject(scene_id="s", label="kettle"), description="a red kettle")
    png = b"\x89PNG\r\n\x1a\n" + b"0" * 32

    session = ScriptedSession([FakeResponse(text_body="Yes")])
    backend = RemoteTextBackend(config(), session=session)
    assert backend.verify_image(png, [entity], []) is True
    body = session.requests[0]["json"]
    assert body["temperature"] == 0.0  # verification runs cold
    assert isinstance(body["messages"][0]["content"], list)  # image attached

    session = ScriptedSession([FakeResponse(text_body="No")])
    backend = RemoteTextBackend(config(), session=session)
    assert backend.verify_image(png, [entity], []) is False

    session = ScriptedSession([FakeResponse(text_body="maybe")] * 3)
    backend = RemoteTextBackend(config(reparse_retries=2), session=session)
    with pytest.raises(MalformedResponse):
        backend.verify_image(png, [entity], [])


def test_verify_qa_withholds_everything_but_image_question_answer():
    session = ScriptedSession([FakeResponse(text_body="Yes")])
    backend = RemoteTextBackend(config(), session=session)
    png = b"\x89PNG\r\n\x1a\n" + b"1" * 16
    backend.verify_qa(png, "Is there a kettle in the image?", "Yes")
    prompt = session.requests[0]["json"]["messages"][0]["content"][0]["text"]
    assert "kettle" in prompt and "entities" not in prompt.lower()


def test_in_flight_bound_is_respected():
    lock = threading.Lock()
    state = {"current": 0, "peak": 0}

    class SlowSession:
        def post(self, url, json=None, headers=None, timeout=None):
            with lock:
                state["current"] += 1
                state["peak"] = max(state["peak"], state["current"])
            time.sleep(0.01)
            with lock:
                state["current"] -= 1
            return FakeResponse(text_body='["kitchen"]')

    backend = RemoteTextBackend(config(max_in_flight=3), session=SlowSession())
    threads = [threading.Thread(target=lambda i=i: backend.gen_scenes(1, seed=i)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 3
    assert backend.peak_in_flight <= 3


def test_auth_token_read_from_named_env_var(monkeypatch):
    monkeypatch.setenv("TEST_TOKEN_VAR", "sekrit")
    session = ScriptedSession([FakeResponse(text_body='["kitchen"]')])
    backend = RemoteTextBackend(config(auth_env="TEST_TOKEN_VAR"), session=session)
    backend.gen_scenes(1, seed=1)
    assert session.requests[0]["headers"]["Authorization"] == "Bearer sekrit"


def test_enrich_and_triplets_round_trip():
    selection = SubsetSelection(
        scene_id="s",
        chosen=(CatalogObject(scene_id="s", label="balloon"), CatalogObject(scene_id="s", label="balloon")),
    )
    enrich_reply = json.dumps([
        {"base": "balloon", "description": "a blue balloon", "attributes": {"color": "blue"}},
        {"base": "balloon", "description": "a yellow balloon", "attributes": {"color": "yellow"}},
    ])
    session = ScriptedSession([FakeResponse(text_body=enrich_reply)])
    backend = RemoteTextBackend(config(), session=session)
    entities = backend.enrich_entities(selection, seed=1)
    assert [e.description for e in entities] == ["a blue balloon", "a yellow balloon"]

    triplet_reply = json.dumps([
        {"subject": "a blue balloon", "relation": "to the left of, close to", "object": "a yellow balloon"},
    ])
    session = ScriptedSession([FakeResponse(text_body=triplet_reply)])
    backend = RemoteTextBackend(config(), session=session)
    triplets = backend.gen_triplets(entities, seed=2)
    assert len(triplets) == 1
    assert triplets[0].relation.direction is not None
    assert triplets[0].relation.distance is not None


def test_unknown_relation_fails_after_reparse_budget():
    entities = [
        Entity(id="a", base_object=CatalogObject(scene_id="s", label="x"), description="a red x"),
        Entity(id="b", base_object=CatalogObject(scene_id="s", label="y"), description="a blue y"),
    ]
    bad = json.dumps([{"subject": "a red x", "relation": "orbiting", "object": "a blue y"}])
    session = ScriptedSession([FakeResponse(text_body=bad)] * 3)
    backend = RemoteTextBackend(config(reparse_retries=2), session=session)
    with pytest.raises(MalformedResponse):
        backend.gen_triplets(entities, seed=1)


def test_remote_image_backend_checks_png_and_posts_boxes():
    from spatialgen.relations import BoundingBox, Canvas

    entity = Entity(id="a", base_object=CatalogObject(scene_id="s", label="box"), description="a red box")
    placements = [(entity, BoundingBox(1, 2, 30, 40))]

    png = b"\x89PNG\r\n\x1a\n" + b"data"
    session = ScriptedSession([FakeResponse(content=png)])
    backend = RemoteImageBackend(config(endpoint="http://service/v1/image"), session=session)
    data = backend.render(placements, "a caption", Canvas(), seed=5, instance_id="i")
    assert data == png
    body = session.requests[0]["json"]
    assert body["boxes"] == [{"description": "a red box", "box": [1, 2, 30, 40]}]
    assert body["seed"] == 5

    session = ScriptedSession([FakeResponse(content=b"not a png")])
    backend = RemoteImageBackend(config(endpoint="http://service/v1/image"), session=session)
    with pytest.raises(MalformedResponse):
        backend.render(placements, "a caption", Canvas(), seed=5)


def test_parse_list_accepts_bullets():
    assert _parse_list("- kitchen\n- garage\n2) library") == ["kitchen", "garage", "library"]
    with pytest.raises(MalformedResponse):
        _parse_list("   ")
