from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request

import pytest

from pageopt.service import PageOptService, make_server


@pytest.fixture()
def server(demo):
    service = PageOptService(demo)
    httpd = make_server(service, "127.0.0.1", 0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield service, f"http://127.0.0.1:{httpd.server_address[1]}"
    httpd.shutdown()
    httpd.server_close()
    service.close()


def call(url, body=None, ctype="application/json"):
    data = None if body is None else (body if isinstance(body, bytes) else json.dumps(body).encode())
    req = urllib.request.Request(url, data=data, headers={"Content-Type": ctype} if data is not None else {})
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def test_instantiate_and_click(server):
    service, base = server
    status, page = call(f"{base}/v1/instantiate", {"request_id": "r1"})
    assert status == 200
    assert page["html"].count("data-token=") == 8
    token = next(s["token"] for s in page["slots"] if s["kind"] == "choice")
    status, _ = call(f"{base}/v1/events", {"instance_id": page["instance_id"], "type": "click",
                                           "at": "2024-01-01T12:00:00Z", "token": token})
    assert status == 202
    service.flush()
    status, stats = call(f"{base}/v1/stats/ImageColorChoice")
    assert status == 200 and len(stats["arms"]) == 3
    assert sum(a["clicks"] for a in stats["arms"]) == 1
    status, health = call(f"{base}/v1/healthz")
    assert health["serves"] == 1 and health["status"] == "ok"


def test_duplicate_request_is_conflict(server):
    _, base = server
    assert call(f"{base}/v1/instantiate", {"request_id": "dup"})[0] == 200
    assert call(f"{base}/v1/instantiate", {"request_id": "dup"})[0] == 409


@pytest.mark.parametrize("path, body, ctype, status", [
    ("/v1/instantiate", b"{", "application/json", 400),
    ("/v1/instantiate", {"user_id": "u"}, "application/json", 400),
    ("/v1/instantiate", {"request_id": "x", "extra": {"a": 1}}, "application/json", 400),
    ("/v1/instantiate", {"request_id": "x"}, "text/plain", 415),
    ("/v1/events", {"instance_id": "i", "type": "wave", "at": "2024-01-01T00:00:00Z"}, "application/json", 400),
    ("/v1/nope", {}, "application/json", 404),
])
def test_bad_requests(server, path, body, ctype, status):
    _, base = server
    assert call(f"{base}{path}", body, ctype)[0] == status


def test_unknown_instance_is_dead_lettered(server):
    service, base = server
    status, _ = call(f"{base}/v1/events", {"instance_id": "ghost", "type": "click",
                                           "at": "2024-01-01T12:00:00Z", "token": "t"})
    assert status == 202
    service.flush()
    assert call(f"{base}/v1/healthz")[1]["dead_letters"] == 1


def test_unknown_routes(server):
    _, base = server
    assert call(f"{base}/v1/stats/NoSuchDof")[0] == 404
    assert call(f"{base}/elsewhere")[0] == 404


def test_concurrent_instantiations(server):
    service, base = server
    results: list[int] = []

    def worker(i):
        results.append(call(f"{base}/v1/instantiate", {"request_id": f"c{i}"})[0])

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == [200] * 8
    service.flush()
    assert service.health()["serves"] == 8
