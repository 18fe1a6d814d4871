import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import httpx
import pytest

from repodomain.errors import AuthFailed, CorruptCache, NotFound, RateLimited, TransportError, TruncatedHistory
from repodomain.ingest import Cache, CommitRecord, GitHubClient, RawRepo, RepoRef, author_identity

FIXTURES = Path(__file__).parent / "fixtures" / "github"
NOW = datetime(2024, 5, 1, tzinfo=timezone.utc)
REF = RepoRef("acme", "widget")


def load(name):
    return json.loads((FIXTURES / name).read_text())


class FakeGitHub:
    """Serves the bundled fixtures; knobs inject failures."""

    def __init__(self, workflows="workflows.json", fail_commit_page2=False, missing=()):
        self.workflows = workflows
        self.fail_commit_page2 = fail_commit_page2
        self.missing = set(missing)
        self.calls: list[str] = []

    def page(self, request, name, pages):
        page = int(request.url.params.get("page", "1"))
        headers = {"X-RateLimit-Remaining": "4000", "X-RateLimit-Reset": str(int(NOW.timestamp()) + 60)}
        if page < pages:
            nxt = request.url.copy_set_param("page", str(page + 1))
            headers["Link"] = f'<{nxt}>; rel="next"'
        return httpx.Response(200, json=load(f"{name}_{page}.json"), headers=headers)

    def __call__(self, request: httpx.Request) -> httpx.Response:
        path = request.url.path.removeprefix("/repos/acme/widget")
        self.calls.append(path)
        if request.url.path.startswith("/repos/gone/") or path in self.missing:
            return httpx.Response(404, json={"message": "Not Found"})
        if path == "":
            return httpx.Response(200, json=load("repo.json"))
        if path == "/readme":
            assert request.headers["Accept"] == "application/vnd.github.raw"
            return httpx.Response(200, text=(FIXTURES / "readme.md").read_text())
        if path == "/labels":
            return self.page(request, "labels", 2)
        if path == "/commits":
            if self.fail_commit_page2 and request.url.params.get("page") == "2":
                return httpx.Response(502)
            return self.page(request, "commits", 2)
        simple = {
            "/topics": "topics.json",
            "/languages": "languages.json",
            "/contributors": "contributors.json",
            "/contents": "contents.json",
            "/contents/.github/workflows": self.workflows,
            "/releases": "releases.json",
        }
        return httpx.Response(200, json=load(simple[path]))


def client(handler, cache=None, **kw):
    return GitHubClient(
        token="t", cache=cache, transport=httpx.MockTransport(handler),
        sleep=lambda s: None, clock=lambda: NOW, **kw,
    )


def test_fetch_repo_fields():
    raw = client(FakeGitHub()).fetch_repo(REF)
    assert raw.description == "Widget toolkit for the web"
    assert raw.readme.startswith("# Widget")
    assert raw.topics == ("javascript", "ui")
    assert raw.licence_key == "mit"
    assert raw.languages == {"JavaScript": 52000, "CSS": 3000}
    assert raw.labels == ("bug", "enhancement", "good first issue")
    assert raw.contributors == (("carol", 40), ("alice", 10), ("bob", 10))
    assert raw.root_entries == ("README.md", "src", ".github")
    assert (raw.releases, raw.stars, raw.forks) == (3, 1200, 87)
    assert raw.has_workflow_files is True


def test_workflow_detection_needs_a_file():
    assert client(FakeGitHub(workflows="workflows_none.json")).fetch_repo(REF).has_workflow_files is False
    no_dir = FakeGitHub(missing={"/contents/.github/workflows"})
    assert client(no_dir).fetch_repo(REF).has_workflow_files is False


def test_absent_readme_and_topics_are_absence_markers(tmp_path):
    fake = FakeGitHub(missing={"/readme", "/topics"})
    cache = Cache(tmp_path)
    raw = client(fake, cache).fetch_repo(REF)
    assert raw.readme is None and raw.topics == ()
    assert cache.read_repo(REF) == raw


def test_cache_roundtrip_and_hit(tmp_path):
    cache = Cache(tmp_path)
    fake = FakeGitHub()
    first = client(fake, cache).fetch_repo(REF)
    calls = len(fake.calls)
    second = client(fake, cache).fetch_repo(REF)
    assert second == first and len(fake.calls) == calls
    assert (tmp_path / "acme__widget" / "repo.json").exists()
    assert (tmp_path / "acme__widget" / "repo.sha256").exists()
    assert RawRepo.from_dict(first.to_dict()) == first
    client(fake, cache, refresh=True).fetch_repo(REF)
    assert len(fake.calls) > calls


def test_corrupt_cache_is_evicted_and_refetched(tmp_path):
    cache = Cache(tmp_path)
    fake = FakeGitHub()
    client(fake, cache).fetch_repo(REF)
    path = cache.path(REF, "repo")
    path.write_text(path.read_text().replace("1200", "9999"))
    with pytest.raises(CorruptCache):
        cache.read_repo(REF)
    assert not path.exists()
    assert client(fake, cache).fetch_repo(REF).stars == 1200


def test_not_found_marks_gone(tmp_path):
    cache = Cache(tmp_path)
    gone = RepoRef("gone", "thing")
    with pytest.raises(NotFound):
        client(FakeGitHub(), cache).fetch_repo(gone)
    assert cache.is_gone(gone)
    assert gone in cache.refs()


def test_commits_deduplicated_and_cached(tmp_path):
    cache = Cache(tmp_path)
    commits = client(FakeGitHub(), cache).fetch_commits(REF)
    shas = [c.sha for c in commits]
    assert shas == [f"{i:040x}" for i in (1, 2, 3, 4)]
    assert commits[2].author_id == author_identity(None, "Dana", "dana@example.org")
    assert commits[2].author_id.startswith("anon:")
    assert cache.read_commits(REF) == commits


def test_truncated_history_carries_partial():
    with pytest.raises(TruncatedHistory) as err:
        list(client(FakeGitHub(fail_commit_page2=True)).iter_commits(REF))
    assert [c.sha for c in err.value.partial] == [f"{i:040x}" for i in (1, 2, 3)]


def test_author_identity_normalises():
    assert author_identity("octo", "x", "y") == "octo"
    assert author_identity(None, " Dana ", "DANA@example.org") == author_identity(None, "dana", "dana@example.org")


def test_retry_then_transport_error():
    attempts = []

    def flaky(request):
        attempts.append(1)
        return httpx.Response(503) if len(attempts) < 3 else httpx.Response(200, json={"ok": 1})

    assert client(flaky)._get_json("/x") == {"ok": 1}

    def down(request):
        return httpx.Response(500)

    with pytest.raises(TransportError):
        client(down)._get_json("/x")


def test_auth_failure():
    with pytest.raises(AuthFailed):
        client(lambda r: httpx.Response(401))._get_json("/x")


def test_rate_limit_waits_until_reset():
    slept = []
    reset = int((NOW + timedelta(seconds=30)).timestamp())
    state = {"n": 0}

    def handler(request):
        state["n"] += 1
        if state["n"] == 1:
            return httpx.Response(403, headers={"X-RateLimit-Remaining": "0", "X-RateLimit-Reset": str(reset)})
        return httpx.Response(200, json=[], headers={"X-RateLimit-Remaining": "10"})

    c = GitHubClient(token="t", transport=httpx.MockTransport(handler), sleep=slept.append, clock=lambda: NOW)
    assert c._get_json("/x") == []
    assert slept == [30.0]


def test_rate_limit_without_waiting():
    reset = int((NOW + timedelta(seconds=30)).timestamp())

    def handler(request):
        return httpx.Response(403, headers={"X-RateLimit-Remaining": "0", "X-RateLimit-Reset": str(reset)})

    with pytest.raises(RateLimited) as err:
        client(handler, wait_on_rate_limit=False)._get_json("/x")
    assert err.value.reset_at == NOW + timedelta(seconds=30)


def test_token_from_environment(monkeypatch):
    monkeypatch.setenv("REPODOMAIN_GITHUB_TOKEN", "abc")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("Authorization")
        return httpx.Response(200, json={})

    GitHubClient(transport=httpx.MockTransport(handler))._get_json("/x")
    assert seen["auth"] == "Bearer abc"


def test_commit_record_validation():
    with pytest.raises(ValueError):
        CommitRecord("xyz", "a", "m", NOW)
    with pytest.raises(ValueError):
        RepoRef.parse("no-slash")
