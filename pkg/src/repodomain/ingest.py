"""GitHub REST v3 ingestion with an on-disk, checksummed cache.

The client is synchronous (httpx) and bounded by a per-token semaphore so a
thread pool can share one instance.  Repository metadata and commit lists are
cached under ``<cache>/<owner>__<name>/<resource>.json`` with a ``.sha256``
sidecar; a corrupt entry is evicted and refetched.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator

import httpx

from .errors import (
    AuthFailed,
    CorruptCache,
    IoError,
    NotFound,
    RateLimited,
    TransportError,
    TruncatedHistory,
)

logger = logging.getLogger(__name__)

API_URL = "https://api.github.com"
TOKEN_ENV = "REPODOMAIN_GITHUB_TOKEN"
PER_PAGE = 100
MAX_RETRIES = 3


def _utc(ts: datetime) -> datetime:
    return ts.astimezone(timezone.utc) if ts.tzinfo else ts.replace(tzinfo=timezone.utc)


def _parse_ts(value: str) -> datetime:
    return _utc(datetime.fromisoformat(value.replace("Z", "+00:00")))


@dataclass(frozen=True, order=True)
class RepoRef:
    owner: str
    name: str

    def __post_init__(self):
        for part in (self.owner, self.name):
            if not part or "/" in part or part.strip() != part:
                raise ValueError(f"invalid repository reference part: {part!r}")

    @classmethod
    def parse(cls, text: str) -> "RepoRef":
        owner, sep, name = text.strip().partition("/")
        if not sep:
            raise ValueError(f"expected owner/name, got {text!r}")
        return cls(owner, name)

    def __str__(self) -> str:
        return f"{self.owner}/{self.name}"

    @property
    def slug(self) -> str:
        return f"{self.owner}__{self.name}"


@dataclass(frozen=True)
class RawRepo:
    ref: RepoRef
    description: str | None
    readme: str | None
    topics: tuple[str, ...]
    licence_key: str | None
    languages: dict[str, int]
    labels: tuple[str, ...]
    contributors: tuple[tuple[str, int], ...]
    root_entries: tuple[str, ...]
    releases: int
    stars: int
    forks: int
    has_workflow_files: bool
    fetched_at: datetime

    def __post_init__(self):
        for name in ("releases", "stars", "forks"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if any(v < 0 for v in self.languages.values()):
            raise ValueError("language byte counts must be nonnegative")
        if any(c < 0 for _, c in self.contributors):
            raise ValueError("contributor commit counts must be nonnegative")
        # descending by commit count, ties by login for a stable order
        ordered = tuple(sorted(self.contributors, key=lambda lc: (-lc[1], lc[0])))
        object.__setattr__(self, "contributors", ordered)
        object.__setattr__(self, "fetched_at", _utc(self.fetched_at))

    def to_dict(self) -> dict:
        return {
            "ref": str(self.ref),
            "description": self.description,
            "readme": self.readme,
            "topics": list(self.topics),
            "licence_key": self.licence_key,
            "languages": dict(self.languages),
            "labels": list(self.labels),
            "contributors": [[login, count] for login, count in self.contributors],
            "root_entries": list(self.root_entries),
            "releases": self.releases,
            "stars": self.stars,
            "forks": self.forks,
            "has_workflow_files": self.has_workflow_files,
            "fetched_at": self.fetched_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawRepo":
        return cls(
            ref=RepoRef.parse(d["ref"]),
            description=d["description"],
            readme=d["readme"],
            topics=tuple(d["topics"]),
            licence_key=d["licence_key"],
            languages={str(k): int(v) for k, v in d["languages"].items()},
            labels=tuple(d["labels"]),
            contributors=tuple((str(l), int(c)) for l, c in d["contributors"]),
            root_entries=tuple(d["root_entries"]),
            releases=int(d["releases"]),
            stars=int(d["stars"]),
            forks=int(d["forks"]),
            has_workflow_files=bool(d["has_workflow_files"]),
            fetched_at=_parse_ts(d["fetched_at"]),
        )


@dataclass(frozen=True)
class CommitRecord:
    sha: str
    author_id: str
    message: str
    authored_at: datetime

    def __post_init__(self):
        if len(self.sha) != 40 or any(ch not in "0123456789abcdef" for ch in self.sha):
            raise ValueError(f"not a 40-hex sha: {self.sha!r}")
        object.__setattr__(self, "authored_at", _utc(self.authored_at))

    def to_dict(self) -> dict:
        return {
            "sha": self.sha,
            "author_id": self.author_id,
            "message": self.message,
            "authored_at": self.authored_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CommitRecord":
        return cls(d["sha"], d["author_id"], d["message"], _parse_ts(d["authored_at"]))


def author_identity(login: str | None, name: str | None, email: str | None) -> str:
    """Login when GitHub resolved one, else a hash of the normalized name and email."""
    if login:
        return login
    key = f"{(name or '').strip().lower()}\x00{(email or '').strip().lower()}"
    return "anon:" + hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


@dataclass
class RateBudget:
    remaining: int = 5000
    reset_at: datetime = field(default_factory=lambda: datetime.fromtimestamp(0, timezone.utc))
    max_concurrent: int = 4

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be positive")
        self.remaining = max(0, self.remaining)


# ---------------------------------------------------------------- cache


class Cache:
    """File cache keyed by (RepoRef, resource kind).

    Readers never see a half-written entry: payloads are written to a temp
    file and renamed, sidecar last.  One lock per key serialises writers.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._guard = threading.Lock()

    def _lock(self, ref: RepoRef, kind: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault((ref.slug, kind), threading.Lock())

    def path(self, ref: RepoRef, kind: str) -> Path:
        return self.root / ref.slug / f"{kind}.json"

    def has(self, ref: RepoRef, kind: str) -> bool:
        return self.path(ref, kind).exists()

    def write(self, ref: RepoRef, kind: str, payload) -> None:
        data = json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8")
        digest = hashlib.sha256(data).hexdigest()
        target = self.path(ref, kind)
        sidecar = target.with_suffix(".sha256")
        with self._lock(ref, kind):
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                tmp = target.with_suffix(".json.tmp")
                tmp.write_bytes(data)
                os.replace(tmp, target)
                tmp = sidecar.with_suffix(".sha256.tmp")
                tmp.write_text(digest + "\n", encoding="ascii")
                os.replace(tmp, sidecar)
            except OSError as exc:
                raise IoError(f"cannot write cache entry {target}: {exc}") from exc

    def read(self, ref: RepoRef, kind: str):
        """Return the cached payload, or None when there is no entry."""
        target = self.path(ref, kind)
        sidecar = target.with_suffix(".sha256")
        if not target.exists():
            return None
        try:
            data = target.read_bytes()
            expected = sidecar.read_text(encoding="ascii").strip() if sidecar.exists() else ""
        except OSError as exc:
            raise IoError(f"cannot read cache entry {target}: {exc}") from exc
        if hashlib.sha256(data).hexdigest() != expected:
            self.evict(ref, kind)
            raise CorruptCache(f"checksum mismatch for {target}; entry evicted")
        try:
            return json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self.evict(ref, kind)
            raise CorruptCache(f"undecodable cache entry {target}; entry evicted") from exc

    def evict(self, ref: RepoRef, kind: str) -> None:
        target = self.path(ref, kind)
        for p in (target, target.with_suffix(".sha256")):
            try:
                p.unlink()
            except FileNotFoundError:
                pass

    def write_repo(self, raw: RawRepo) -> None:
        self.write(raw.ref, "repo", raw.to_dict())

    def read_repo(self, ref: RepoRef) -> RawRepo | None:
        payload = self.read(ref, "repo")
        return None if payload is None else RawRepo.from_dict(payload)

    def write_commits(self, ref: RepoRef, commits: list[CommitRecord]) -> None:
        self.write(ref, "commits", [c.to_dict() for c in commits])

    def read_commits(self, ref: RepoRef) -> list[CommitRecord] | None:
        payload = self.read(ref, "commits")
        return None if payload is None else [CommitRecord.from_dict(c) for c in payload]

    def mark_gone(self, ref: RepoRef, reason: str) -> None:
        self.write(ref, "status", {"status": "gone", "reason": reason})

    def is_gone(self, ref: RepoRef) -> bool:
        try:
            payload = self.read(ref, "status")
        except CorruptCache:
            return False
        return bool(payload) and payload.get("status") == "gone"

    def refs(self) -> list[RepoRef]:
        if not self.root.exists():
            return []
        out = []
        for d in sorted(self.root.iterdir()):
            owner, sep, name = d.name.partition("__")
            if d.is_dir() and sep:
                out.append(RepoRef(owner, name))
        return out


# ---------------------------------------------------------------- client


class GitHubClient:
    """Rate-limit aware GitHub REST client.

    ``transport``, ``sleep`` and ``clock`` exist so tests can run offline with
    a mock transport and a fake clock.
    """

    def __init__(
        self,
        token: str | None = None,
        *,
        cache: Cache | None = None,
        refresh: bool = False,
        max_concurrent: int = 4,
        wait_on_rate_limit: bool = True,
        base_url: str = API_URL,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
        timeout: float = 30.0,
    ):
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.cache = cache
        self.refresh = refresh
        self.wait_on_rate_limit = wait_on_rate_limit
        self.budget = RateBudget(max_concurrent=max_concurrent)
        self._sem = threading.Semaphore(max_concurrent)
        self._budget_lock = threading.Lock()
        self._sleep = sleep
        self._clock = clock
        headers = {"Accept": "application/vnd.github+json", "User-Agent": "repodomain"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        self._http = httpx.Client(
            base_url=base_url, headers=headers, timeout=timeout, transport=transport
        )
        self.requests_sent = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "GitHubClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- low level

    def _await_budget(self) -> None:
        with self._budget_lock:
            if self.budget.remaining > 0:
                return
            now = self._clock()
            if now >= self.budget.reset_at:
                return
            if not self.wait_on_rate_limit:
                raise RateLimited("rate limit exhausted", self.budget.reset_at)
            delay = (self.budget.reset_at - now).total_seconds()
            logger.warning("rate limit exhausted; sleeping %.0f s", delay)
            self._sleep(delay)
            self.budget.remaining = 1

    def _update_budget(self, response: httpx.Response) -> None:
        remaining = response.headers.get("X-RateLimit-Remaining")
        reset = response.headers.get("X-RateLimit-Reset")
        with self._budget_lock:
            if remaining is not None:
                self.budget.remaining = max(0, int(remaining))
            if reset is not None:
                self.budget.reset_at = datetime.fromtimestamp(int(reset), timezone.utc)

    def _request(self, url: str, params: dict | None = None, accept: str | None = None) -> httpx.Response:
        headers = {"Accept": accept} if accept else None
        attempt = 0
        while True:
            self._await_budget()
            try:
                with self._sem:
                    self.requests_sent += 1
                    response = self._http.get(url, params=params, headers=headers)
            except httpx.TransportError as exc:
                if attempt >= MAX_RETRIES:
                    raise TransportError(f"GET {url}: {exc}") from exc
                self._sleep(2.0**attempt)
                attempt += 1
                continue
            self._update_budget(response)
            status = response.status_code
            if status in (403, 429) and (
                response.headers.get("X-RateLimit-Remaining") == "0" or status == 429
            ):
                if not self.wait_on_rate_limit or attempt >= MAX_RETRIES:
                    raise RateLimited(f"rate limited on {url}", self.budget.reset_at)
                wait = (self.budget.reset_at - self._clock()).total_seconds()
                retry_after = response.headers.get("Retry-After")
                if retry_after is not None:
                    wait = max(wait, float(retry_after))
                self._sleep(wait if wait > 0 else 2.0**attempt)
                with self._budget_lock:
                    self.budget.remaining = max(self.budget.remaining, 1)
                attempt += 1
                continue
            if status == 401:
                raise AuthFailed(f"authentication failed for {url}")
            if status in (404, 410, 451):
                raise NotFound(f"{url} not found ({status})")
            if status >= 500:
                if attempt >= MAX_RETRIES:
                    raise TransportError(f"GET {url}: HTTP {status}")
                self._sleep(2.0**attempt)
                attempt += 1
                continue
            if status >= 400:
                raise TransportError(f"GET {url}: HTTP {status}")
            return response

    def _get_json(self, url: str, params: dict | None = None):
        return self._request(url, params).json()

    def _paginate(self, url: str, params: dict | None = None) -> Iterator:
        params = {"per_page": PER_PAGE, **(params or {})}
        next_url: str | None = url
        while next_url:
            response = self._request(next_url, params)
            page = response.json()
            if isinstance(page, dict):  # e.g. empty-repo error bodies
                return
            yield from page
            next_url = response.links.get("next", {}).get("url")
            params = None  # the next link already carries the query

    def _optional(self, fn: Callable, default):
        try:
            return fn()
        except NotFound:
            return default

    # -- resources

    def _fetch_repo_live(self, ref: RepoRef) -> RawRepo:
        base = f"/repos/{ref.owner}/{ref.name}"
        meta = self._get_json(base)
        readme = self._optional(
            lambda: self._request(f"{base}/readme", accept="application/vnd.github.raw").text,
            None,
        )
        topics = self._optional(lambda: self._get_json(f"{base}/topics").get("names", []), [])
        languages = self._optional(lambda: self._get_json(f"{base}/languages"), {})
        labels = self._optional(lambda: [l["name"] for l in self._paginate(f"{base}/labels")], [])
        contributors = self._optional(
            lambda: [
                (c["login"], int(c.get("contributions", 0)))
                for c in self._paginate(f"{base}/contributors")
                if c.get("login")
            ],
            [],
        )
        root = self._optional(lambda: self._get_json(f"{base}/contents"), [])
        workflows = self._optional(lambda: self._get_json(f"{base}/contents/.github/workflows"), [])
        releases = self._optional(lambda: sum(1 for _ in self._paginate(f"{base}/releases")), 0)
        licence = meta.get("license") or {}
        return RawRepo(
            ref=ref,
            description=meta.get("description"),
            readme=readme,
            topics=tuple(topics),
            licence_key=licence.get("key"),
            languages={k: int(v) for k, v in languages.items()},
            labels=tuple(labels),
            contributors=tuple(contributors),
            root_entries=tuple(e["name"] for e in root) if isinstance(root, list) else (),
            releases=releases,
            stars=int(meta.get("stargazers_count", 0)),
            forks=int(meta.get("forks_count", 0)),
            has_workflow_files=isinstance(workflows, list)
            and any(e.get("type") == "file" for e in workflows),
            fetched_at=self._clock(),
        )

    def _cached(self, ref: RepoRef, read: Callable):
        if self.cache is None or self.refresh:
            return None
        try:
            return read(ref)
        except CorruptCache as exc:
            logger.warning("%s", exc)
            return None

    def fetch_repo(self, ref: RepoRef) -> RawRepo:
        cached = self._cached(ref, lambda r: self.cache.read_repo(r))
        if cached is not None:
            return cached
        try:
            raw = self._fetch_repo_live(ref)
        except NotFound:
            if self.cache is not None:
                self.cache.mark_gone(ref, "not found")
            raise
        if self.cache is not None:
            self.cache.write_repo(raw)
        return raw

    def iter_commits(self, ref: RepoRef) -> Iterator[CommitRecord]:
        """Stream default-branch commits newest first, each sha exactly once.

        Bypasses the cache; an error after the first page raises
        TruncatedHistory carrying the commits already yielded.
        """
        seen: set[str] = set()
        partial: list[CommitRecord] = []
        pages = self._paginate(f"/repos/{ref.owner}/{ref.name}/commits")
        while True:
            try:
                item = next(pages)
            except StopIteration:
                return
            except NotFound:
                if not partial:
                    raise
                raise TruncatedHistory(f"history of {ref} truncated", partial) from None
            except (TransportError, RateLimited) as exc:
                if not partial:
                    raise
                raise TruncatedHistory(f"history of {ref} truncated: {exc}", partial) from exc
            commit = _commit_from_api(item)
            if commit.sha in seen:
                continue
            seen.add(commit.sha)
            partial.append(commit)
            yield commit

    def fetch_commits(self, ref: RepoRef) -> list[CommitRecord]:
        cached = self._cached(ref, lambda r: self.cache.read_commits(r))
        if cached is not None:
            return cached
        commits = list(self.iter_commits(ref))
        if self.cache is not None:
            self.cache.write_commits(ref, commits)
        return commits


def _commit_from_api(item: dict) -> CommitRecord:
    commit = item.get("commit", {})
    author = commit.get("author") or {}
    login = (item.get("author") or {}).get("login")
    return CommitRecord(
        sha=item["sha"].lower(),
        author_id=author_identity(login, author.get("name"), author.get("email")),
        message=commit.get("message", ""),
        authored_at=_parse_ts(author.get("date", "1970-01-01T00:00:00Z")),
    )
