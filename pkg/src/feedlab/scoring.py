"""Post scorers with a hard per-call deadline and pass-through fallback.

Two scorer kinds: keyword (local, deterministic) and remote (HTTP classifier
behind the wire protocol below). Whatever goes wrong — timeout, connection
error, bad response — score_posts returns fallback=True and the caller must
deliver the original feed untouched.

Remote wire protocol:
    POST <endpoint>  {"posts": [{"id": str, "text": str}], "scorer_version": str}
    -> {"scores": {id: float}}
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import httpx

from .errors import RemoteUnreachable

log = logging.getLogger(__name__)

DEFAULT_DEADLINE_MS = 300.0
DEADLINE_SLACK_MS = 50.0

_TOKEN_RE = re.compile(r"[\w']+", re.UNICODE)


def keyword_score(text: str, terms: dict[str, float]) -> float:
    """Additive whole-token match: each occurrence contributes its weight, capped at 1.

    Matching is case-insensitive on word tokens.
    """
    if not terms:
        return 0.0
    lowered = {t.lower(): w for t, w in terms.items()}
    total = 0.0
    for token in _TOKEN_RE.findall(text.lower()):
        w = lowered.get(token)
        if w is not None:
            total += w
    return min(1.0, total)


@dataclass(frozen=True)
class Scorer:
    kind: str  # "keyword" | "remote"
    terms: dict[str, float] | None = None
    endpoint: str | None = None
    timeout_ms: float = DEFAULT_DEADLINE_MS
    scorer_version: str = "v1"
    max_concurrent_requests: int = 4
    fan_out: bool = False

    def __post_init__(self):
        if self.kind == "keyword":
            if self.terms is None:
                raise ValueError("keyword scorer needs a term list")
            for t, w in self.terms.items():
                if not (w == w and abs(w) != float("inf")):
                    raise ValueError(f"non-finite weight for term {t!r}")
        elif self.kind == "remote":
            if not self.endpoint:
                raise ValueError("remote scorer needs an endpoint")
            if self.timeout_ms <= 0:
                raise ValueError("remote timeout must be > 0")
        else:
            raise ValueError(f"unknown scorer kind: {self.kind!r}")

    def fingerprint(self) -> str:
        cfg = {"kind": self.kind, "terms": self.terms, "endpoint": self.endpoint,
               "version": self.scorer_version}
        blob = json.dumps(cfg, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_config(cls, cfg: dict) -> "Scorer":
        kind = cfg.get("kind", "keyword")
        if kind == "keyword":
            return cls(kind="keyword", terms={k: float(v) for k, v in cfg.get("terms", {}).items()})
        return cls(kind="remote", endpoint=cfg.get("endpoint"),
                   timeout_ms=float(cfg.get("timeout_ms", DEFAULT_DEADLINE_MS)),
                   scorer_version=cfg.get("scorer_version", "v1"),
                   max_concurrent_requests=int(cfg.get("max_concurrent_requests", 4)),
                   fan_out=bool(cfg.get("fan_out", False)))


@dataclass
class ScoreResult:
    scores: dict[str, float] = field(default_factory=dict)
    elapsed_ms: float = 0.0
    fallback: bool = False


class ScoreCache:
    """LRU cache keyed by (scorer fingerprint, post_id, text hash)."""

    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self._entries: OrderedDict[tuple, float] = OrderedDict()
        self._lock = threading.Lock()

    @staticmethod
    def key(fingerprint: str, post) -> tuple:
        # in-memory only, so the process-salted builtin hash is sufficient
        return (fingerprint, post.post_id, hash(post.text))

    def get(self, key):
        with self._lock:
            score = self._entries.get(key)
            if score is not None:
                self._entries.move_to_end(key)
            return score

    def put(self, key, score: float):
        with self._lock:
            self._entries[key] = score
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def __len__(self):
        return len(self._entries)


def _remote_batch(endpoint: str, batch, version: str, timeout_s: float) -> dict[str, float]:
    body = {"posts": [{"id": p.post_id, "text": p.text} for p in batch],
            "scorer_version": version}
    try:
        resp = httpx.post(endpoint, json=body, timeout=timeout_s)
        resp.raise_for_status()
        scores = resp.json()["scores"]
    except Exception as e:
        raise RemoteUnreachable(str(e)) from e
    return {str(k): float(v) for k, v in scores.items()}


def score_posts(posts, scorer: Scorer, deadline_ms: float = DEFAULT_DEADLINE_MS,
                cache: ScoreCache | None = None) -> ScoreResult:
    """Score a page of posts, returning within deadline_ms (+ small slack).

    Deadline breach or any remote failure yields fallback=True and empty
    scores; the error is logged, never raised into the feed path.
    """
    if deadline_ms <= 0:
        raise ValueError("deadline must be > 0")
    start = time.monotonic()
    elapsed = lambda: (time.monotonic() - start) * 1000.0

    if not posts:
        return ScoreResult(scores={}, elapsed_ms=elapsed(), fallback=False)

    fp = scorer.fingerprint()
    scores: dict[str, float] = {}
    pending = []
    for p in posts:
        cached = cache.get(ScoreCache.key(fp, p)) if cache is not None else None
        if cached is not None:
            scores[p.post_id] = cached
        else:
            pending.append(p)

    try:
        if scorer.kind == "keyword":
            for p in pending:
                scores[p.post_id] = keyword_score(p.text, scorer.terms)
        else:
            remaining_s = max(0.001, (deadline_ms - elapsed()) / 1000.0)
            remaining_s = min(remaining_s, scorer.timeout_ms / 1000.0)
            if pending:
                if scorer.fan_out and len(pending) > 1:
                    n = min(scorer.max_concurrent_requests, len(pending))
                    chunks = [pending[i::n] for i in range(n)]
                else:
                    n, chunks = 1, [pending]
                # The hard deadline is enforced here, not by the socket timeout:
                # a worker stuck in connect/read is abandoned, never joined.
                pool = ThreadPoolExecutor(max_workers=n)
                try:
                    futures = [pool.submit(_remote_batch, scorer.endpoint, c,
                                           scorer.scorer_version, remaining_s)
                               for c in chunks]
                    for f in futures:
                        budget_s = max(0.0, (deadline_ms - elapsed()) / 1000.0)
                        scores.update(f.result(timeout=budget_s))
                finally:
                    pool.shutdown(wait=False, cancel_futures=True)
    except Exception as e:
        log.warning("scoring fell back: %s", e)
        return ScoreResult(scores={}, elapsed_ms=elapsed(), fallback=True)

    if elapsed() > deadline_ms:
        log.warning("scoring exceeded deadline (%.1f ms > %.1f ms)", elapsed(), deadline_ms)
        return ScoreResult(scores={}, elapsed_ms=elapsed(), fallback=True)

    input_ids = {p.post_id for p in posts}
    scores = {pid: min(1.0, max(0.0, s)) for pid, s in scores.items() if pid in input_ids}
    if cache is not None:
        for p in posts:
            if p.post_id in scores:
                cache.put(ScoreCache.key(fp, p), scores[p.post_id])
    return ScoreResult(scores=scores, elapsed_ms=elapsed(), fallback=False)


def remote_rewrite(text: str, endpoint: str, timeout_ms: float) -> str | None:
    """Ask a remote rewriter for new post text; None means fall back to no edit.

    Wire: POST <endpoint> {"text": str} -> {"text": str}.
    """
    try:
        resp = httpx.post(endpoint, json={"text": text}, timeout=timeout_ms / 1000.0)
        resp.raise_for_status()
        return str(resp.json()["text"])
    except Exception as e:
        log.warning("remote rewrite fell back: %s", e)
        return None
