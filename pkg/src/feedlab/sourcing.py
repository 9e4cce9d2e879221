"""Insertion candidate sourcing: generated posts, monitored-account polling,
and the transfer pool fed by other participants' feeds.

Every candidate is consumed at most once: take_candidates removes entries,
so a post id is only ever inserted into a single participant's feed.
"""

from __future__ import annotations

import itertools
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path

from .errors import PlatformUnreachable, TemplateInvalid
from .model import Attachment, Post, SocialMetrics
from .rerank import PostPredicate
from .scoring import Scorer, score_posts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidatePost:
    post: Post
    origin: str           # template id | monitored account id | source session id
    eligibility_score: float = 0.0
    unscored: bool = False


@dataclass(frozen=True)
class PostTemplate:
    template_id: str
    text_pattern: str
    slots: dict[str, list[str]] = field(default_factory=dict)
    author_pool: tuple[str, ...] = ("study_account",)
    likes_range: tuple[int, int] = (0, 100)
    comments_range: tuple[int, int] = (0, 20)
    shares_range: tuple[int, int] = (0, 20)
    attachments: tuple[Attachment, ...] = ()

    def validate(self):
        if not self.text_pattern.strip():
            raise TemplateInvalid("template text pattern is empty")
        for name, options in self.slots.items():
            if not options:
                raise TemplateInvalid(f"slot {name!r} has no options")
        for rng_name in ("likes_range", "comments_range", "shares_range"):
            lo, hi = getattr(self, rng_name)
            if lo < 0 or hi < lo:
                raise TemplateInvalid(f"bad {rng_name}: [{lo},{hi}]")

    @classmethod
    def from_file(cls, path) -> "PostTemplate":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        metrics = doc.get("metrics", {})
        return cls(
            template_id=doc["template_id"],
            text_pattern=doc["text_pattern"],
            slots=doc.get("slots", {}),
            author_pool=tuple(doc.get("author_pool", ("study_account",))),
            likes_range=tuple(metrics.get("likes", (0, 100))),
            comments_range=tuple(metrics.get("comments", (0, 20))),
            shares_range=tuple(metrics.get("shares", (0, 20))),
            attachments=tuple(Attachment(**a) for a in doc.get("attachments", ())),
        )


def generate_candidate(template: PostTemplate, seed: int) -> CandidatePost:
    """Mint a brand-new post from the template; deterministic under (template, seed).

    Generated posts carry complete social metrics so every interaction
    affordance on the rendered post is populated.
    """
    template.validate()
    rng = random.Random(f"{template.template_id}:{seed}")
    text = template.text_pattern
    for name, options in sorted(template.slots.items()):
        text = text.replace("{" + name + "}", rng.choice(options))
    post = Post(
        post_id=f"gen:{template.template_id}:{seed}",
        author_id=rng.choice(template.author_pool),
        text=text,
        created_at=1_700_000_000_000 + seed,
        metrics=SocialMetrics(
            likes=rng.randint(*template.likes_range),
            comments=rng.randint(*template.comments_range),
            shares=rng.randint(*template.shares_range),
        ),
        attachments=template.attachments,
        provenance="generated",
    )
    return CandidatePost(post=post, origin=template.template_id, eligibility_score=1.0)


def poll_monitored_accounts(fetch_account_posts, accounts, scorer: Scorer | None,
                            since: int, max_attempts: int = 5,
                            backoff_base_s: float = 0.05) -> list[CandidatePost]:
    """Collect and score fresh posts from a curated account list.

    fetch_account_posts(account_id, since) -> list[Post] is the platform
    client; failures are retried with exponential backoff, then raised as
    PlatformUnreachable. Scorer fallback leaves candidates flagged unscored
    with eligibility 0.
    """
    collected: list[Post] = []
    for account in accounts:
        for attempt in range(max_attempts):
            try:
                posts = fetch_account_posts(account, since)
                break
            except Exception as e:
                if attempt == max_attempts - 1:
                    raise PlatformUnreachable(f"account {account}: {e}") from e
                time.sleep(backoff_base_s * (2 ** attempt))
        collected.extend(p for p in posts if p.created_at > since)

    if not collected:
        return []
    if scorer is None:
        result_scores, fallback = {}, False
    else:
        result = score_posts(collected, scorer)
        result_scores, fallback = result.scores, result.fallback
    out = []
    for p in collected:
        monitored = dc_replace(p, provenance="monitored")
        out.append(CandidatePost(
            post=monitored,
            origin=p.author_id,
            eligibility_score=0.0 if fallback else result_scores.get(p.post_id, 0.0),
            unscored=fallback or (scorer is None),
        ))
    return out


class CandidatePool:
    """Bounded, deduplicated, eligibility-ordered candidate store.

    Mutations are internally serialized; many session handlers may offer and
    take concurrently. When full, the lowest-eligibility entry is evicted.
    """

    def __init__(self, capacity: int = 1000):
        self.capacity = capacity
        self._entries: list[tuple[CandidatePost, int]] = []  # (candidate, arrival)
        self._seen: set[str] = set()
        self._arrival = itertools.count()
        self._lock = threading.Lock()

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def add(self, candidate: CandidatePost) -> bool:
        """Admit a candidate; False when it is a duplicate or loses eviction."""
        with self._lock:
            if candidate.post.post_id in self._seen:
                return False
            self._seen.add(candidate.post.post_id)
            self._entries.append((candidate, next(self._arrival)))
            if len(self._entries) > self.capacity:
                worst = min(self._entries, key=lambda e: (e[0].eligibility_score, -e[1]))
                self._entries.remove(worst)
                if worst[0].post.post_id == candidate.post.post_id:
                    return False
            return True

    def offer_transfer(self, post: Post, origin_session: str,
                       rule: PostPredicate | None = None) -> bool:
        """Offer a post pulled from another participant's feed.

        Privacy gate: restricted-visibility posts are never admitted.
        """
        if post.visibility != "public":
            return False
        if rule is not None and not rule.matches(post):
            return False
        transferred = dc_replace(post, provenance="transferred")
        return self.add(CandidatePost(post=transferred, origin=origin_session,
                                      eligibility_score=1.0))

    def take(self, n: int) -> list[CandidatePost]:
        """Remove and return up to n highest-eligibility candidates (FIFO on ties)."""
        if n < 0:
            raise ValueError("n must be >= 0")
        with self._lock:
            self._entries.sort(key=lambda e: (-e[0].eligibility_score, e[1]))
            taken = [c for c, _ in self._entries[:n]]
            self._entries = self._entries[n:]
            return taken
