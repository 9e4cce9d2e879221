"""Synthetic social platform: inventory generation, ranked pagination, and a
small HTTP service speaking the real wire format.

Topic labels are recorded as hidden ground truth alongside each generated
post so scorers can be validated against them; engagement follows a
heavy-tailed log-normal so the engagement ranking looks platform-like.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse, Response

from .errors import InvalidCursor, SpecInvalid
from .model import (MOCK_FORMAT_ID, Attachment, FeedPage, Post, SocialMetrics,
                    serialize_feed_payload)

TOPIC_WORDS = {
    "political": ("politics", "election", "senate", "congress", "vote", "policy",
                  "debate", "campaign"),
    "positive": ("joy", "grateful", "wonderful", "sunshine", "smile", "kindness",
                 "celebrate"),
    "neutral": ("coffee", "weather", "commute", "recipe", "game", "music",
                "weekend", "garden"),
}
_FILLER = ("today", "really", "about", "just", "the", "a", "this", "that", "and",
           "with", "some", "more")

DEFAULT_PAGE_SIZE = 10
BASE_TS = 1_750_000_000_000  # fixed epoch anchor keeps inventories reproducible


@dataclass(frozen=True)
class InventorySpec:
    seed: int = 0
    n_posts: int = 1000
    n_accounts: int = 50
    topic_mix: dict = field(default_factory=lambda: {"political": 0.3, "positive": 0.2,
                                                     "neutral": 0.5})
    likes_mu: float = 3.0
    likes_sigma: float = 1.5

    def validate(self):
        if self.n_posts < self.n_accounts or self.n_accounts < 1:
            raise SpecInvalid("need n_posts >= n_accounts >= 1")
        if abs(sum(self.topic_mix.values()) - 1.0) > 1e-9:
            raise SpecInvalid("topic proportions must sum to 1")
        unknown = set(self.topic_mix) - set(TOPIC_WORDS)
        if unknown:
            raise SpecInvalid(f"unknown topics: {sorted(unknown)}")


@dataclass(frozen=True)
class Inventory:
    spec: InventorySpec
    posts: tuple[Post, ...]
    topic_of: dict  # post_id -> topic label (hidden ground truth)


def generate_inventory(spec: InventorySpec) -> Inventory:
    spec.validate()
    rng = random.Random(spec.seed)
    topics = sorted(spec.topic_mix)
    weights = [spec.topic_mix[t] for t in topics]
    accounts = [f"acct_{i}" for i in range(spec.n_accounts)]
    posts, topic_of = [], {}
    for i in range(spec.n_posts):
        topic = rng.choices(topics, weights=weights)[0]
        words = [rng.choice(TOPIC_WORDS[topic])]
        for _ in range(rng.randint(5, 11)):
            bank = TOPIC_WORDS[topic] if rng.random() < 0.3 else _FILLER
            words.append(rng.choice(bank))
        rng.shuffle(words)
        attachments = ()
        roll = rng.random()
        if roll < 0.2:
            attachments = (Attachment("video", f"https://mock.example/v/{i}"),)
        elif roll < 0.4:
            attachments = (Attachment("image", f"https://mock.example/i/{i}"),)
        elif roll < 0.5:
            attachments = (Attachment("link", f"https://mock.example/l/{i}"),)
        likes = int(rng.lognormvariate(spec.likes_mu, spec.likes_sigma))
        post = Post(
            post_id=f"m{spec.seed}_{i}",
            author_id=accounts[i % len(accounts)] if i < len(accounts)
                      else rng.choice(accounts),
            text=" ".join(words),
            created_at=BASE_TS - i * 61_000 - rng.randint(0, 50_000),
            metrics=SocialMetrics(likes=likes,
                                  comments=int(likes * rng.uniform(0, 0.2)),
                                  shares=int(likes * rng.uniform(0, 0.1))),
            attachments=attachments,
        )
        posts.append(post)
        topic_of[post.post_id] = topic
    return Inventory(spec=spec, posts=tuple(posts), topic_of=topic_of)


def _ordered(inventory: Inventory, ranking: str):
    if ranking == "engagement":
        return sorted(inventory.posts,
                      key=lambda p: (-p.metrics.likes, -p.created_at, p.post_id))
    if ranking == "chronological":
        return sorted(inventory.posts, key=lambda p: (-p.created_at, p.post_id))
    raise InvalidCursor(f"unknown ranking: {ranking!r}")


def serve_feed_page(inventory: Inventory, cursor: str, ranking: str = "engagement",
                    page_size: int = DEFAULT_PAGE_SIZE) -> bytes:
    """One page of the ranked inventory as wire bytes; pagination is stable.

    An empty cursor starts the walk; the payload's cursor field carries the
    next cursor, empty at the end.
    """
    if cursor in ("", None):
        start = 0
    else:
        if not cursor.startswith("c"):
            raise InvalidCursor(cursor)
        try:
            start = int(cursor[1:])
        except ValueError:
            raise InvalidCursor(cursor) from None
    order = _ordered(inventory, ranking)
    if start < 0 or start > len(order):
        raise InvalidCursor(cursor)
    chunk = order[start:start + page_size]
    end = start + len(chunk)
    next_cursor = "" if end >= len(order) else f"c{end}"
    page = FeedPage(cursor=next_cursor, posts=tuple(chunk))
    return serialize_feed_payload(page, MOCK_FORMAT_ID)


def account_posts(inventory: Inventory, account_id: str, since: int):
    return [p for p in inventory.posts
            if p.author_id == account_id and p.created_at > since]


_FEED_HTML = """<!doctype html>
<html><head><title>mockfeed</title></head>
<body>
<h1>mockfeed</h1>
<div id="feed"></div>
<script>
function renderFeed(doc) {
  var feed = document.getElementById("feed");
  feed.innerHTML = "";
  doc.posts.forEach(function (p) {
    var el = document.createElement("article");
    el.className = "post";
    el.dataset.postId = p.id;
    el.textContent = p.author + ": " + p.text + " [" + p.likes + " likes]";
    feed.appendChild(el);
  });
}
var xhr = new XMLHttpRequest();
xhr.open("GET", "/feed?cursor=&ranking=engagement");
xhr.onreadystatechange = function () {
  if (xhr.readyState === 4 && xhr.status === 200) {
    renderFeed(JSON.parse(xhr.responseText));
  }
};
xhr.send();
</script>
</body></html>
"""


def create_mock_app(inventory: Inventory, page_size: int = DEFAULT_PAGE_SIZE) -> FastAPI:
    app = FastAPI(title="feedlab mock platform")

    @app.get("/feed")
    def feed(cursor: str = "", ranking: str = "engagement"):
        try:
            payload = serve_feed_page(inventory, cursor, ranking, page_size)
        except InvalidCursor as e:
            return JSONResponse({"error": "invalid_cursor", "detail": str(e)},
                                status_code=400)
        return Response(content=payload, media_type="application/json")

    @app.get("/accounts/{account_id}/posts")
    def accounts(account_id: str, since: int = 0):
        posts = account_posts(inventory, account_id, since)
        page = FeedPage(cursor="", posts=tuple(posts))
        return Response(content=serialize_feed_payload(page, MOCK_FORMAT_ID),
                        media_type="application/json")

    @app.get("/")
    def home():
        return HTMLResponse(_FEED_HTML)

    return app
