"""Canonical feed data types and payload adapters.

Posts and pages are immutable values. Payload bytes enter and leave through
adapters registered by format id; the mock-platform JSON format ships by
default. Unknown fields found in a payload are kept verbatim and re-emitted,
so an untouched page round-trips byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import MalformedPayload, UnknownFormat

ATTACHMENT_KINDS = frozenset({"link", "image", "video"})
PROVENANCES = frozenset({"organic", "generated", "monitored", "transferred"})
VISIBILITIES = frozenset({"public", "restricted"})


@dataclass(frozen=True)
class Attachment:
    kind: str
    uri: str

    def __post_init__(self):
        if self.kind not in ATTACHMENT_KINDS:
            raise ValueError(f"unknown attachment kind: {self.kind!r}")


@dataclass(frozen=True)
class SocialMetrics:
    likes: int = 0
    comments: int = 0
    shares: int = 0

    def __post_init__(self):
        for name in ("likes", "comments", "shares"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")


@dataclass(frozen=True)
class Post:
    post_id: str
    author_id: str
    text: str
    created_at: int
    metrics: SocialMetrics = field(default_factory=SocialMetrics)
    attachments: tuple[Attachment, ...] = ()
    provenance: str = "organic"
    visibility: str = "public"
    # unknown wire fields, preserved as (key, decoded JSON value) in payload order
    extra: tuple = ()

    def __post_init__(self):
        if self.created_at < 0:
            raise ValueError("created_at must be >= 0")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance: {self.provenance!r}")
        if self.visibility not in VISIBILITIES:
            raise ValueError(f"unknown visibility: {self.visibility!r}")

    def with_metrics(self, metrics: SocialMetrics) -> "Post":
        return replace(self, metrics=metrics)


@dataclass(frozen=True)
class FeedPage:
    """An ordered page of posts; position is the 0-based list index."""

    cursor: str
    posts: tuple[Post, ...]
    fetched_at: int = 0
    extra: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "posts", tuple(self.posts))
        seen = set()
        for p in self.posts:
            if p.post_id in seen:
                raise ValueError(f"duplicate post_id on page: {p.post_id}")
            seen.add(p.post_id)

    def __len__(self):
        return len(self.posts)

    def post_ids(self) -> list[str]:
        return [p.post_id for p in self.posts]

    def with_posts(self, posts) -> "FeedPage":
        return replace(self, posts=tuple(posts))


# --------------------------------------------------------------------------
# Mock-platform payload format ("mock.v1")
#
# Single UTF-8 JSON document:
#   {"cursor": str, "posts": [{"id","author","text","created_at",
#                              "likes","comments","shares","attachments":[...]}]}
# Key order is canonical (as above); unknown keys follow the known ones in
# their original relative order. Serialization is deterministic, so
# serialize(parse(p)) == p for any payload this adapter itself produced.
# --------------------------------------------------------------------------

MOCK_FORMAT_ID = "mock.v1"

_POST_KEYS = ("id", "author", "text", "created_at", "likes", "comments", "shares", "attachments")
_PAGE_KEYS = ("cursor", "posts")


def _require(cond, message, offset=None):
    if not cond:
        raise MalformedPayload(message, offset)


def _as_count(value, name):
    _require(isinstance(value, int) and not isinstance(value, bool) and value >= 0,
             f"field {name!r} must be a non-negative integer, got {value!r}")
    return value


def _parse_mock(raw: bytes) -> FeedPage:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedPayload("payload is not valid UTF-8", e.start) from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedPayload(f"invalid JSON: {e.msg}", e.pos) from e
    _require(isinstance(doc, dict), "top-level value must be an object")
    _require(isinstance(doc.get("cursor"), str), "field 'cursor' must be a string")
    _require(isinstance(doc.get("posts"), list), "field 'posts' must be a list")

    posts = []
    for i, item in enumerate(doc["posts"]):
        _require(isinstance(item, dict), f"posts[{i}] must be an object")
        missing = [k for k in _POST_KEYS if k not in item]
        _require(not missing, f"posts[{i}] missing fields: {missing}")
        for k in ("id", "author", "text"):
            _require(isinstance(item[k], str), f"posts[{i}].{k} must be a string")
        created_at = _as_count(item["created_at"], f"posts[{i}].created_at")
        metrics = SocialMetrics(
            likes=_as_count(item["likes"], f"posts[{i}].likes"),
            comments=_as_count(item["comments"], f"posts[{i}].comments"),
            shares=_as_count(item["shares"], f"posts[{i}].shares"),
        )
        _require(isinstance(item["attachments"], list), f"posts[{i}].attachments must be a list")
        attachments = []
        for j, att in enumerate(item["attachments"]):
            _require(isinstance(att, dict) and isinstance(att.get("kind"), str)
                     and isinstance(att.get("uri"), str) and att["kind"] in ATTACHMENT_KINDS,
                     f"posts[{i}].attachments[{j}] is not a valid attachment")
            attachments.append(Attachment(kind=att["kind"], uri=att["uri"]))
        extra = tuple((k, v) for k, v in item.items() if k not in _POST_KEYS)
        try:
            posts.append(Post(
                post_id=item["id"], author_id=item["author"], text=item["text"],
                created_at=created_at, metrics=metrics, attachments=tuple(attachments),
                extra=extra,
            ))
        except ValueError as e:
            raise MalformedPayload(f"posts[{i}]: {e}") from e
    page_extra = tuple((k, v) for k, v in doc.items() if k not in _PAGE_KEYS)
    try:
        return FeedPage(cursor=doc["cursor"], posts=tuple(posts), extra=page_extra)
    except ValueError as e:
        raise MalformedPayload(str(e)) from e


def _post_to_wire(post: Post) -> dict:
    wire = {
        "id": post.post_id,
        "author": post.author_id,
        "text": post.text,
        "created_at": post.created_at,
        "likes": post.metrics.likes,
        "comments": post.metrics.comments,
        "shares": post.metrics.shares,
        "attachments": [{"kind": a.kind, "uri": a.uri} for a in post.attachments],
    }
    for k, v in post.extra:
        wire[k] = v
    return wire


def _serialize_mock(page: FeedPage) -> bytes:
    doc = {"cursor": page.cursor, "posts": [_post_to_wire(p) for p in page.posts]}
    for k, v in page.extra:
        doc[k] = v
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


_ADAPTERS = {MOCK_FORMAT_ID: (_parse_mock, _serialize_mock)}


def register_format(format_id: str, parse, serialize):
    """Register a payload adapter; overwrites any previous registration."""
    _ADAPTERS[format_id] = (parse, serialize)


def parse_feed_payload(raw: bytes, format_id: str) -> FeedPage:
    if format_id not in _ADAPTERS:
        raise UnknownFormat(format_id)
    return _ADAPTERS[format_id][0](raw)


def serialize_feed_payload(page: FeedPage, format_id: str) -> bytes:
    if format_id not in _ADAPTERS:
        raise UnknownFormat(format_id)
    return _ADAPTERS[format_id][1](page)
