"""Feed transform engine: target classification, down-ranking with deferred
reinsertion, removal, insertion, and content edits.

apply_transform is a pure function of (page, session state, plan, scores);
it returns the rewritten page plus a new state, and an action record for
every difference between input and output so the transform can be audited
and replayed.

Positions are counted over the session's cumulative consumed stream: the
post at local index i of a page sits at global position consumed_count + i.
A down-ranked post moves to global position original + offset; if that lands
beyond the current page it is parked in the session's deferred queue and
released when the consumed counter reaches it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from .errors import DuplicatePostId, PlanInvalid, PositionOutOfRange
from .model import Attachment, FeedPage, Post, SocialMetrics
from .scoring import Scorer, ScoreResult
from .scoring import remote_rewrite as _default_rewriter


# --------------------------------------------------------------------------
# Predicates and plan types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PostPredicate:
    """Declarative post matcher; conditions are AND-ed, all optional."""

    text_any: tuple[str, ...] = ()     # case-insensitive whole-token match
    author_in: tuple[str, ...] = ()
    post_id_in: tuple[str, ...] = ()
    attachment_kind: str | None = None
    min_likes: int | None = None
    match_all: bool = False

    def is_empty(self) -> bool:
        return not (self.text_any or self.author_in or self.post_id_in
                    or self.attachment_kind or self.min_likes is not None
                    or self.match_all)

    def matches(self, post: Post) -> bool:
        if self.match_all:
            return True
        if self.is_empty():
            return False
        if self.text_any:
            tokens = set(re.findall(r"[\w']+", post.text.lower()))
            if not any(t.lower() in tokens for t in self.text_any):
                return False
        if self.author_in and post.author_id not in self.author_in:
            return False
        if self.post_id_in and post.post_id not in self.post_id_in:
            return False
        if self.attachment_kind is not None:
            if not any(a.kind == self.attachment_kind for a in post.attachments):
                return False
        if self.min_likes is not None and post.metrics.likes < self.min_likes:
            return False
        return True

    @classmethod
    def from_spec(cls, spec: dict) -> "PostPredicate":
        return cls(
            text_any=tuple(spec.get("text_any", ())),
            author_in=tuple(spec.get("author_in", ())),
            post_id_in=tuple(spec.get("post_id_in", ())),
            attachment_kind=spec.get("attachment_kind"),
            min_likes=spec.get("min_likes"),
            match_all=bool(spec.get("match_all", False)),
        )


@dataclass(frozen=True)
class TargetRule:
    """Targets a post when its score crosses the threshold or the predicate hits."""

    threshold: float | None = None
    predicate: PostPredicate | None = None

    def validate(self):
        if self.threshold is not None and not (0.0 <= self.threshold <= 1.0):
            raise PlanInvalid(f"target threshold must be in [0,1], got {self.threshold}")

    def matches(self, post: Post, scores: dict[str, float]) -> bool:
        if self.threshold is not None:
            s = scores.get(post.post_id)
            if s is not None and s >= self.threshold:
                return True
        if self.predicate is not None and self.predicate.matches(post):
            return True
        return False


@dataclass(frozen=True)
class OffsetPolicy:
    kind: str = "fixed"  # "fixed" | "score_based"
    fixed_offset: int = 100
    scale: int = 100     # score_based offset = ceil(scale * score), min 1

    def validate(self):
        if self.kind not in ("fixed", "score_based"):
            raise PlanInvalid(f"unknown offset policy kind: {self.kind!r}")
        if self.kind == "fixed" and self.fixed_offset < 1:
            raise PlanInvalid("fixed_offset must be >= 1")
        if self.kind == "score_based" and self.scale < 1:
            raise PlanInvalid("offset scale must be >= 1")

    def offset_for(self, score: float) -> int:
        if self.kind == "fixed":
            return self.fixed_offset
        return max(1, math.ceil(self.scale * score))


@dataclass(frozen=True)
class ContentEdit:
    kind: str  # text_substitution | metrics_set | metrics_scale | attachment_replace | remote_rewrite
    substitution: dict[str, str] | None = None
    metrics: dict[str, int] | None = None
    factor: float | None = None
    attachment_kind: str | None = None
    attachment_uri: str | None = None
    endpoint: str | None = None
    timeout_ms: float = 300.0

    def validate(self):
        if self.kind == "text_substitution":
            if not self.substitution:
                raise PlanInvalid("text_substitution edit needs a substitution map")
        elif self.kind == "metrics_set":
            if not self.metrics:
                raise PlanInvalid("metrics_set edit needs metric values")
            for k, v in self.metrics.items():
                if k not in ("likes", "comments", "shares") or v < 0:
                    raise PlanInvalid(f"invalid metric assignment {k}={v}")
        elif self.kind == "metrics_scale":
            if self.factor is None or self.factor < 0:
                raise PlanInvalid("metrics_scale edit needs a factor >= 0")
        elif self.kind == "attachment_replace":
            if not self.attachment_kind or self.attachment_uri is None:
                raise PlanInvalid("attachment_replace edit needs kind and uri")
        elif self.kind == "remote_rewrite":
            if not self.endpoint:
                raise PlanInvalid("remote_rewrite edit needs an endpoint")
            if self.timeout_ms <= 0:
                raise PlanInvalid("remote_rewrite timeout must be > 0")
        else:
            raise PlanInvalid(f"unknown edit kind: {self.kind!r}")


@dataclass(frozen=True)
class InsertionPlan:
    """Requested final indices for pool candidates, resolved in ascending order."""

    positions: tuple[int, ...] = ()
    source: str = "pool"

    def validate(self):
        if any(p < 0 for p in self.positions):
            raise PlanInvalid("insertion positions must be >= 0")


@dataclass(frozen=True)
class TransformPlan:
    plan_id: str = "identity"
    version: int = 1
    target_rule: TargetRule = field(default_factory=TargetRule)
    downrank: OffsetPolicy | None = None
    removal: PostPredicate | None = None
    insertions: InsertionPlan | None = None
    edits: tuple[ContentEdit, ...] = ()
    ema: object | None = None        # EmaTriggerSpec, owned by the measurement module
    scorer: Scorer | None = None

    def validate(self):
        self.target_rule.validate()
        if self.downrank is not None:
            self.downrank.validate()
            if self.target_rule.threshold is None and self.target_rule.predicate is None:
                raise PlanInvalid("downrank requires a target rule")
            if self.removal is not None and self.removal == self.target_rule.predicate:
                raise PlanInvalid("downrank and removal may not share one target rule")
        if self.insertions is not None:
            self.insertions.validate()
        for e in self.edits:
            e.validate()

    def is_identity(self) -> bool:
        return (self.downrank is None and self.removal is None
                and self.insertions is None and not self.edits)


# --------------------------------------------------------------------------
# Session state
# --------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class DeferredEntry:
    target_position: int
    seq: int
    post: Post = field(compare=False)


@dataclass(frozen=True)
class SessionState:
    participant_id: str
    consumed_count: int = 0
    deferred: tuple[DeferredEntry, ...] = ()
    next_seq: int = 0
    exposure_log_cursor: int = 0


@dataclass(frozen=True)
class TransformAction:
    post_id: str
    action: str  # downranked | removed | inserted | edited | deferred_released | expired
    original_position: int | None = None
    new_position: int | None = None
    deferred_target: int | None = None
    post: Post | None = None  # carried where replay needs the content
    fallback: bool = False


@dataclass(frozen=True)
class TransformedFeed:
    page: FeedPage
    actions: tuple[TransformAction, ...]


# --------------------------------------------------------------------------
# Sub-operations (also usable standalone)
# --------------------------------------------------------------------------

def release_due_deferred(state: SessionState, page: FeedPage):
    """Split off deferred posts whose target falls within this page's window.

    Returns ([(local_position, post), ...] ascending, new state).
    """
    window_end = state.consumed_count + len(page.posts)
    due = [e for e in state.deferred if e.target_position < window_end]
    rest = tuple(e for e in state.deferred if e.target_position >= window_end)
    due.sort()
    released = [(e.target_position - state.consumed_count, e.post) for e in due]
    return released, replace(state, deferred=rest)


def remove_posts(page: FeedPage, exclusion: PostPredicate):
    """Drop every post matching the predicate; survivors keep their order."""
    kept, removed = [], []
    for p in page.posts:
        (removed if exclusion.matches(p) else kept).append(p)
    return page.with_posts(kept), removed


def insert_posts(page: FeedPage, insertions) -> FeedPage:
    """Place each candidate at exactly its requested final index.

    insertions: list of (position, post), resolved in ascending position order.
    """
    existing = set(page.post_ids())
    working = list(page.posts)
    for k, (pos, post) in enumerate(sorted(insertions, key=lambda x: x[0])):
        if post.post_id in existing:
            raise DuplicatePostId(post.post_id)
        if pos > len(page.posts) + k:
            raise PositionOutOfRange(f"position {pos} exceeds page length {len(working)}")
        working.insert(pos, post)
        existing.add(post.post_id)
    return page.with_posts(working)


def _round_half_away(value: float) -> int:
    return int(math.floor(value + 0.5)) if value >= 0 else -int(math.floor(-value + 0.5))


def _substitute_tokens(text: str, mapping: dict[str, str]) -> str:
    # single pass: replacements are never themselves re-substituted
    if not mapping:
        return text
    lowered = {k.lower(): v for k, v in mapping.items()}
    pattern = re.compile(
        r"\b(" + "|".join(re.escape(k) for k in sorted(lowered, key=len, reverse=True)) + r")\b",
        re.IGNORECASE,
    )
    return pattern.sub(lambda m: lowered[m.group(0).lower()], text)


def apply_edits(post: Post, edits, rewriter=None):
    """Apply content edits in order; returns (post, fallback_happened).

    A remote-rewrite timeout leaves the text unchanged and sets the fallback
    flag; every other edit kind is local and total.
    """
    rewriter = rewriter or _default_rewriter
    fallback = False
    for edit in edits:
        edit.validate()
        if edit.kind == "text_substitution":
            post = replace(post, text=_substitute_tokens(post.text, edit.substitution))
        elif edit.kind == "metrics_set":
            m = post.metrics
            post = post.with_metrics(SocialMetrics(
                likes=edit.metrics.get("likes", m.likes),
                comments=edit.metrics.get("comments", m.comments),
                shares=edit.metrics.get("shares", m.shares),
            ))
        elif edit.kind == "metrics_scale":
            m = post.metrics
            post = post.with_metrics(SocialMetrics(
                likes=_round_half_away(m.likes * edit.factor),
                comments=_round_half_away(m.comments * edit.factor),
                shares=_round_half_away(m.shares * edit.factor),
            ))
        elif edit.kind == "attachment_replace":
            post = replace(post, attachments=tuple(
                Attachment(kind=a.kind, uri=edit.attachment_uri)
                if a.kind == edit.attachment_kind else a
                for a in post.attachments))
        elif edit.kind == "remote_rewrite":
            new_text = rewriter(post.text, edit.endpoint, edit.timeout_ms)
            if new_text is None:
                fallback = True
            else:
                post = replace(post, text=new_text)
    return post, fallback


# --------------------------------------------------------------------------
# The composed transform
# --------------------------------------------------------------------------

_PLACE_RELEASED, _PLACE_DOWNRANKED, _PLACE_INSERTED = 0, 1, 2


def apply_transform(page: FeedPage, state: SessionState, plan: TransformPlan,
                    scores: ScoreResult, candidates=(), rewriter=None):
    """Rewrite one feed page per the plan; pure, returns (TransformedFeed, state).

    Sub-operations compose in fixed order: release due deferred posts, classify
    targets, remove, down-rank (local reposition or defer), insert, edit.
    Placement indices (released, locally down-ranked, inserted) all name final
    page positions and are resolved ascending, so each lands exactly where
    requested. Posts released from the deferred queue are exempt from being
    down-ranked again but remain subject to removal and edits.
    """
    plan.validate()
    if scores.fallback:
        raise PlanInvalid("caller must pass through on scorer fallback, not transform")

    consumed = state.consumed_count
    score_map = scores.scores
    actions: list[TransformAction] = []
    seq = state.next_seq

    # 1. release
    released, state = release_due_deferred(state, page)
    released_ids = {p.post_id for _, p in released}

    # 2. classify (against the input page)
    original_index = {p.post_id: i for i, p in enumerate(page.posts)}
    targeted = {p.post_id for p in page.posts if plan.target_rule.matches(p, score_map)}

    # 3. remove
    working = list(page.posts)
    if plan.removal is not None:
        kept = []
        for p in working:
            if plan.removal.matches(p):
                actions.append(TransformAction(p.post_id, "removed",
                                               original_position=original_index[p.post_id],
                                               post=p))
            else:
                kept.append(p)
        working = kept
        surviving_released = []
        for pos, p in released:
            if plan.removal.matches(p):
                actions.append(TransformAction(p.post_id, "removed", post=p))
            else:
                surviving_released.append((pos, p))
        released = surviving_released

    # 4. down-rank: extract targets, compute global targets
    placements = []  # (global_target, category, seq, post, original_position)
    new_deferred = list(state.deferred)
    if plan.downrank is not None:
        still = []
        for p in working:
            if p.post_id in targeted and p.post_id not in released_ids:
                offset = plan.downrank.offset_for(score_map.get(p.post_id, 0.0))
                target = consumed + original_index[p.post_id] + offset
                placements.append((target, _PLACE_DOWNRANKED, seq, p,
                                   original_index[p.post_id]))
                seq += 1
            else:
                still.append(p)
        working = still

    for pos, p in released:
        placements.append((consumed + pos, _PLACE_RELEASED, seq, p, None))
        seq += 1

    # 5. insert pool candidates at the plan's final indices
    if plan.insertions is not None and candidates:
        page_ids = {p.post_id for p in page.posts} | released_ids
        usable = [c for c in candidates if c.post.post_id not in page_ids]
        for pos, cand in zip(sorted(plan.insertions.positions), usable):
            placements.append((consumed + pos, _PLACE_INSERTED, seq, cand.post, None))
            seq += 1

    placements.sort(key=lambda t: (t[0], t[1], t[2]))
    for target, category, _s, post, orig_pos in placements:
        local = target - consumed
        if 0 <= local <= len(working):
            working.insert(local, post)
            if category == _PLACE_DOWNRANKED:
                actions.append(TransformAction(post.post_id, "downranked",
                                               original_position=orig_pos,
                                               new_position=local))
            elif category == _PLACE_RELEASED:
                actions.append(TransformAction(post.post_id, "deferred_released",
                                               new_position=local, post=post))
            else:
                actions.append(TransformAction(post.post_id, "inserted",
                                               new_position=local, post=post))
        elif category == _PLACE_INSERTED and local > len(working):
            # plan asked for an index beyond the page: append (best effort)
            working.append(post)
            actions.append(TransformAction(post.post_id, "inserted",
                                           new_position=len(working) - 1, post=post))
        else:
            new_deferred.append(DeferredEntry(target, _s, post))
            if category == _PLACE_DOWNRANKED:
                actions.append(TransformAction(post.post_id, "downranked",
                                               original_position=orig_pos,
                                               deferred_target=target))

    # 6. edits on targeted posts still present (organic and released)
    if plan.edits:
        inserted_ids = {a.post_id for a in actions if a.action == "inserted"}
        for i, p in enumerate(working):
            if p.post_id in inserted_ids:
                continue
            if plan.target_rule.matches(p, score_map):
                edited, fb = apply_edits(p, plan.edits, rewriter=rewriter)
                if edited != p or fb:
                    working[i] = edited
                    actions.append(TransformAction(p.post_id, "edited",
                                                   original_position=original_index.get(p.post_id),
                                                   new_position=i, post=edited,
                                                   fallback=fb))

    out_page = page.with_posts(working)
    new_state = replace(
        state,
        consumed_count=consumed + len(working),
        deferred=tuple(sorted(new_deferred)),
        next_seq=seq,
    )
    return TransformedFeed(page=out_page, actions=tuple(actions)), new_state


def end_session(state: SessionState):
    """Drop deferred posts that never came due; they are logged as expired."""
    actions = tuple(TransformAction(e.post.post_id, "expired",
                                    deferred_target=e.target_position, post=e.post)
                    for e in state.deferred)
    return actions, replace(state, deferred=())


def replay_actions(page: FeedPage, actions) -> FeedPage:
    """Reconstruct the output page from the input page plus action records."""
    working = list(page.posts)
    by_id = {p.post_id: p for p in working}

    for a in actions:
        if a.action == "removed" and a.post_id in by_id:
            working = [p for p in working if p.post_id != a.post_id]
    extracted = {}
    for a in actions:
        if a.action == "downranked":
            for p in working:
                if p.post_id == a.post_id:
                    extracted[a.post_id] = p
            working = [p for p in working if p.post_id != a.post_id]

    placements = [a for a in actions
                  if a.new_position is not None
                  and a.action in ("downranked", "deferred_released", "inserted")]
    placements.sort(key=lambda a: a.new_position)
    for a in placements:
        post = a.post if a.post is not None else extracted[a.post_id]
        working.insert(a.new_position, post)

    for a in actions:
        if a.action == "edited":
            working = [a.post if p.post_id == a.post_id else p for p in working]
    return page.with_posts(working)
