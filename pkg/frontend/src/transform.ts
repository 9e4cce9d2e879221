/**
 * Local-mode feed transform: the same algebra the backend applies, running
 * in-extension on the wire representation of a feed page.
 *
 * Sub-operations compose in fixed order: release due deferred posts,
 * classify targets, remove, down-rank (local reposition or defer), insert,
 * edit. Positions are counted over the session's cumulative consumed
 * stream: the post at local index i of a page sits at global position
 * consumed_count + i. A down-ranked post moves to global position
 * original + offset; if that lands beyond the current page it is parked in
 * the deferred queue and released when the consumed counter reaches it.
 */

import type { FeedDoc, WirePost } from "./wire.js";
import { tokenize } from "./scoring.js";

// -- plan document ----------------------------------------------------------

export interface PredicateSpec {
  text_any?: string[];
  author_in?: string[];
  post_id_in?: string[];
  attachment_kind?: string | null;
  min_likes?: number | null;
  match_all?: boolean;
}

export interface OffsetSpec {
  kind?: "fixed" | "score_based";
  fixed_offset?: number;
  scale?: number;
}

export interface EditSpec {
  kind:
    | "text_substitution"
    | "metrics_set"
    | "metrics_scale"
    | "attachment_replace"
    | "remote_rewrite";
  substitution?: Record<string, string>;
  metrics?: Record<string, number>;
  factor?: number;
  attachment_kind?: string;
  attachment_uri?: string;
  endpoint?: string;
  timeout_ms?: number;
}

export interface InsertionSpec {
  positions?: number[];
  source?: string;
}

export interface PlanDoc {
  plan_id?: string;
  version?: number;
  target?: { threshold?: number | null; predicate?: PredicateSpec | null };
  downrank?: OffsetSpec | null;
  removal?: PredicateSpec | null;
  insertions?: InsertionSpec | null;
  edits?: EditSpec[];
  scorer?: { kind?: string; terms?: Record<string, number> } | null;
  ema?: unknown;
}

// -- session state ----------------------------------------------------------

export interface DeferredEntry {
  target_position: number;
  seq: number;
  post: WirePost;
}

export interface TransformState {
  consumed_count: number;
  deferred: DeferredEntry[];
  next_seq: number;
}

export function freshState(): TransformState {
  return { consumed_count: 0, deferred: [], next_seq: 0 };
}

export interface TransformAction {
  post_id: string;
  action:
    | "downranked"
    | "removed"
    | "inserted"
    | "edited"
    | "deferred_released"
    | "expired";
  original_position: number | null;
  new_position: number | null;
  deferred_target: number | null;
  fallback: boolean;
}

export interface TransformResult {
  page: FeedDoc;
  actions: TransformAction[];
  state: TransformState;
}

// -- predicate and edit helpers ---------------------------------------------

function predicateMatches(spec: PredicateSpec, post: WirePost): boolean {
  if (spec.match_all) {
    return true;
  }
  const empty =
    !(spec.text_any?.length || spec.author_in?.length || spec.post_id_in?.length) &&
    spec.attachment_kind == null &&
    spec.min_likes == null;
  if (empty) {
    return false;
  }
  if (spec.text_any?.length) {
    const tokens = new Set(tokenize(post.text));
    if (!spec.text_any.some((t) => tokens.has(t.toLowerCase()))) {
      return false;
    }
  }
  if (spec.author_in?.length && !spec.author_in.includes(post.author)) {
    return false;
  }
  if (spec.post_id_in?.length && !spec.post_id_in.includes(post.id)) {
    return false;
  }
  if (spec.attachment_kind != null) {
    if (!post.attachments.some((a) => a.kind === spec.attachment_kind)) {
      return false;
    }
  }
  if (spec.min_likes != null && post.likes < spec.min_likes) {
    return false;
  }
  return true;
}

function targetMatches(
  plan: PlanDoc,
  post: WirePost,
  scores: Record<string, number>,
): boolean {
  const threshold = plan.target?.threshold;
  if (threshold != null) {
    const s = scores[post.id];
    if (s !== undefined && s >= threshold) {
      return true;
    }
  }
  const predicate = plan.target?.predicate;
  if (predicate && predicateMatches(predicate, post)) {
    return true;
  }
  return false;
}

function offsetFor(spec: OffsetSpec, score: number): number {
  if ((spec.kind ?? "fixed") === "fixed") {
    return spec.fixed_offset ?? 100;
  }
  return Math.max(1, Math.ceil((spec.scale ?? 100) * score));
}

function roundHalfAway(value: number): number {
  return value >= 0 ? Math.floor(value + 0.5) : -Math.floor(-value + 0.5);
}

function escapeRegExp(s: string): string {
  return s.replace(/[.*+?^${}()|[\]\\]/g, "\\$&");
}

/** Single-pass whole-token substitution; replacements are never re-substituted. */
export function substituteTokens(
  text: string,
  mapping: Record<string, string>,
): string {
  const entries = Object.entries(mapping);
  if (entries.length === 0) {
    return text;
  }
  const lowered = new Map(entries.map(([k, v]) => [k.toLowerCase(), v]));
  const keys = [...lowered.keys()].sort((a, b) => b.length - a.length);
  const pattern = new RegExp(
    `\\b(${keys.map(escapeRegExp).join("|")})\\b`,
    "gi",
  );
  return text.replace(pattern, (m) => lowered.get(m.toLowerCase()) ?? m);
}

/**
 * Apply content edits in order; returns the edited post and whether a
 * fallback happened. remote_rewrite is unavailable in local mode, so it
 * always falls back to no edit.
 */
export function applyEdits(
  post: WirePost,
  edits: EditSpec[],
): { post: WirePost; fallback: boolean } {
  let out = { ...post, attachments: post.attachments.map((a) => ({ ...a })) };
  let fallback = false;
  for (const edit of edits) {
    switch (edit.kind) {
      case "text_substitution":
        out = { ...out, text: substituteTokens(out.text, edit.substitution ?? {}) };
        break;
      case "metrics_set":
        out = {
          ...out,
          likes: edit.metrics?.likes ?? out.likes,
          comments: edit.metrics?.comments ?? out.comments,
          shares: edit.metrics?.shares ?? out.shares,
        };
        break;
      case "metrics_scale": {
        const factor = edit.factor ?? 1;
        out = {
          ...out,
          likes: roundHalfAway(out.likes * factor),
          comments: roundHalfAway(out.comments * factor),
          shares: roundHalfAway(out.shares * factor),
        };
        break;
      }
      case "attachment_replace":
        out = {
          ...out,
          attachments: out.attachments.map((a) =>
            a.kind === edit.attachment_kind
              ? { kind: a.kind, uri: edit.attachment_uri ?? a.uri }
              : a,
          ),
        };
        break;
      case "remote_rewrite":
        fallback = true;
        break;
    }
  }
  return { post: out, fallback };
}

// -- the composed transform -------------------------------------------------

const PLACE_RELEASED = 0;
const PLACE_DOWNRANKED = 1;
const PLACE_INSERTED = 2;

interface Placement {
  target: number;
  category: number;
  seq: number;
  post: WirePost;
  originalPosition: number | null;
}

function postsEqual(a: WirePost, b: WirePost): boolean {
  return JSON.stringify(a) === JSON.stringify(b);
}

export function applyTransform(
  page: FeedDoc,
  state: TransformState,
  plan: PlanDoc,
  scores: Record<string, number>,
  candidates: WirePost[] = [],
): TransformResult {
  const consumed = state.consumed_count;
  const actions: TransformAction[] = [];
  let seq = state.next_seq;
  const act = (
    postId: string,
    action: TransformAction["action"],
    fields: Partial<TransformAction> = {},
  ) =>
    actions.push({
      post_id: postId,
      action,
      original_position: null,
      new_position: null,
      deferred_target: null,
      fallback: false,
      ...fields,
    });

  // 1. release deferred posts whose target falls inside this page's window
  const windowEnd = consumed + page.posts.length;
  const due = state.deferred
    .filter((e) => e.target_position < windowEnd)
    .sort((a, b) => a.target_position - b.target_position || a.seq - b.seq);
  let released: [number, WirePost][] = due.map((e) => [
    e.target_position - consumed,
    e.post,
  ]);
  const releasedIds = new Set(released.map(([, p]) => p.id));
  let newDeferred = state.deferred.filter((e) => e.target_position >= windowEnd);

  // 2. classify targets against the input page
  const originalIndex = new Map(page.posts.map((p, i) => [p.id, i]));
  const targeted = new Set(
    page.posts.filter((p) => targetMatches(plan, p, scores)).map((p) => p.id),
  );

  // 3. remove
  let working = [...page.posts];
  if (plan.removal) {
    const kept: WirePost[] = [];
    for (const p of working) {
      if (predicateMatches(plan.removal, p)) {
        act(p.id, "removed", { original_position: originalIndex.get(p.id) ?? null });
      } else {
        kept.push(p);
      }
    }
    working = kept;
    const survivors: [number, WirePost][] = [];
    for (const [pos, p] of released) {
      if (predicateMatches(plan.removal, p)) {
        act(p.id, "removed");
      } else {
        survivors.push([pos, p]);
      }
    }
    released = survivors;
  }

  // 4. down-rank: extract targets, compute global target positions
  const placements: Placement[] = [];
  if (plan.downrank) {
    const still: WirePost[] = [];
    for (const p of working) {
      if (targeted.has(p.id) && !releasedIds.has(p.id)) {
        const offset = offsetFor(plan.downrank, scores[p.id] ?? 0.0);
        placements.push({
          target: consumed + (originalIndex.get(p.id) ?? 0) + offset,
          category: PLACE_DOWNRANKED,
          seq: seq++,
          post: p,
          originalPosition: originalIndex.get(p.id) ?? null,
        });
      } else {
        still.push(p);
      }
    }
    working = still;
  }

  for (const [pos, p] of released) {
    placements.push({
      target: consumed + pos,
      category: PLACE_RELEASED,
      seq: seq++,
      post: p,
      originalPosition: null,
    });
  }

  // 5. insert candidates at the plan's final indices
  if (plan.insertions && candidates.length > 0) {
    const pageIds = new Set([...page.posts.map((p) => p.id), ...releasedIds]);
    const usable = candidates.filter((c) => !pageIds.has(c.id));
    const positions = [...(plan.insertions.positions ?? [])].sort((a, b) => a - b);
    for (let i = 0; i < Math.min(positions.length, usable.length); i++) {
      placements.push({
        target: consumed + positions[i],
        category: PLACE_INSERTED,
        seq: seq++,
        post: usable[i],
        originalPosition: null,
      });
    }
  }

  placements.sort(
    (a, b) => a.target - b.target || a.category - b.category || a.seq - b.seq,
  );
  for (const pl of placements) {
    const local = pl.target - consumed;
    if (local >= 0 && local <= working.length) {
      working.splice(local, 0, pl.post);
      if (pl.category === PLACE_DOWNRANKED) {
        act(pl.post.id, "downranked", {
          original_position: pl.originalPosition,
          new_position: local,
        });
      } else if (pl.category === PLACE_RELEASED) {
        act(pl.post.id, "deferred_released", { new_position: local });
      } else {
        act(pl.post.id, "inserted", { new_position: local });
      }
    } else if (pl.category === PLACE_INSERTED && local > working.length) {
      // requested index beyond the page: append, best effort
      working.push(pl.post);
      act(pl.post.id, "inserted", { new_position: working.length - 1 });
    } else {
      newDeferred.push({ target_position: pl.target, seq: pl.seq, post: pl.post });
      if (pl.category === PLACE_DOWNRANKED) {
        act(pl.post.id, "downranked", {
          original_position: pl.originalPosition,
          deferred_target: pl.target,
        });
      }
    }
  }

  // 6. edits on targeted posts still present (organic and released)
  const edits = plan.edits ?? [];
  if (edits.length > 0) {
    const insertedIds = new Set(
      actions.filter((a) => a.action === "inserted").map((a) => a.post_id),
    );
    for (let i = 0; i < working.length; i++) {
      const p = working[i];
      if (insertedIds.has(p.id) || !targetMatches(plan, p, scores)) {
        continue;
      }
      const { post: edited, fallback } = applyEdits(p, edits);
      if (fallback || !postsEqual(edited, p)) {
        working[i] = edited;
        act(p.id, "edited", {
          original_position: originalIndex.get(p.id) ?? null,
          new_position: i,
          fallback,
        });
      }
    }
  }

  newDeferred = newDeferred.sort(
    (a, b) => a.target_position - b.target_position || a.seq - b.seq,
  );
  return {
    page: { ...page, posts: working },
    actions,
    state: {
      consumed_count: consumed + working.length,
      deferred: newDeferred,
      next_seq: seq,
    },
  };
}

/** Drop deferred posts that never came due; they are reported as expired. */
export function endSession(state: TransformState): {
  actions: TransformAction[];
  state: TransformState;
} {
  const actions: TransformAction[] = state.deferred.map((e) => ({
    post_id: e.post.id,
    action: "expired",
    original_position: null,
    new_position: null,
    deferred_target: e.target_position,
    fallback: false,
  }));
  return { actions, state: { ...state, deferred: [] } };
}
