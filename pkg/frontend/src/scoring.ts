/** Local keyword scorer: the in-extension counterpart of the backend's. */

const TOKEN_RE = /[\p{L}\p{N}_']+/gu;

export function tokenize(text: string): string[] {
  return text.toLowerCase().match(TOKEN_RE) ?? [];
}

/**
 * Additive whole-token match: each occurrence contributes its weight,
 * capped at 1. Matching is case-insensitive on word tokens.
 */
export function keywordScore(text: string, terms: Record<string, number>): number {
  const entries = Object.entries(terms);
  if (entries.length === 0) {
    return 0.0;
  }
  const lowered = new Map(entries.map(([t, w]) => [t.toLowerCase(), w]));
  let total = 0.0;
  for (const token of tokenize(text)) {
    const w = lowered.get(token);
    if (w !== undefined) {
      total += w;
    }
  }
  return Math.min(1.0, total);
}

export function scorePage(
  posts: { id: string; text: string }[],
  terms: Record<string, number>,
): Record<string, number> {
  const scores: Record<string, number> = {};
  for (const p of posts) {
    scores[p.id] = keywordScore(p.text, terms);
  }
  return scores;
}
