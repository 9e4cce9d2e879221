/**
 * In-page study widgets: survey cards at designated feed positions and
 * banners for diary dispatch / end-of-study notices.
 *
 * Rendering works against a narrow document interface so tests can drive
 * it without a browser DOM. Styling is deliberately study-distinct (the
 * cards should not be mistaken for platform content) with light and dark
 * variants. A render failure leaves the feed untouched.
 */

import type { Banner, SurveyInsertion } from "./wire.js";

export interface MinimalElement {
  className: string;
  textContent: string;
  children: MinimalElement[];
  dataset: Record<string, string>;
  appendChild(child: MinimalElement): void;
  insertBefore(child: MinimalElement, reference: MinimalElement | null): void;
}

export interface MinimalDocument {
  createElement(tag: string): MinimalElement;
}

export type Theme = "light" | "dark";

export type AnswerCallback = (cardId: string, answer: string, contextPostIds: string[]) => void;

export const CARD_CLASS = "feedlab-survey-card";
export const BANNER_CLASS = "feedlab-banner";

function cardClass(theme: Theme): string {
  return `${CARD_CLASS} ${CARD_CLASS}--${theme}`;
}

export function buildSurveyCard(
  doc: MinimalDocument,
  insertion: SurveyInsertion,
  theme: Theme,
  onAnswer: AnswerCallback,
): MinimalElement {
  const card = doc.createElement("aside");
  card.className = cardClass(theme);
  card.dataset.cardId = insertion.card_id;

  const question = doc.createElement("p");
  question.className = `${CARD_CLASS}__question`;
  question.textContent = insertion.question;
  card.appendChild(question);

  for (const option of insertion.scale) {
    const button = doc.createElement("button");
    button.className = `${CARD_CLASS}__option`;
    button.textContent = option;
    button.dataset.answer = option;
    (button as MinimalElement & { onclick?: () => void }).onclick = () =>
      onAnswer(insertion.card_id, option, insertion.context_post_ids);
    card.appendChild(button);
  }
  return card;
}

/**
 * Place each survey card at its designated feed position: position p is an
 * index into the post list (the card appears after the first p posts), so
 * the child index is offset by the cards already inserted before it.
 * Positions are resolved ascending so that offset is simply the count of
 * earlier cards.
 */
export function renderSurveyCards(
  doc: MinimalDocument,
  feed: MinimalElement,
  insertions: SurveyInsertion[],
  theme: Theme,
  onAnswer: AnswerCallback,
): MinimalElement[] {
  const rendered: MinimalElement[] = [];
  const ordered = [...insertions].sort((a, b) => a.position - b.position);
  try {
    for (const insertion of ordered) {
      const card = buildSurveyCard(doc, insertion, theme, onAnswer);
      const reference = feed.children[insertion.position + rendered.length] ?? null;
      feed.insertBefore(card, reference);
      rendered.push(card);
    }
  } catch {
    return rendered; // render failure: feed content itself stays untouched
  }
  return rendered;
}

export function renderBanner(
  doc: MinimalDocument,
  container: MinimalElement,
  banner: Banner,
  theme: Theme,
): MinimalElement {
  const el = doc.createElement("div");
  el.className = `${BANNER_CLASS} ${BANNER_CLASS}--${theme} ${BANNER_CLASS}--${banner.kind}`;
  el.dataset.kind = banner.kind;
  el.textContent = banner.text ?? "";
  container.insertBefore(el, container.children[0] ?? null);
  return el;
}

/** Stylesheet text for both variants; injected once per page. */
export const WIDGET_CSS = `
.${CARD_CLASS} {
  border: 2px solid #7c3aed;
  border-radius: 10px;
  padding: 12px;
  margin: 8px 0;
  background: #f5f3ff;
  color: #1e1b4b;
  animation: feedlab-pulse 1.2s ease-in-out 1;
}
.${CARD_CLASS}--dark {
  background: #2e1065;
  color: #ede9fe;
  border-color: #a78bfa;
}
.${CARD_CLASS}__option {
  margin: 2px;
  padding: 4px 10px;
  border-radius: 6px;
  cursor: pointer;
}
.${BANNER_CLASS} {
  padding: 10px;
  margin: 6px 0;
  border-left: 4px solid #7c3aed;
  background: #ede9fe;
  color: #1e1b4b;
}
.${BANNER_CLASS}--dark {
  background: #1e1b4b;
  color: #ede9fe;
}
@keyframes feedlab-pulse {
  0% { transform: scale(0.98); }
  50% { transform: scale(1.01); }
  100% { transform: scale(1.0); }
}
`;
