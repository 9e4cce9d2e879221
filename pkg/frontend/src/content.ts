/**
 * Content-script entry point: injects the page-world script, relays
 * intercepted payloads to the backend, renders survey cards and banners,
 * and keeps the event buffer flushing in the background.
 */

import { FeedlabClient } from "./client.js";
import type { KVStore } from "./state.js";
import { CARD_CLASS, WIDGET_CSS, renderSurveyCards, renderBanner, type Theme } from "./widgets.js";

declare const chrome: {
  runtime?: { getURL(path: string): string };
} | undefined;

const BACKEND_URL = "http://127.0.0.1:8400";

function localStorageStore(): KVStore {
  return {
    get: (key) => window.localStorage.getItem(key),
    set: (key, value) => window.localStorage.setItem(key, value),
    remove: (key) => window.localStorage.removeItem(key),
  };
}

function pageTheme(): Theme {
  return window.matchMedia?.("(prefers-color-scheme: dark)")?.matches
    ? "dark"
    : "light";
}

function injectPageScript(): void {
  if (typeof chrome === "undefined" || !chrome.runtime) {
    return;
  }
  const script = document.createElement("script");
  script.src = chrome.runtime.getURL("dist/injected.js");
  script.type = "module";
  (document.head ?? document.documentElement).appendChild(script);
}

function injectStyles(): void {
  if (document.querySelector(`style[data-feedlab]`)) {
    return;
  }
  const style = document.createElement("style");
  style.dataset.feedlab = "1";
  style.textContent = WIDGET_CSS;
  (document.head ?? document.documentElement).appendChild(style);
}

export async function bootContent(): Promise<FeedlabClient> {
  const client = new FeedlabClient(localStorageStore(), fetch.bind(window), {
    backendUrl: BACKEND_URL,
  });
  if (!client.state.config) {
    await client.claim();
  }
  if (!client.state.active) {
    return client; // dormant: not consented / kill switch / no entry
  }

  injectStyles();
  injectPageScript();
  client.attachBridge(window);
  client.flusher.start();

  // widgets follow each rerank outcome; the feed container is re-scanned
  // because the page rebuilds it after every response
  const observer = new MutationObserver(() => {
    const outcome = client.lastOutcome;
    const feed = document.getElementById("feed");
    if (!outcome || !feed || feed.querySelector(`.${CARD_CLASS}`)) {
      return;
    }
    renderSurveyCards(
      document as never,
      feed as never,
      outcome.surveyInsertions,
      pageTheme(),
      (cardId, answer, ctx) => client.bufferSurveyAnswer(cardId, answer, ctx),
    );
    for (const banner of outcome.banners) {
      renderBanner(document as never, document.body as never, banner, pageTheme());
    }
  });
  observer.observe(document.body, { childList: true, subtree: true });
  return client;
}

if (typeof document !== "undefined" && typeof chrome !== "undefined" && chrome?.runtime) {
  void bootContent();
}
