/**
 * Service worker: on first install, open the backend's claim endpoint so
 * the persistent registration entry turns into a participant config.
 * Repeating the handshake is safe — the server answers idempotently.
 */

declare const chrome: {
  runtime: {
    onInstalled: { addListener(cb: (details: { reason: string }) => void): void };
  };
  tabs: { create(props: { url: string }): void };
};

const CLAIM_PAGE = "http://127.0.0.1:8400/v1/config";

if (typeof chrome !== "undefined" && chrome.runtime?.onInstalled) {
  chrome.runtime.onInstalled.addListener((details) => {
    if (details.reason === "install") {
      chrome.tabs.create({ url: CLAIM_PAGE });
    }
  });
}
