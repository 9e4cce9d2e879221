/**
 * Page-world entry point, loaded as a web-accessible resource (not a
 * content script) so it can override the page's own XMLHttpRequest.
 *
 * Every intercepted feed response is broadcast to the content script over
 * the namespaced message channel; the page resumes with whatever comes
 * back, or the original bytes once the deadline passes. If installation
 * fails the extension stays dormant and the page is untouched.
 */

import { PageBridge } from "./bridge.js";
import { installXhrOverride, type InterceptRule } from "./interceptor.js";
import { DEFAULT_CLIENT_DEADLINE_MS, MOCK_FORMAT_ID } from "./wire.js";

export const FEED_RULES: InterceptRule[] = [
  // feed endpoints only: auth and DM endpoints never match
  { pattern: /\/feed(\?|$)/, format_id: MOCK_FORMAT_ID, mode: "server" },
];

export function bootInjected(win: Window & typeof globalThis): (() => void) | null {
  try {
    const bridge = new PageBridge(win, DEFAULT_CLIENT_DEADLINE_MS + 100);
    return installXhrOverride(win, FEED_RULES, (rawText, url, rule) =>
      bridge.request(url, rule.format_id, rawText),
    );
  } catch {
    return null; // injection failure: dormant, page unmodified
  }
}

if (typeof window !== "undefined" && typeof XMLHttpRequest !== "undefined") {
  bootInjected(window);
}
