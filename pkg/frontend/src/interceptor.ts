/**
 * Page-context XHR override: wraps the native open/send so responses from
 * matching feed endpoints can be rewritten before the page sees them.
 *
 * Scope restraint: requests that match no rule flow through the original
 * machinery untouched — their URL is compared, but their payload is never
 * read or modified. Fail-open: if the payload handler rejects or returns
 * nothing, the page receives the byte-identical original response.
 */

export interface InterceptRule {
  /** Matches only feed endpoints — never auth or DM endpoints. */
  pattern: RegExp;
  format_id: string;
  mode: "server" | "local";
}

/** Resolves with the payload to deliver; any rejection means pass-through. */
export type PayloadHandler = (
  rawText: string,
  url: string,
  rule: InterceptRule,
) => Promise<string>;

/* eslint-disable @typescript-eslint/no-explicit-any */
type AnyFn = (...args: any[]) => any;

interface XhrLike {
  readyState: number;
  status: number;
  responseText: string;
  onreadystatechange: AnyFn | null;
  addEventListener(type: string, cb: () => void): void;
  open: AnyFn;
  send: AnyFn;
  setRequestHeader?: AnyFn;
}

export interface XhrHost {
  XMLHttpRequest: { prototype: any };
}

interface RequestMeta {
  method: string;
  url: string;
  headers: Record<string, string>;
}

const META = "__feedlabMeta";

/**
 * Install the override on a window-like host. Returns an uninstall
 * function that restores the original prototype methods.
 */
export function installXhrOverride(
  win: XhrHost,
  rules: InterceptRule[],
  handler: PayloadHandler,
): () => void {
  const proto = win.XMLHttpRequest.prototype as XhrLike & Record<string, unknown>;
  const origOpen = proto.open;
  const origSend = proto.send;
  const origSetHeader = proto.setRequestHeader;

  proto.open = function (this: XhrLike & Record<string, unknown>, ...args: unknown[]) {
    this[META] = {
      method: String(args[0] ?? "GET"),
      url: String(args[1] ?? ""),
      headers: {},
    } satisfies RequestMeta;
    return origOpen.apply(this, args);
  };

  if (origSetHeader) {
    proto.setRequestHeader = function (
      this: XhrLike & Record<string, unknown>,
      name: string,
      value: string,
    ) {
      const meta = this[META] as RequestMeta | undefined;
      if (meta) {
        meta.headers[name] = value;
      }
      return origSetHeader.call(this, name, value);
    };
  }

  proto.send = function (this: XhrLike & Record<string, unknown>, ...args: unknown[]) {
    const meta = this[META] as RequestMeta | undefined;
    const rule = meta && rules.find((r) => r.pattern.test(meta.url));
    if (!meta || !rule) {
      return origSend.apply(this, args); // out of scope: untouched
    }

    const xhr = this;
    // divert the page's completion callback so delivery can wait for the
    // rewritten payload; earlier ready states are forwarded immediately
    let pageCallback = xhr.onreadystatechange;
    xhr.onreadystatechange = null; // detach from the native dispatcher
    Object.defineProperty(xhr, "onreadystatechange", {
      configurable: true,
      get: () => pageCallback,
      set: (cb) => {
        pageCallback = cb;
      },
    });

    let delivered = false;
    const fire = () => {
      if (pageCallback) {
        pageCallback.call(xhr);
      }
    };
    xhr.addEventListener("readystatechange", () => {
      if (xhr.readyState !== 4) {
        fire();
        return;
      }
      if (delivered) {
        return;
      }
      delivered = true;
      const original = xhr.responseText;
      Promise.resolve()
        .then(() => handler(original, meta.url, rule))
        .then(
          (modified) => (typeof modified === "string" ? modified : original),
          () => original, // fail-open
        )
        .then((finalText) => {
          if (finalText !== original) {
            try {
              Object.defineProperty(xhr, "responseText", {
                configurable: true,
                value: finalText,
              });
              Object.defineProperty(xhr, "response", {
                configurable: true,
                value: finalText,
              });
            } catch {
              // cannot shadow the accessor: deliver the original instead
            }
          }
          fire();
        });
    });
    return origSend.apply(this, args);
  };

  return () => {
    proto.open = origOpen;
    proto.send = origSend;
    if (origSetHeader) {
      proto.setRequestHeader = origSetHeader;
    }
  };
}
