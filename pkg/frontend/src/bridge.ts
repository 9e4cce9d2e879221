/**
 * Message channel between the injected page script and the content script.
 *
 * Both worlds share the page's message bus, so every message carries a
 * study-specific namespace and a request id; the injected side broadcasts
 * each intercepted raw response and waits (bounded) for the matching
 * resume message. A missed deadline resolves to the original payload —
 * the page never blocks on the study infrastructure.
 */

export const NAMESPACE = "feedlab/v1";
export const MSG_INTERCEPTED = "intercepted";
export const MSG_RESUME = "resume";

export interface BridgeMessage {
  ns: typeof NAMESPACE;
  type: string;
  id: number;
  url?: string;
  format_id?: string;
  payload?: string;
}

export interface MessageBus {
  postMessage(message: unknown): void;
  addEventListener(type: "message", cb: (ev: { data: unknown }) => void): void;
  removeEventListener(type: "message", cb: (ev: { data: unknown }) => void): void;
}

export function isBridgeMessage(data: unknown): data is BridgeMessage {
  return (
    typeof data === "object" &&
    data !== null &&
    (data as BridgeMessage).ns === NAMESPACE &&
    typeof (data as BridgeMessage).type === "string" &&
    typeof (data as BridgeMessage).id === "number"
  );
}

/** Injected-script side: broadcast a payload, await the rewritten one. */
export class PageBridge {
  private nextId = 0;

  constructor(
    private bus: MessageBus,
    private deadlineMs: number,
  ) {}

  request(url: string, formatId: string, rawText: string): Promise<string> {
    const id = this.nextId++;
    return new Promise((resolve) => {
      let settled = false;
      const finish = (text: string) => {
        if (!settled) {
          settled = true;
          this.bus.removeEventListener("message", onMessage);
          clearTimeout(timer);
          resolve(text);
        }
      };
      const onMessage = (ev: { data: unknown }) => {
        const msg = ev.data;
        if (isBridgeMessage(msg) && msg.type === MSG_RESUME && msg.id === id) {
          finish(typeof msg.payload === "string" ? msg.payload : rawText);
        }
      };
      const timer = setTimeout(() => finish(rawText), this.deadlineMs);
      this.bus.addEventListener("message", onMessage);
      this.bus.postMessage({
        ns: NAMESPACE,
        type: MSG_INTERCEPTED,
        id,
        url,
        format_id: formatId,
        payload: rawText,
      } satisfies BridgeMessage);
    });
  }
}

/** Content-script side: answer each intercepted payload via the resolver. */
export function listenForIntercepted(
  bus: MessageBus,
  resolver: (msg: BridgeMessage) => Promise<string>,
): () => void {
  const onMessage = (ev: { data: unknown }) => {
    const msg = ev.data;
    if (!isBridgeMessage(msg) || msg.type !== MSG_INTERCEPTED) {
      return;
    }
    void resolver(msg)
      .catch(() => msg.payload ?? "")
      .then((payload) => {
        bus.postMessage({
          ns: NAMESPACE,
          type: MSG_RESUME,
          id: msg.id,
          payload,
        } satisfies BridgeMessage);
      });
  };
  bus.addEventListener("message", onMessage);
  return () => bus.removeEventListener("message", onMessage);
}
